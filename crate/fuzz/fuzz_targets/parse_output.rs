#![no_main]

use judgerl::rewards::{format_reward, parse_output, ParseFailure, VerdictForm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // One token per byte, covering the whole vocabulary and a few ids past it.
    let tokens: Vec<u32> = data.iter().map(|&b| u32::from(b % 64)).collect();
    let v = parse_output(&tokens);
    assert_eq!(v.label.is_some(), v.failure == ParseFailure::None);
    for form in [VerdictForm::Rl, VerdictForm::Sft] {
        let r = v.require(form);
        if format_reward(&r, form) == 1.0 {
            assert_eq!(r.form, Some(form));
        }
    }
});
