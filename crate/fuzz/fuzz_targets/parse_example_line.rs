#![no_main]

use judgerl::data::parse_example_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(example) = parse_example_line(line) {
        let _ = example.validate(2);
        let again = serde_json::to_string(&example).expect("parsed example serializes");
        assert_eq!(parse_example_line(&again).expect("round trip"), example);
    }
});
