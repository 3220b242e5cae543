#![no_main]

use judgerl_cli::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = ExperimentConfig::from_json(text) {
        assert_eq!(
            ExperimentConfig::from_json(&config.canonical_json()).expect("canonical form parses"),
            config
        );
    }
});
