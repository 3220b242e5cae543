#![no_main]

use judgerl::training::TrainState;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(state) = TrainState::from_json(text) {
        let _ = state.policy();
        let _ = state.check_resumable(state.role, &state.config_hash);
    }
});
