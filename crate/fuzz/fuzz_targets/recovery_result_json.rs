#![no_main]

use libfuzzer_sys::fuzz_target;
use pwl_moments::recover::RecoveryResult;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let _ = RecoveryResult::from_json(s);
});
