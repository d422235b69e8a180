#![no_main]

use libfuzzer_sys::fuzz_target;
use pwl_moments::estimate::MomentAccumulator;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(acc) = MomentAccumulator::from_json(s) {
        let _ = acc.finalize(0.5);
        assert_eq!(MomentAccumulator::from_json(&acc.to_json()).unwrap(), acc);
    }
});
