#![no_main]

use libfuzzer_sys::fuzz_target;
use pwl_moments::MomentTriple;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(m) = MomentTriple::from_json(s) {
        assert_eq!(MomentTriple::from_json(&m.to_json()).unwrap(), m);
    }
});
