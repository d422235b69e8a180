#![no_main]

use libfuzzer_sys::fuzz_target;
use pwl_moments::PwlCurve;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(c) = PwlCurve::from_json(s) {
        // Anything accepted must survive a round trip unchanged.
        assert_eq!(PwlCurve::from_json(&c.to_json()).unwrap(), c);
    }
});
