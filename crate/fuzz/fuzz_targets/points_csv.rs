#![no_main]

use libfuzzer_sys::fuzz_target;
use pwl_moments::io::{decode_csv, write_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(x) = decode_csv(data) {
        assert!(x.iter().all(|v| v.is_finite()));
        let mut buf = Vec::new();
        write_csv(&mut buf, &x).unwrap();
        assert_eq!(decode_csv(&buf).unwrap(), x);
    }
});
