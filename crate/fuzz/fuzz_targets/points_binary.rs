#![no_main]

use libfuzzer_sys::fuzz_target;
use pwl_moments::io::{decode_binary, write_binary};

fuzz_target!(|data: &[u8]| {
    if let Ok(x) = decode_binary(data) {
        let mut buf = Vec::new();
        write_binary(&mut buf, &x).unwrap();
        assert_eq!(buf, data);
    }
});
