#![no_main]

use libfuzzer_sys::fuzz_target;
use pasurf_core::sampling::{parse_index_file, write_index_file};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(idx) = parse_index_file(text) {
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(parse_index_file(&write_index_file(&idx)).expect("re-parse"), idx);
    }
});
