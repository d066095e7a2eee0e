#![no_main]

use libfuzzer_sys::fuzz_target;
use pasurf_core::pointcloud::Manifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = Manifest::parse(text) {
        let again = Manifest::parse(&m.to_json()).expect("re-parse");
        assert_eq!(again.samples.len(), m.samples.len());
        for e in &m.samples {
            let _ = m.split_of(e);
        }
    }
});
