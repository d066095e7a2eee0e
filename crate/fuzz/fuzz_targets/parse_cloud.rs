#![no_main]

use libfuzzer_sys::fuzz_target;
use pasurf_core::pointcloud::{parse_cloud, write_cloud, Role};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for role in [Role::Surface, Role::Volume] {
        if let Ok(cloud) = parse_cloud(text, "fuzz", role) {
            // Anything accepted must survive a write/parse round trip.
            let again = parse_cloud(&write_cloud(&cloud), "fuzz", role).expect("re-parse");
            assert_eq!(again, cloud);
        }
    }
});
