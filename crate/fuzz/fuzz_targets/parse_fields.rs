#![no_main]

use libfuzzer_sys::fuzz_target;
use pasurf_core::pointcloud::{parse_drag, parse_pressure, parse_velocity};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = parse_pressure(text, "pressure.txt") {
        assert!(p.iter().all(|v| v.is_finite()));
    }
    if let Ok(v) = parse_velocity(text, "velocity.txt") {
        assert!(v.iter().flatten().all(|c| c.is_finite()));
    }
    if let Ok(d) = parse_drag(text, "cd.txt") {
        assert!(d.is_finite());
    }
});
