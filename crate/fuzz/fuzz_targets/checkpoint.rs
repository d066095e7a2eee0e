#![no_main]

use libfuzzer_sys::fuzz_target;
use pasurf_core::checkpoint::AnyModel;

fuzz_target!(|data: &[u8]| {
    // Decoding validates the header against the config before allocating,
    // so hostile sizes must fail cleanly rather than abort.
    let _ = AnyModel::decode(data);
});
