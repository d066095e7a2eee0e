#![no_main]

use libfuzzer_sys::fuzz_target;
use pasurf_cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        if cfg.validate().is_ok() {
            let _ = cfg.model_config().num_params();
            assert_eq!(RunConfig::parse(&cfg.to_json()).expect("re-parse"), cfg);
        }
    }
});
