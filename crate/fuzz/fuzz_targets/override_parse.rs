#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok((key, value)) = vqgb::config::parse_override(text) {
            let mut cfg = vqgb::config::ExperimentConfig::default();
            let _ = cfg.apply_overrides(&[format!("{key}={value}")]);
        }
    }
});
