#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = vqgb::datasets::parse_idx(data) {
        let _ = ds.len();
    }
});
