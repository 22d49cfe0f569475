#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = kahler_killing::pipeline::parse_config(text) {
            cfg.validate().expect("parsed configs validate");
        }
    }
});
