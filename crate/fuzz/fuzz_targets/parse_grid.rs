#![no_main]

use kahler_killing::verify::GridSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(g) = text.parse::<GridSpec>() {
            g.validate().expect("parsed grids validate");
        }
    }
});
