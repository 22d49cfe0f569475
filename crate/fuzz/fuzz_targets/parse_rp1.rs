#![no_main]

use kahler_killing::Rp1;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(p) = text.parse::<Rp1>() {
            let back: Rp1 = p.to_string().parse().expect("display parses");
            assert_eq!(back, p);
        }
        let _ = serde_json::from_str::<Rp1>(text);
    }
});
