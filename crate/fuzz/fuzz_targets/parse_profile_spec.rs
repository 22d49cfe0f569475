#![no_main]

use kahler_killing::profiles::ProfileSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = serde_json::from_slice::<ProfileSpec>(data) {
        if let Ok(p) = spec.build() {
            let iv = p.interval;
            assert!(p.q(iv.tau_star) > 0.0);
        }
    }
});
