//! Fuzz the goal-sample CSV decoder; parsed samples must round-trip exactly.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(samples) = hindsight::io::parse_samples_csv(text) {
        let rendered = hindsight::io::write_samples_csv(&samples);
        let again =
            hindsight::io::parse_samples_csv(&rendered).expect("rendered samples parse back");
        assert_eq!(samples, again, "samples must round-trip exactly");
    }
});
