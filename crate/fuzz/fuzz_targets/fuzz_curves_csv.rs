//! Fuzz the learning-curve CSV decoder; parsed rows must round-trip exactly.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = hindsight::io::parse_curves_csv(text) {
        let rendered = hindsight::io::write_curves_csv(&rows);
        let again = hindsight::io::parse_curves_csv(&rendered).expect("rendered curves parse back");
        assert_eq!(rows, again, "curve rows must round-trip exactly");
    }
});
