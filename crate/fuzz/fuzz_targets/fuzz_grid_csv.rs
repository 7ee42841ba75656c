//! Fuzz the grid-CSV decoder; parsed grids must round-trip exactly.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((spec, dist, sigma)) = hindsight::io::parse_grid_csv(text) {
        let rendered = hindsight::io::write_grid_csv(&spec, &dist, sigma);
        let (spec2, dist2, sigma2) =
            hindsight::io::parse_grid_csv(&rendered).expect("rendered grid parses back");
        assert_eq!((spec.m, spec.n), (spec2.m, spec2.n));
        assert_eq!(dist.values, dist2.values, "grid values must round-trip exactly");
        assert!(sigma == sigma2 || (sigma.is_nan() && sigma2.is_nan()));
    }
});
