//! Fuzz the run-configuration TOML decoder and its validators.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = hindsight::config::RunConfig::from_toml_str(text) {
        // Validation may reject, but must not panic.
        let _ = cfg.validate();
        // A config that deserialized must serialize and parse back.
        if let Ok(rendered) = cfg.to_toml_string() {
            hindsight::config::RunConfig::from_toml_str(&rendered)
                .expect("rendered config parses back");
        }
    }
});
