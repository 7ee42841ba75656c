//! Fuzz the `--set key=value` override parser against a default document.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = std::str::from_utf8(data) else { return };
    let base = hindsight::config::RunConfig::default()
        .to_toml_string()
        .expect("default config renders");
    let mut doc: toml::Value = toml::from_str(&base).expect("default config is valid TOML");
    // Overrides may be rejected, but must never panic or corrupt the document
    // into something that cannot be rendered.
    if hindsight::config::apply_override(&mut doc, spec).is_ok() {
        let _ = toml::to_string(&doc).expect("patched document still renders");
    }
});
