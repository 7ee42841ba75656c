//! Fuzz the replay-buffer dump CSV decoder.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = hindsight::io::parse_buffer_dump(text);
});
