//! Fuzz the binary network-checkpoint decoder: arbitrary bytes must parse or
//! fail cleanly, and anything that parses must survive a re-encode round trip.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(nets) = hindsight::io::decode_networks(data) {
        let pairs: Vec<(&str, &hindsight::nn::Mlp)> =
            nets.iter().map(|(name, net)| (name.as_str(), net)).collect();
        let bytes = hindsight::io::encode_networks(&pairs);
        let again = hindsight::io::decode_networks(&bytes).expect("re-encoded checkpoint parses");
        assert_eq!(nets, again, "canonical encoding must round-trip");
    }
});
