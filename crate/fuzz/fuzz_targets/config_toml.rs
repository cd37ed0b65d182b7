//! Experiment configs come from user-written TOML. Parsing plus the
//! follow-on policy validation must never panic on hostile input.

#![no_main]

use libfuzzer_sys::fuzz_target;
use stochacq_cli::Config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(config) = toml::from_str::<Config>(text) else {
        return;
    };
    let _ = config.loop_.policy();
    let _ = config.hash();
});
