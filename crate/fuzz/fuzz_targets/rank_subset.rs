//! The `all` / `top:F` / `bottom:F` subset mini-grammar parses untrusted
//! command-line and config text.

#![no_main]

use libfuzzer_sys::fuzz_target;
use stochacq::diagnostics::RankSubset;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = text.parse::<RankSubset>();
    }
});
