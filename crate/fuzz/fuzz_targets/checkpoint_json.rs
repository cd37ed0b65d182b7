//! Checkpoint decoding touches shape and finiteness validation on top of
//! serde, so feed it arbitrary JSON-ish text and require graceful errors.

#![no_main]

use libfuzzer_sys::fuzz_target;
use stochacq::model::Ensemble;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = Ensemble::from_json(text);
    }
});
