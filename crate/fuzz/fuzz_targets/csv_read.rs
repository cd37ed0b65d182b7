//! Dataset CSV ingestion must reject malformed input with an error, never
//! a panic. The first input byte picks the schema (odd = with group column)
//! so both column layouts get exercised.

#![no_main]

use libfuzzer_sys::fuzz_target;
use stochacq::datasets::{read_csv, CsvSchema};

fuzz_target!(|data: &[u8]| {
    let Some((pick, body)) = data.split_first() else {
        return;
    };
    let schema = CsvSchema {
        label_column: "label".to_string(),
        group_column: (pick % 2 == 1).then(|| "group".to_string()),
    };
    let _ = read_csv(body, &schema, "fuzz");
});
