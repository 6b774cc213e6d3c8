#![no_main]

use libfuzzer_sys::fuzz_target;
use secureafl::orchestrator::{read_trace_csv, theory_probe, ProbeSettings};

fuzz_target!(|data: &[u8]| {
    if let Ok(traces) = read_trace_csv(data) {
        let _ = theory_probe(&traces, ProbeSettings::new(10));
    }
});
