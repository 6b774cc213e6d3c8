#![no_main]

use libfuzzer_sys::fuzz_target;
use secureafl::orchestrator::{read_metrics_csv, write_metrics_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok((columns, records)) = read_metrics_csv(data) {
        let mut buf = Vec::new();
        write_metrics_csv(&columns, &records, &mut buf).expect("parsed records write");
        let (c2, r2) = read_metrics_csv(buf.as_slice()).expect("written csv parses");
        assert_eq!(c2, columns);
        assert_eq!(r2.len(), records.len());
    }
});
