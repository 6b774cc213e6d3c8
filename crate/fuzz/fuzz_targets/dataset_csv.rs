#![no_main]

use libfuzzer_sys::fuzz_target;
use secureafl::taskbench::{Dataset, Task};

fuzz_target!(|data: &[u8]| {
    let Some((&tag, rest)) = data.split_first() else { return };
    let task = match tag % 3 {
        0 => Task::Regression,
        c => Task::Classification {
            classes: 2 + c as usize,
        },
    };
    if let Ok(ds) = Dataset::read_csv(rest, task) {
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).expect("parsed dataset writes");
        let again = Dataset::read_csv(buf.as_slice(), task).expect("written dataset parses");
        assert_eq!(again.len(), ds.len());
    }
});
