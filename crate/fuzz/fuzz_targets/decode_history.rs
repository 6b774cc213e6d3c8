#![no_main]

use libfuzzer_sys::fuzz_target;
use secureafl::history::HistoryStore;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(store) = HistoryStore::from_json(text) {
        let json = store.to_json().expect("decoded store encodes");
        let again = HistoryStore::from_json(&json).expect("encoded store decodes");
        assert_eq!(again.to_json().unwrap(), json);
    }
});
