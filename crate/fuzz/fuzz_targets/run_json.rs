#![no_main]

use libfuzzer_sys::fuzz_target;
use secureafl_cli::manifest::RunManifest;
use secureafl_cli::sweep::Summary;

// summary.json and manifest.json as read back by `compare` and `probe`
fuzz_target!(|data: &[u8]| {
    let _ = serde_json::from_slice::<Summary>(data);
    let _ = serde_json::from_slice::<RunManifest>(data);
});
