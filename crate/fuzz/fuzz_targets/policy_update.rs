#![no_main]
use budamaf::security::PolicyUpdate;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(doc) = serde_json::from_slice::<serde_json::Value>(data) else { return };
    let _ = PolicyUpdate::parse(&doc);
});
