#![no_main]
use budamaf::security::envelope::Envelope;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // The format has no slack: whatever decodes re-encodes to the same bytes.
    if let Ok(env) = Envelope::decode(data) {
        assert_eq!(env.encode().unwrap(), data);
    }
});
