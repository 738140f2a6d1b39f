#![no_main]
use budamaf::wrappers::WrapperRequest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(req) = WrapperRequest::from_slice(data) {
        let bytes = serde_json::to_vec(&req).unwrap();
        assert_eq!(WrapperRequest::from_slice(&bytes).unwrap(), req);
    }
});
