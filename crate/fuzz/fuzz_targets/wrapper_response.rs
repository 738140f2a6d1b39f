#![no_main]
use budamaf::wrappers::WrapperResponse;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = WrapperResponse::from_slice(data);
});
