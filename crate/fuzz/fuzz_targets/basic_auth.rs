#![no_main]
use budamaf::gateway::{basic_auth_header, parse_basic_auth};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|header: &str| {
    if let Ok(c) = parse_basic_auth(header) {
        let back = parse_basic_auth(&basic_auth_header(&c.principal_id, &c.token)).unwrap();
        assert_eq!((back.principal_id, back.token), (c.principal_id, c.token));
    }
});
