#![no_main]
use budamaf::protocol::{JobDetails, JobRequest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(req) = JobRequest::parse_slice(data) {
        // Accepted details must survive a second pass unchanged.
        let again = JobDetails::parse(req.kind, &req.details).expect("accepted details reparse");
        assert_eq!(again, req.typed);
    }
});
