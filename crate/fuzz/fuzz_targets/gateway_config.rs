#![no_main]
use budamaf::gateway::GatewayConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = GatewayConfig::parse(text);
});
