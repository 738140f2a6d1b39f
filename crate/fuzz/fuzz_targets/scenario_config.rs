#![no_main]
use budamaf::sim::ScenarioConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = ScenarioConfig::parse(text);
});
