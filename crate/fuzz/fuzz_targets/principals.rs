#![no_main]
use budamaf::gateway::PrincipalRegistry;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(reg) = PrincipalRegistry::parse(text) {
        PrincipalRegistry::parse(&reg.to_toml()).expect("serialized registry reparses");
    }
});
