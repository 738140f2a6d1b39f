use std::path::Path;

use budamaf::gateway::{GatewayConfig, PrincipalRegistry};

#[test]
fn shipped_example_config_loads() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config");
    let cfg = GatewayConfig::load(&dir.join("gateway.example.toml")).unwrap();
    assert_eq!(cfg.providers.len(), 2);
    let principals = cfg.principals.as_deref().expect("principals path");
    assert!(principals.is_absolute() || principals.starts_with(&dir));
    let reg = PrincipalRegistry::load(principals).unwrap();
    assert_eq!(reg.to_toml().matches("[[principal]]").count(), 3);
}

#[tokio::test]
async fn gateway_starts_from_the_example_config() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/gateway.example.toml");
    let gw = budamaf::Gateway::from_config_file(&path).await.unwrap();
    assert_eq!(gw.config().listen_addr().unwrap().port(), 8080);
}
