//! Gateway configuration file (TOML).
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! timeout_ms = 5000
//! principals = "principals.toml"
//! job_log = "jobs.ndjson"
//! audit_log = "audit.ndjson"
//!
//! [[providers]]
//! provider_id = "EU-1"
//! region = "eu"
//! capacity_machines = 8
//! price_storage = 0.02
//!
//! [[instances]]
//! component = "offloading_apis"
//! instance_id = "off-1"
//! endpoint = "local"
//!
//! [[wrappers]]
//! wrapper_id = "kv-remote"
//! kind = "key_value"
//! endpoint = "http://127.0.0.1:9100"
//!
//! [offload]
//! q_high = 64
//! ```
//!
//! Components without an `[[instances]]` entry get one in-process instance.
//! `BUDAMAF_PORT` overrides the port of `listen`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::offload::OffloadConfig;
use crate::protocol::ComponentName;
use crate::sim::ProviderDescriptor;
use crate::wrappers::StoreKind;

pub const ENV_PORT: &str = "BUDAMAF_PORT";
pub const ENV_CONFIG: &str = "BUDAMAF_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceConfig {
    pub component: ComponentName,
    pub instance_id: String,
    /// `local` for an in-process instance, otherwise the component's base URL.
    #[serde(default = "local")]
    pub endpoint: String,
}

fn local() -> String {
    "local".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrapperConfig {
    pub wrapper_id: String,
    pub kind: StoreKind,
    pub endpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub listen: String,
    /// Per-dispatch timeout before redirecting to another instance.
    pub timeout_ms: u64,
    /// Period of the health probe over suspect instances; 0 disables it.
    pub probe_period_ms: u64,
    /// Period of the replication sync loop; 0 disables it.
    pub sync_period_ms: u64,
    pub principals: Option<PathBuf>,
    pub job_log: Option<PathBuf>,
    pub audit_log: Option<PathBuf>,
    pub policy_file: Option<PathBuf>,
    /// Register the built-in key_value, document and tabular wrappers.
    pub local_wrappers: bool,
    pub providers: Vec<ProviderDescriptor>,
    pub instances: Vec<InstanceConfig>,
    pub wrappers: Vec<WrapperConfig>,
    pub offload: OffloadConfig,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            listen: "127.0.0.1:8080".into(),
            timeout_ms: 5000,
            probe_period_ms: 1000,
            sync_period_ms: 200,
            principals: None,
            job_log: None,
            audit_log: None,
            policy_file: None,
            local_wrappers: true,
            providers: Vec::new(),
            instances: Vec::new(),
            wrappers: Vec::new(),
            offload: OffloadConfig::default(),
        }
    }
}

impl GatewayConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: GatewayConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.principals, &mut cfg.job_log, &mut cfg.audit_log, &mut cfg.policy_file].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.listen_addr()?;
        if self.timeout_ms == 0 {
            return Err(Error::Config("timeout_ms must be positive".into()));
        }
        if self.instances.iter().any(|i| i.component == ComponentName::CoreGateway) {
            return Err(Error::Config("the Core is not a dispatch target".into()));
        }
        Ok(())
    }

    pub fn listen_addr(&self) -> Result<SocketAddr> {
        self.listen.parse().map_err(|e| Error::Config(format!("listen `{}`: {e}", self.listen)))
    }

    /// Applies the port override from the environment.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(port) = std::env::var(ENV_PORT) {
            let port: u16 = port.parse().map_err(|_| Error::Config(format!("{ENV_PORT}={port} is not a port")))?;
            let mut addr = self.listen_addr()?;
            addr.set_port(port);
            self.listen = addr.to_string();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(GatewayConfig::parse("").unwrap(), GatewayConfig::default());
    }

    #[test]
    fn documented_example_parses() {
        let text = r#"
listen = "0.0.0.0:9000"
timeout_ms = 250
principals = "principals.toml"

[[providers]]
provider_id = "EU-1"
region = "eu"
capacity_machines = 8
price_storage = 0.02

[[instances]]
component = "offloading_apis"
instance_id = "off-1"

[[wrappers]]
wrapper_id = "kv-remote"
kind = "key_value"
endpoint = "http://127.0.0.1:9100"

[offload]
q_high = 16
"#;
        let cfg = GatewayConfig::parse(text).unwrap();
        assert_eq!(cfg.timeout_ms, 250);
        assert_eq!(cfg.offload.q_high, 16);
        assert_eq!(cfg.offload.max_queued_writes, OffloadConfig::default().max_queued_writes);
        assert_eq!(cfg.instances[0].endpoint, "local");
        assert_eq!(cfg.providers[0].capacity_machines, 8);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for t in ["listen = \"nowhere\"", "timeout_ms = 0", "bogus = 1", "[[instances]]\ncomponent = \"core\"\ninstance_id = \"c\""] {
            assert!(matches!(GatewayConfig::parse(t), Err(Error::Config(_))), "{t}");
        }
    }
}
