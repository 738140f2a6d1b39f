//! Client configuration and credentials.
//!
//! ```toml
//! gateway_url = "http://127.0.0.1:8080/"
//! credentials_path = "/home/me/.config/budamaf/credentials.toml"
//! output = "plain"
//! ```
//!
//! The credentials file holds `principal_id` and `token`. Alternatively
//! `BUDAMAF_PRINCIPAL` and `BUDAMAF_TOKEN` supply them.

use std::path::{Path, PathBuf};

use budamaf::protocol::Credentials;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const ENV_CLI_CONFIG: &str = "BUDAMAF_CLI_CONFIG";
pub const ENV_PRINCIPAL: &str = "BUDAMAF_PRINCIPAL";
pub const ENV_TOKEN: &str = "BUDAMAF_TOKEN";
pub const DEFAULT_URL: &str = "http://127.0.0.1:8080/";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    #[default]
    Plain,
    Json,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub gateway_url: String,
    pub credentials_path: Option<PathBuf>,
    pub output: Output,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig { gateway_url: DEFAULT_URL.to_owned(), credentials_path: None, output: Output::Plain }
    }
}

impl CliConfig {
    /// `$HOME/.config/budamaf/cli.toml`.
    pub fn default_path() -> Option<PathBuf> {
        std::env::var_os("HOME").map(|h| Path::new(&h).join(".config/budamaf/cli.toml"))
    }

    /// Reads `explicit`, else the file named by the environment, else the
    /// default path if it exists, else the defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self, CliError> {
        let path = explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(ENV_CLI_CONFIG).map(PathBuf::from));
        let path = match path {
            Some(p) => p,
            None => match Self::default_path().filter(|p| p.exists()) {
                Some(p) => p,
                None => return Ok(CliConfig::default()),
            },
        };
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Base URL with exactly one trailing slash.
    pub fn base_url(&self) -> String {
        format!("{}/", self.gateway_url.trim_end_matches('/'))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CredentialsFile {
    principal_id: String,
    token: String,
}

/// Credentials from the file if one is configured, else from the environment.
pub fn load_credentials(path: Option<&Path>) -> Result<Credentials, CliError> {
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
        // The parse error could quote the token, so it is not passed on.
        let f: CredentialsFile = toml::from_str(&text)
            .map_err(|_| CliError::Usage(format!("{}: expected `principal_id` and `token`", p.display())))?;
        return Ok(Credentials::new(f.principal_id, f.token));
    }
    match (std::env::var(ENV_PRINCIPAL), std::env::var(ENV_TOKEN)) {
        (Ok(p), Ok(t)) => Ok(Credentials::new(p, t)),
        _ => Err(CliError::Usage(format!(
            "no credentials: pass --credentials, set credentials_path, or set {ENV_PRINCIPAL} and {ENV_TOKEN}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let c = CliConfig { gateway_url: "http://h:1".into(), credentials_path: Some("/c.toml".into()), output: Output::Json };
        let back: CliConfig = toml::from_str(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.base_url(), "http://h:1/");
        assert_eq!(toml::from_str::<CliConfig>("").unwrap(), CliConfig::default());
    }

    #[test]
    fn malformed_credentials_do_not_leak_the_token() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "principal_id = \"a\"\ntoken = \"hunter2\"\nextra = 1\n").unwrap();
        let err = load_credentials(Some(&p)).unwrap_err();
        assert!(!format!("{err:?}").contains("hunter2"));
    }
}
