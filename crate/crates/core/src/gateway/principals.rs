//! Principal registry: who may talk to the gateway, with which token and roles.
//!
//! File format (TOML):
//!
//! ```toml
//! [[principal]]
//! principal_id = "app1"
//! token = "s3cret"
//! roles = ["application"]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::protocol::{Credentials, Role};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrincipalEntry {
    pub principal_id: String,
    pub token: String,
    #[serde(default)]
    pub roles: BTreeSet<Role>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct PrincipalFile {
    #[serde(default)]
    principal: Vec<PrincipalEntry>,
}

#[derive(Debug, Clone, Default)]
pub struct PrincipalRegistry {
    entries: BTreeMap<String, PrincipalEntry>,
}

impl PrincipalRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: PrincipalFile = toml::from_str(text).map_err(|e| Error::Config(format!("principal registry: {e}")))?;
        let mut reg = PrincipalRegistry::new();
        for p in file.principal {
            reg.insert(p)?;
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        let file = PrincipalFile { principal: self.entries.values().cloned().collect() };
        toml::to_string(&file).expect("principal registry serializes")
    }

    pub fn insert(&mut self, p: PrincipalEntry) -> Result<()> {
        if p.principal_id.trim().is_empty() || p.token.is_empty() {
            return Err(Error::Config("principal_id and token must be non-empty".into()));
        }
        if self.entries.contains_key(&p.principal_id) {
            return Err(Error::DuplicateId(p.principal_id));
        }
        self.entries.insert(p.principal_id.clone(), p);
        Ok(())
    }

    /// Convenience for fixtures.
    pub fn with(mut self, principal_id: &str, token: &str, roles: &[Role]) -> Self {
        self.insert(PrincipalEntry {
            principal_id: principal_id.into(),
            token: token.into(),
            roles: roles.iter().copied().collect(),
        })
        .expect("fixture principal is valid");
        self
    }

    pub fn contains(&self, principal_id: &str) -> bool {
        self.entries.contains_key(principal_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Verifies the token and returns the credentials with the registry's
    /// roles; client-supplied roles are discarded.
    pub fn authenticate(&self, claimed: &Credentials) -> Result<Credentials> {
        let fail = || Error::AuthenticationFailed(format!("bad credentials for `{}`", claimed.principal_id));
        let entry = self.entries.get(&claimed.principal_id).ok_or_else(fail)?;
        // Compare digests so the comparison time does not depend on the
        // length of the common prefix.
        if codec::digest(entry.token.as_bytes()) != codec::digest(claimed.token.as_bytes()) {
            return Err(fail());
        }
        Ok(Credentials {
            principal_id: entry.principal_id.clone(),
            token: claimed.token.clone(),
            roles: entry.roles.clone(),
        })
    }
}

/// Parses an HTTP `Authorization: Basic base64(principal:token)` header value.
pub fn parse_basic_auth(header: &str) -> Result<Credentials> {
    let bad = |m: &str| Error::AuthenticationFailed(m.to_owned());
    let (scheme, rest) = header.trim().split_once(' ').ok_or_else(|| bad("expected `Basic <credentials>`"))?;
    if !scheme.eq_ignore_ascii_case("basic") {
        return Err(bad("only the Basic scheme is supported"));
    }
    let raw = base64::engine::general_purpose::STANDARD
        .decode(rest.trim())
        .map_err(|_| bad("credentials are not base64"))?;
    let text = String::from_utf8(raw).map_err(|_| bad("credentials are not UTF-8"))?;
    let (principal, token) = text.split_once(':').ok_or_else(|| bad("expected principal:token"))?;
    if principal.is_empty() {
        return Err(bad("empty principal"));
    }
    Ok(Credentials::new(principal, token))
}

/// Inverse of [`parse_basic_auth`].
pub fn basic_auth_header(principal_id: &str, token: &str) -> String {
    format!("Basic {}", base64::engine::general_purpose::STANDARD.encode(format!("{principal_id}:{token}")))
}
