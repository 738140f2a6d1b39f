use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Application,
    Admin,
    SecurityAdmin,
    AnalyticsModule,
}

/// Initiator credentials carried by every job.
///
/// `roles` as supplied by a client are advisory; the gateway replaces them
/// with the roles from its principal registry once the token is verified.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credentials {
    pub principal_id: String,
    pub token: String,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub roles: BTreeSet<Role>,
}

impl Credentials {
    pub fn new(principal_id: impl Into<String>, token: impl Into<String>) -> Self {
        Credentials { principal_id: principal_id.into(), token: token.into(), roles: BTreeSet::new() }
    }

    pub fn with_roles(mut self, roles: impl IntoIterator<Item = Role>) -> Self {
        self.roles.extend(roles);
        self
    }

    pub fn has_role(&self, role: Role) -> bool {
        self.roles.contains(&role)
    }

    pub fn is_admin(&self) -> bool {
        self.has_role(Role::Admin)
    }

    /// Same credentials with the secret stripped, for logs and views.
    pub fn redacted(&self) -> RedactedCredentials {
        RedactedCredentials { principal_id: self.principal_id.clone(), roles: self.roles.clone() }
    }
}

impl fmt::Debug for Credentials {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Credentials")
            .field("principal_id", &self.principal_id)
            .field("token", &"<redacted>")
            .field("roles", &self.roles)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactedCredentials {
    pub principal_id: String,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub roles: BTreeSet<Role>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn debug_never_prints_token() {
        let c = Credentials::new("app1", "s3cret");
        assert!(!format!("{c:?}").contains("s3cret"));
        assert!(!serde_json::to_string(&c.redacted()).unwrap().contains("s3cret"));
    }
}
