use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// The three kinds of data flowing through the gateway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataClass {
    Federation,
    Monitoring,
    Application,
}

impl DataClass {
    pub const ALL: [DataClass; 3] = [DataClass::Federation, DataClass::Monitoring, DataClass::Application];

    pub fn as_str(self) -> &'static str {
        match self {
            DataClass::Federation => "federation",
            DataClass::Monitoring => "monitoring",
            DataClass::Application => "application",
        }
    }
}

impl fmt::Display for DataClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DataClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DataClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::SchemaViolation(format!("unknown data class `{s}`")))
    }
}

/// Reads the declared `data_class` from metadata; anything missing or
/// unrecognised is treated as application data.
pub fn classify(metadata: &Value) -> DataClass {
    metadata
        .get("data_class")
        .and_then(Value::as_str)
        .and_then(|s| s.parse().ok())
        .unwrap_or(DataClass::Application)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataAction {
    Read,
    Write,
    Admin,
}

impl DataAction {
    pub const ALL: [DataAction; 3] = [DataAction::Read, DataAction::Write, DataAction::Admin];
}

impl fmt::Display for DataAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataAction::Read => "read",
            DataAction::Write => "write",
            DataAction::Admin => "admin",
        })
    }
}

/// Protection required for one data class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolSet {
    pub integrity: bool,
    pub anonymize: bool,
    pub encrypt: bool,
    #[serde(default)]
    pub anonymize_fields: Vec<String>,
}

impl ProtocolSet {
    pub fn integrity_only() -> Self {
        ProtocolSet { integrity: true, anonymize: false, encrypt: false, anonymize_fields: Vec::new() }
    }

    pub fn default_for(class: DataClass) -> Self {
        match class {
            DataClass::Federation | DataClass::Monitoring => Self::integrity_only(),
            DataClass::Application => ProtocolSet {
                integrity: true,
                anonymize: true,
                encrypt: true,
                anonymize_fields: Vec::new(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub owner: String,
    pub class: DataClass,
}

/// Versioned policy document: class protocols, registered datasets and ACL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityPolicy {
    pub version: u64,
    pub class_protocols: BTreeMap<DataClass, ProtocolSet>,
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetEntry>,
    /// dataset_id -> action -> grantees. Owners are implicit.
    #[serde(default)]
    pub acl: BTreeMap<String, BTreeMap<DataAction, BTreeSet<String>>>,
}

impl Default for SecurityPolicy {
    fn default() -> Self {
        SecurityPolicy {
            version: 1,
            class_protocols: DataClass::ALL.into_iter().map(|c| (c, ProtocolSet::default_for(c))).collect(),
            datasets: BTreeMap::new(),
            acl: BTreeMap::new(),
        }
    }
}

impl SecurityPolicy {
    pub fn protocols(&self, class: DataClass) -> ProtocolSet {
        self.class_protocols.get(&class).cloned().unwrap_or_else(|| ProtocolSet::default_for(class))
    }

    pub fn is_granted(&self, dataset_id: &str, action: DataAction, principal: &str) -> bool {
        self.acl
            .get(dataset_id)
            .and_then(|m| m.get(&action))
            .is_some_and(|s| s.contains(principal))
    }

    /// Class invariants: integrity is always on; only application data may
    /// carry anonymization or encryption.
    pub fn validate(&self) -> Result<()> {
        for class in DataClass::ALL {
            let p = self.protocols(class);
            if !p.integrity {
                return Err(Error::InvalidPolicy(format!("{class}: integrity cannot be disabled")));
            }
            if class != DataClass::Application && p != ProtocolSet::integrity_only() {
                return Err(Error::InvalidPolicy(format!("{class}: protocols are fixed to integrity only")));
            }
        }
        for (ds, grants) in &self.acl {
            if !self.datasets.contains_key(ds) && grants.values().any(|s| !s.is_empty()) {
                return Err(Error::InvalidPolicy(format!("grant on unknown dataset `{ds}`")));
            }
        }
        Ok(())
    }
}

/// Partial change to one class's protocols.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrity: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anonymize: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encrypt: Option<bool>,
    /// Replaces the field list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anonymize_fields: Option<Vec<String>>,
    /// Appended to the field list.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub add_anonymize_fields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclChange {
    pub dataset_id: String,
    pub action: DataAction,
    pub principals: Vec<String>,
}

/// Body of a `policy_update` job.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyUpdate {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub class_protocols: BTreeMap<DataClass, ProtocolPatch>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grants: Vec<AclChange>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub revokes: Vec<AclChange>,
}

impl PolicyUpdate {
    pub fn parse(doc: &Value) -> Result<PolicyUpdate> {
        serde_json::from_value(doc.clone()).map_err(|e| Error::InvalidPolicy(e.to_string()))
    }

    /// Returns the updated policy (version bumped) or the violated invariant.
    pub fn apply_to(&self, current: &SecurityPolicy) -> Result<SecurityPolicy> {
        let mut next = current.clone();
        for (class, patch) in &self.class_protocols {
            let mut p = next.protocols(*class);
            if let Some(v) = patch.integrity {
                p.integrity = v;
            }
            if let Some(v) = patch.anonymize {
                p.anonymize = v;
            }
            if let Some(v) = patch.encrypt {
                p.encrypt = v;
            }
            if let Some(f) = &patch.anonymize_fields {
                p.anonymize_fields = f.clone();
            }
            for f in &patch.add_anonymize_fields {
                if !p.anonymize_fields.contains(f) {
                    p.anonymize_fields.push(f.clone());
                }
            }
            next.class_protocols.insert(*class, p);
        }
        for g in &self.grants {
            if !next.datasets.contains_key(&g.dataset_id) {
                return Err(Error::UnknownDataset(g.dataset_id.clone()));
            }
            next.acl
                .entry(g.dataset_id.clone())
                .or_default()
                .entry(g.action)
                .or_default()
                .extend(g.principals.iter().cloned());
        }
        for r in &self.revokes {
            if let Some(set) = next.acl.get_mut(&r.dataset_id).and_then(|m| m.get_mut(&r.action)) {
                for p in &r.principals {
                    set.remove(p);
                }
            }
        }
        next.validate()?;
        next.version = current.version + 1;
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    #[test]
    fn classify_is_fail_closed() {
        assert_eq!(classify(&json!({"data_class": "monitoring"})), DataClass::Monitoring);
        assert_eq!(classify(&json!({"data_class": "federation"})), DataClass::Federation);
        assert_eq!(classify(&json!({})), DataClass::Application);
        assert_eq!(classify(&json!({"data_class": "bogus"})), DataClass::Application);
        assert_eq!(classify(&json!({"data_class": 3})), DataClass::Application);
        assert_eq!(classify(&json!("nope")), DataClass::Application);
    }

    #[test]
    fn defaults_match_class_rules() {
        let p = SecurityPolicy::default();
        assert_eq!(p.protocols(DataClass::Federation), ProtocolSet::integrity_only());
        assert_eq!(p.protocols(DataClass::Monitoring), ProtocolSet::integrity_only());
        let app = p.protocols(DataClass::Application);
        assert!(app.integrity && app.anonymize && app.encrypt);
        p.validate().unwrap();
    }

    #[test]
    fn federation_integrity_cannot_be_disabled() {
        let u = PolicyUpdate::parse(&json!({"class_protocols": {"federation": {"integrity": false}}})).unwrap();
        assert!(matches!(u.apply_to(&SecurityPolicy::default()), Err(Error::InvalidPolicy(_))));
        let u = PolicyUpdate::parse(&json!({"class_protocols": {"monitoring": {"encrypt": true}}})).unwrap();
        assert!(matches!(u.apply_to(&SecurityPolicy::default()), Err(Error::InvalidPolicy(_))));
    }

    #[test]
    fn additive_field_update_bumps_version() {
        let u = PolicyUpdate::parse(
            &json!({"class_protocols": {"application": {"add_anonymize_fields": ["user_name"]}}}),
        )
        .unwrap();
        let base = SecurityPolicy::default();
        let next = u.apply_to(&base).unwrap();
        assert_eq!(next.version, base.version + 1);
        assert_eq!(next.protocols(DataClass::Application).anonymize_fields, vec!["user_name"]);
    }
}
