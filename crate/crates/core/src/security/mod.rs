//! Central security and privacy authority.
//!
//! The engine owns one versioned [`SecurityPolicy`] (class protocols, dataset
//! registrations and ACL). Readers work on an immutable snapshot; writers are
//! serialized and publish a new snapshot atomically. Every policy read or
//! modification lands in the [`AuditLog`].

mod audit;
mod jobs;
pub mod envelope;
mod policy;
pub mod transform;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub use audit::{AuditAction, AuditLog, AuditLogEntry};
pub use policy::{
    classify, AclChange, DataAction, DataClass, DatasetEntry, PolicyUpdate, ProtocolPatch, ProtocolSet,
    SecurityPolicy,
};
use transform::{Anonymizer, Cipher, FieldMasker, OwnerKeyCipher};

use crate::error::{Error, Result};
use crate::protocol::{Credentials, Role};

/// Verdict of an access check. Protocols are always filled in so callers can
/// still handle stored data lawfully after a denial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessDecision {
    pub allowed: bool,
    pub protocols: ProtocolSet,
    pub reason: String,
    pub dataset_id: String,
    pub owner: String,
    pub class: DataClass,
    pub policy_version: u64,
}

pub struct SecurityEngine {
    policy: RwLock<Arc<SecurityPolicy>>,
    writer: Mutex<()>,
    audit: AuditLog,
    anonymizer: Box<dyn Anonymizer>,
    cipher: Box<dyn Cipher>,
    policy_path: Option<PathBuf>,
}

impl Default for SecurityEngine {
    fn default() -> Self {
        SecurityEngine::new()
    }
}

impl SecurityEngine {
    pub fn new() -> Self {
        SecurityEngine {
            policy: RwLock::new(Arc::new(SecurityPolicy::default())),
            writer: Mutex::new(()),
            audit: AuditLog::default(),
            anonymizer: Box::new(FieldMasker::new(b"budamaf-anon".to_vec())),
            cipher: Box::new(OwnerKeyCipher::random()),
            policy_path: None,
        }
    }

    /// Persists the policy to `path`, loading it first when the file exists.
    pub fn with_policy_file(mut self, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            let policy: SecurityPolicy =
                serde_json::from_str(&text).map_err(|e| Error::InvalidPolicy(e.to_string()))?;
            policy.validate()?;
            *self.policy.get_mut() = Arc::new(policy);
        }
        self.policy_path = Some(path);
        Ok(self)
    }

    pub fn with_audit_export(mut self, path: &Path) -> Result<Self> {
        self.audit = AuditLog::with_export(path)?;
        Ok(self)
    }

    pub fn with_transforms(mut self, anonymizer: Box<dyn Anonymizer>, cipher: Box<dyn Cipher>) -> Self {
        self.anonymizer = anonymizer;
        self.cipher = cipher;
        self
    }

    pub fn snapshot(&self) -> Arc<SecurityPolicy> {
        self.policy.read().clone()
    }

    pub fn version(&self) -> u64 {
        self.snapshot().version
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn anonymizer(&self) -> &dyn Anonymizer {
        self.anonymizer.as_ref()
    }

    pub fn cipher(&self) -> &dyn Cipher {
        self.cipher.as_ref()
    }

    /// Unaudited lookup used internally by the gateway.
    pub fn dataset(&self, dataset_id: &str) -> Option<DatasetEntry> {
        self.snapshot().datasets.get(dataset_id).cloned()
    }

    pub fn protocol_query(&self, who: &Credentials, class: DataClass, owner: Option<&str>) -> ProtocolSet {
        let p = self.snapshot().protocols(class);
        let subject = match owner {
            Some(o) => format!("{class}@{o}"),
            None => class.to_string(),
        };
        self.audit.append(who, AuditAction::ReadPolicy, &subject, "ok");
        p
    }

    pub fn check_access(&self, who: &Credentials, dataset_id: &str, action: DataAction) -> Result<AccessDecision> {
        let snap = self.snapshot();
        let subject = format!("{dataset_id}:{action}");
        let Some(entry) = snap.datasets.get(dataset_id) else {
            self.audit.append(who, AuditAction::AccessCheck, &subject, "unknown_dataset");
            return Err(Error::UnknownDataset(dataset_id.to_owned()));
        };
        let (allowed, reason) = if entry.owner == who.principal_id {
            (true, "owner")
        } else if snap.is_granted(dataset_id, action, &who.principal_id) {
            (true, "granted")
        } else {
            (false, "no grant")
        };
        self.audit.append(who, AuditAction::AccessCheck, &subject, if allowed { "allowed" } else { "denied" });
        Ok(AccessDecision {
            allowed,
            protocols: snap.protocols(entry.class),
            reason: reason.to_owned(),
            dataset_id: dataset_id.to_owned(),
            owner: entry.owner.clone(),
            class: entry.class,
            policy_version: snap.version,
        })
    }

    pub fn policy_update(&self, who: &Credentials, update: &PolicyUpdate) -> Result<u64> {
        if !who.has_role(Role::SecurityAdmin) {
            self.audit.append(who, AuditAction::ModifyPolicy, "policy", "denied");
            return Err(Error::AccessDenied("policy updates require the security_admin role".into()));
        }
        let res = self.modify(|cur| update.apply_to(cur));
        let outcome = match &res {
            Ok(v) => format!("version {v}"),
            Err(e) => e.code().to_owned(),
        };
        self.audit.append(who, AuditAction::ModifyPolicy, "policy", &outcome);
        res
    }

    /// Strips every non-owner grant on the dataset.
    pub fn revoke(&self, who: &Credentials, dataset_id: &str) -> Result<()> {
        let res = self
            .modify(|cur| {
                let entry = cur
                    .datasets
                    .get(dataset_id)
                    .ok_or_else(|| Error::UnknownDataset(dataset_id.to_owned()))?;
                if entry.owner != who.principal_id && !who.has_role(Role::SecurityAdmin) {
                    return Err(Error::AccessDenied("revoke requires ownership or security_admin".into()));
                }
                let mut next = cur.clone();
                next.acl.remove(dataset_id);
                next.version += 1;
                Ok(next)
            })
            .map(|_| ());
        self.audit.append(who, AuditAction::Revoke, dataset_id, outcome(&res));
        res
    }

    /// Registers a dataset owned by `who`. Re-registering by the same owner is
    /// a no-op; a different principal gets `DuplicateId`.
    pub fn register_dataset(&self, who: &Credentials, dataset_id: &str, class: DataClass) -> Result<DatasetEntry> {
        let _w = self.writer.lock();
        let cur = self.snapshot();
        let res = match cur.datasets.get(dataset_id) {
            Some(e) if e.owner == who.principal_id => Ok(e.clone()),
            Some(_) => Err(Error::DuplicateId(dataset_id.to_owned())),
            None => {
                let entry = DatasetEntry { owner: who.principal_id.clone(), class };
                let mut next = (*cur).clone();
                next.datasets.insert(dataset_id.to_owned(), entry.clone());
                next.version += 1;
                self.publish(next).map(|_| entry)
            }
        };
        self.audit.append(who, AuditAction::ModifyPolicy, &format!("register {dataset_id}"), outcome(&res));
        res
    }

    /// Adds grants on a dataset; only its owner or a security admin may.
    pub fn grant(&self, who: &Credentials, dataset_id: &str, action: DataAction, principals: &[String]) -> Result<u64> {
        let res = self.modify(|cur| {
            let entry = cur
                .datasets
                .get(dataset_id)
                .ok_or_else(|| Error::UnknownDataset(dataset_id.to_owned()))?;
            if entry.owner != who.principal_id && !who.has_role(Role::SecurityAdmin) {
                return Err(Error::AccessDenied("only the dataset owner may grant access".into()));
            }
            let mut next = cur.clone();
            next.acl
                .entry(dataset_id.to_owned())
                .or_default()
                .entry(action)
                .or_default()
                .extend(principals.iter().cloned());
            next.version += 1;
            Ok(next)
        });
        self.audit.append(who, AuditAction::ModifyPolicy, &format!("grant {dataset_id}:{action}"), outcome(&res));
        res
    }

    /// The audit trail itself, for security administrators. Reading it is a
    /// policy access like any other and is recorded too.
    pub fn read_audit(&self, who: &Credentials) -> Result<Vec<AuditLogEntry>> {
        if !who.has_role(Role::SecurityAdmin) && !who.is_admin() {
            self.audit.append(who, AuditAction::ReadPolicy, "audit", "denied");
            return Err(Error::AccessDenied("reading the audit log requires security_admin".into()));
        }
        self.audit.append(who, AuditAction::ReadPolicy, "audit", "ok");
        Ok(self.audit.entries())
    }

    /// Deletes a dataset registration together with its grants.
    pub fn remove_dataset(&self, who: &Credentials, dataset_id: &str) -> Result<()> {
        let res = self
            .modify(|cur| {
                let entry = cur
                    .datasets
                    .get(dataset_id)
                    .ok_or_else(|| Error::UnknownDataset(dataset_id.to_owned()))?;
                if entry.owner != who.principal_id && !who.has_role(Role::SecurityAdmin) && !who.is_admin() {
                    return Err(Error::AccessDenied("dataset deletion requires ownership".into()));
                }
                let mut next = cur.clone();
                next.datasets.remove(dataset_id);
                next.acl.remove(dataset_id);
                next.version += 1;
                Ok(next)
            })
            .map(|_| ());
        self.audit.append(who, AuditAction::Revoke, &format!("delete {dataset_id}"), outcome(&res));
        res
    }

    fn modify(&self, f: impl FnOnce(&SecurityPolicy) -> Result<SecurityPolicy>) -> Result<u64> {
        let _w = self.writer.lock();
        let cur = self.snapshot();
        let next = f(&cur)?;
        debug_assert!(next.version > cur.version);
        self.publish(next)
    }

    fn publish(&self, next: SecurityPolicy) -> Result<u64> {
        if let Some(path) = &self.policy_path {
            let tmp = path.with_extension("tmp");
            let text = serde_json::to_string_pretty(&next).expect("policy serializes");
            std::fs::write(&tmp, text)?;
            std::fs::rename(&tmp, path)?;
        }
        let v = next.version;
        *self.policy.write() = Arc::new(next);
        Ok(v)
    }
}

fn outcome<T>(res: &Result<T>) -> &'static str {
    match res {
        Ok(_) => "ok",
        Err(e) => e.code(),
    }
}
