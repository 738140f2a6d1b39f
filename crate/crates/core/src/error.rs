use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the gateway and its components can report.
///
/// The variant name doubles as the wire error code (see [`Error::code`]), so
/// errors survive a trip through any of the HTTP interfaces unchanged.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum Error {
    #[error("malformed request: {0}")]
    MalformedRequest(String),
    #[error("unknown job type `{0}`")]
    UnknownJobType(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("illegal transition: {0}")]
    IllegalTransition(String),
    #[error("authentication failed: {0}")]
    AuthenticationFailed(String),
    #[error("access denied: {0}")]
    AccessDenied(String),
    #[error("overloaded: {0}")]
    Overloaded(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("channel closed: {0}")]
    ChannelClosed(String),
    #[error("integrity violation: {0}")]
    IntegrityViolation(String),
    #[error("transform failure: {0}")]
    TransformFailure(String),
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("method not allowed: {0}")]
    MethodNotAllowed(String),
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("store `{0}` not found")]
    StoreNotFound(String),
    #[error("store not ready: {0}")]
    StoreNotReady(String),
    #[error("wrapper error {code}: {message}")]
    WrapperError { code: String, message: String },
    #[error("capability missing: {0}")]
    CapabilityMissing(String),
    #[error("capacity exceeded: {0}")]
    CapacityExceeded(String),
    #[error("no wrapper registered for kind {0}")]
    NoWrapperForKind(String),
    #[error("migration failed: {0}")]
    MigrationFailed(String),
    #[error("verification failed: {0}")]
    VerificationFailed(String),
    #[error("replication link exists: {0}")]
    LinkExists(String),
    #[error("no remedy: {0}")]
    NoRemedy(String),
    #[error("no bottleneck: {0}")]
    NoBottleneck(String),
    #[error("no feasible placement: {0}")]
    NoFeasiblePlacement(String),
    #[error("scenario assertion failed: {0}")]
    ScenarioAssertionFailed(String),
    #[error("unknown collection `{0}`")]
    UnknownCollection(String),
    #[error("bad selector: {0}")]
    BadSelector(String),
    #[error("unknown transaction `{0}`")]
    TxnUnknown(String),
    #[error("deadline exceeded: {0}")]
    DeadlineExceeded(String),
    #[error("timeout: {0}")]
    Timeout(String),
    #[error("cancelled")]
    Cancelled,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("transport error: {0}")]
    Transport(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::MalformedRequest(_) => "MalformedRequest",
            Error::UnknownJobType(_) => "UnknownJobType",
            Error::SchemaViolation(_) => "SchemaViolation",
            Error::IllegalTransition(_) => "IllegalTransition",
            Error::AuthenticationFailed(_) => "AuthenticationFailed",
            Error::AccessDenied(_) => "AccessDenied",
            Error::Overloaded(_) => "Overloaded",
            Error::NotFound(_) => "NotFound",
            Error::ChannelClosed(_) => "ChannelClosed",
            Error::IntegrityViolation(_) => "IntegrityViolation",
            Error::TransformFailure(_) => "TransformFailure",
            Error::UnknownDataset(_) => "UnknownDataset",
            Error::InvalidPolicy(_) => "InvalidPolicy",
            Error::MethodNotAllowed(_) => "MethodNotAllowed",
            Error::Unreachable(_) => "Unreachable",
            Error::DuplicateId(_) => "DuplicateId",
            Error::StoreNotFound(_) => "StoreNotFound",
            Error::StoreNotReady(_) => "StoreNotReady",
            Error::WrapperError { .. } => "WrapperError",
            Error::CapabilityMissing(_) => "CapabilityMissing",
            Error::CapacityExceeded(_) => "CapacityExceeded",
            Error::NoWrapperForKind(_) => "NoWrapperForKind",
            Error::MigrationFailed(_) => "MigrationFailed",
            Error::VerificationFailed(_) => "VerificationFailed",
            Error::LinkExists(_) => "LinkExists",
            Error::NoRemedy(_) => "NoRemedy",
            Error::NoBottleneck(_) => "NoBottleneck",
            Error::NoFeasiblePlacement(_) => "NoFeasiblePlacement",
            Error::ScenarioAssertionFailed(_) => "ScenarioAssertionFailed",
            Error::UnknownCollection(_) => "UnknownCollection",
            Error::BadSelector(_) => "BadSelector",
            Error::TxnUnknown(_) => "TxnUnknown",
            Error::DeadlineExceeded(_) => "DeadlineExceeded",
            Error::Timeout(_) => "Timeout",
            Error::Cancelled => "Cancelled",
            Error::Config(_) => "Config",
            Error::Io(_) => "Io",
            Error::Transport(_) => "Transport",
        }
    }

    /// The message without the code prefix.
    pub fn detail(&self) -> String {
        match self {
            Error::WrapperError { code, message } => format!("{code}: {message}"),
            Error::Cancelled => "cancelled".to_owned(),
            Error::MalformedRequest(m)
            | Error::UnknownJobType(m)
            | Error::SchemaViolation(m)
            | Error::IllegalTransition(m)
            | Error::AuthenticationFailed(m)
            | Error::AccessDenied(m)
            | Error::Overloaded(m)
            | Error::NotFound(m)
            | Error::ChannelClosed(m)
            | Error::IntegrityViolation(m)
            | Error::TransformFailure(m)
            | Error::UnknownDataset(m)
            | Error::InvalidPolicy(m)
            | Error::MethodNotAllowed(m)
            | Error::Unreachable(m)
            | Error::DuplicateId(m)
            | Error::StoreNotFound(m)
            | Error::StoreNotReady(m)
            | Error::CapabilityMissing(m)
            | Error::CapacityExceeded(m)
            | Error::NoWrapperForKind(m)
            | Error::MigrationFailed(m)
            | Error::VerificationFailed(m)
            | Error::LinkExists(m)
            | Error::NoRemedy(m)
            | Error::NoBottleneck(m)
            | Error::NoFeasiblePlacement(m)
            | Error::ScenarioAssertionFailed(m)
            | Error::UnknownCollection(m)
            | Error::BadSelector(m)
            | Error::TxnUnknown(m)
            | Error::DeadlineExceeded(m)
            | Error::Timeout(m)
            | Error::Config(m)
            | Error::Io(m)
            | Error::Transport(m) => m.clone(),
        }
    }

    pub fn to_body(&self) -> ErrorBody {
        ErrorBody { code: self.code().to_owned(), message: self.detail() }
    }

    /// Rebuilds an error from its wire form. Unknown codes become transport
    /// errors so a misbehaving peer cannot forge arbitrary variants.
    pub fn from_body(body: ErrorBody) -> Error {
        let ErrorBody { code, message: m } = body;
        match code.as_str() {
            "MalformedRequest" => Error::MalformedRequest(m),
            "UnknownJobType" => Error::UnknownJobType(m),
            "SchemaViolation" => Error::SchemaViolation(m),
            "IllegalTransition" => Error::IllegalTransition(m),
            "AuthenticationFailed" => Error::AuthenticationFailed(m),
            "AccessDenied" => Error::AccessDenied(m),
            "Overloaded" => Error::Overloaded(m),
            "NotFound" => Error::NotFound(m),
            "ChannelClosed" => Error::ChannelClosed(m),
            "IntegrityViolation" => Error::IntegrityViolation(m),
            "TransformFailure" => Error::TransformFailure(m),
            "UnknownDataset" => Error::UnknownDataset(m),
            "InvalidPolicy" => Error::InvalidPolicy(m),
            "MethodNotAllowed" => Error::MethodNotAllowed(m),
            "Unreachable" => Error::Unreachable(m),
            "DuplicateId" => Error::DuplicateId(m),
            "StoreNotFound" => Error::StoreNotFound(m),
            "StoreNotReady" => Error::StoreNotReady(m),
            "WrapperError" => match m.split_once(": ") {
                Some((c, rest)) => Error::WrapperError { code: c.to_owned(), message: rest.to_owned() },
                None => Error::WrapperError { code: "INTERNAL".to_owned(), message: m },
            },
            "CapabilityMissing" => Error::CapabilityMissing(m),
            "CapacityExceeded" => Error::CapacityExceeded(m),
            "NoWrapperForKind" => Error::NoWrapperForKind(m),
            "MigrationFailed" => Error::MigrationFailed(m),
            "VerificationFailed" => Error::VerificationFailed(m),
            "LinkExists" => Error::LinkExists(m),
            "NoRemedy" => Error::NoRemedy(m),
            "NoBottleneck" => Error::NoBottleneck(m),
            "NoFeasiblePlacement" => Error::NoFeasiblePlacement(m),
            "ScenarioAssertionFailed" => Error::ScenarioAssertionFailed(m),
            "UnknownCollection" => Error::UnknownCollection(m),
            "BadSelector" => Error::BadSelector(m),
            "TxnUnknown" => Error::TxnUnknown(m),
            "DeadlineExceeded" => Error::DeadlineExceeded(m),
            "Timeout" => Error::Timeout(m),
            "Cancelled" => Error::Cancelled,
            "Config" => Error::Config(m),
            "Io" => Error::Io(m),
            _ => Error::Transport(format!("{code}: {m}")),
        }
    }

    /// HTTP status used when this error crosses one of the REST interfaces.
    pub fn http_status(&self) -> u16 {
        match self {
            Error::MalformedRequest(_)
            | Error::UnknownJobType(_)
            | Error::SchemaViolation(_)
            | Error::InvalidPolicy(_)
            | Error::BadSelector(_) => 400,
            Error::AuthenticationFailed(_) => 401,
            Error::AccessDenied(_) => 403,
            Error::NotFound(_)
            | Error::StoreNotFound(_)
            | Error::UnknownDataset(_)
            | Error::UnknownCollection(_)
            | Error::TxnUnknown(_) => 404,
            Error::MethodNotAllowed(_) => 405,
            Error::DuplicateId(_)
            | Error::LinkExists(_)
            | Error::IllegalTransition(_)
            | Error::ChannelClosed(_) => 409,
            Error::StoreNotReady(_) | Error::Overloaded(_) | Error::NoRemedy(_) => 503,
            Error::Timeout(_) | Error::DeadlineExceeded(_) => 504,
            _ => 500,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// Wire form of an [`Error`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_round_trip_keeps_variant() {
        let errs = [
            Error::AccessDenied("no grant".into()),
            Error::WrapperError { code: "NOT_FOUND".into(), message: "k".into() },
            Error::Cancelled,
            Error::CapabilityMissing("transactions".into()),
        ];
        for e in errs {
            assert_eq!(Error::from_body(e.to_body()), e);
        }
    }

    #[test]
    fn unknown_code_is_transport() {
        let e = Error::from_body(ErrorBody { code: "Bogus".into(), message: "x".into() });
        assert_eq!(e.code(), "Transport");
    }
}
