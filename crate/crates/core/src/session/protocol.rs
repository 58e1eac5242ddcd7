//! Wire protocol: one UTF-8 JSON object per message,
//! `{"v":1,"type":...,"seq":int|null,"body":{...}}`.

use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::tracking::{TrackingError, UserId};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub seq: Option<u64>,
    #[serde(default = "empty_body")]
    pub body: Value,
}

fn empty_body() -> Value {
    Value::Object(Map::new())
}

impl Envelope {
    pub fn new(kind: &str, seq: Option<u64>, body: impl Serialize) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            kind: kind.to_owned(),
            seq,
            body: serde_json::to_value(body).expect("payloads serialize"),
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("envelopes serialize")
    }

    pub fn parse(text: &str) -> Result<Self, WireError> {
        let env: Envelope = serde_json::from_str(text).map_err(|e| WireError::new(ErrorCode::BadMessage, e))?;
        if env.v != PROTOCOL_VERSION {
            return Err(WireError::new(
                ErrorCode::UnsupportedVersion,
                format!("protocol version {} is not supported", env.v),
            ));
        }
        if !env.body.is_object() {
            return Err(WireError::new(ErrorCode::BadMessage, "body must be an object"));
        }
        Ok(env)
    }

    /// Decodes the body into `T`.
    pub fn body_as<T: DeserializeOwned>(&self) -> Result<T, WireError> {
        serde_json::from_value(self.body.clone()).map_err(|e| WireError::new(ErrorCode::BadMessage, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadMessage,
    UnsupportedVersion,
    DuplicateNickname,
    InvalidNickname,
    Unauthorized,
    CodeReused,
    CodeExpired,
    RoleViolation,
    Ordering,
    Referential,
    InvalidEvent,
    Storage,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::BadMessage => "bad_message",
            ErrorCode::UnsupportedVersion => "unsupported_version",
            ErrorCode::DuplicateNickname => "duplicate_nickname",
            ErrorCode::InvalidNickname => "invalid_nickname",
            ErrorCode::Unauthorized => "unauthorized",
            ErrorCode::CodeReused => "code_reused",
            ErrorCode::CodeExpired => "code_expired",
            ErrorCode::RoleViolation => "role_violation",
            ErrorCode::Ordering => "ordering",
            ErrorCode::Referential => "referential",
            ErrorCode::InvalidEvent => "invalid_event",
            ErrorCode::Storage => "storage",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Body of an `error` message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub code: ErrorCode,
    pub message: String,
}

impl WireError {
    pub fn new(code: ErrorCode, message: impl fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

impl From<TrackingError> for WireError {
    fn from(e: TrackingError) -> Self {
        let code = match &e {
            TrackingError::Ordering { .. } => ErrorCode::Ordering,
            TrackingError::UnknownUser(_) | TrackingError::UnknownImage(_) => ErrorCode::Referential,
            _ => ErrorCode::InvalidEvent,
        };
        WireError::new(code, e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleRequest {
    Feed,
    Monitor,
    Projector,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelloBody {
    #[serde(default)]
    pub client: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinBody {
    pub role: RoleRequest,
    #[serde(default)]
    pub nickname: Option<String>,
    #[serde(default)]
    pub code: Option<String>,
    #[serde(default)]
    pub token: Option<String>,
}

/// `{"code": ...}` binds the sender as a monitor; `{"issue": true}` from a
/// feed asks for a fresh code.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairBody {
    #[serde(default)]
    pub code: Option<String>,
    #[serde(default)]
    pub issue: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventBody {
    pub kind: String,
    #[serde(default)]
    pub image: Option<String>,
    /// Milliseconds since session start; the server clock is used when absent.
    #[serde(default)]
    pub t: Option<u64>,
    #[serde(default)]
    pub data: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Profile,
    Queue,
    Datalog,
    Social,
    ImageCoeng,
    TopicCoeng,
    TagClouds,
}

impl Scope {
    pub fn is_user_scope(self) -> bool {
        matches!(self, Scope::Profile | Scope::Queue | Scope::Datalog)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotBody {
    pub scope: Scope,
    #[serde(default)]
    pub user: Option<UserId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    Hello(HelloBody),
    Join(JoinBody),
    Pair(PairBody),
    Event(EventBody),
    SnapshotRequest(SnapshotBody),
}

impl ClientMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            ClientMessage::Hello(_) => "hello",
            ClientMessage::Join(_) => "join",
            ClientMessage::Pair(_) => "pair",
            ClientMessage::Event(_) => "event",
            ClientMessage::SnapshotRequest(_) => "snapshot_request",
        }
    }

    pub fn from_envelope(env: &Envelope) -> Result<Self, WireError> {
        Ok(match env.kind.as_str() {
            "hello" => ClientMessage::Hello(env.body_as()?),
            "join" => ClientMessage::Join(env.body_as()?),
            "pair" => ClientMessage::Pair(env.body_as()?),
            "event" => ClientMessage::Event(env.body_as()?),
            "snapshot_request" => ClientMessage::SnapshotRequest(env.body_as()?),
            other => {
                return Err(WireError::new(
                    ErrorCode::BadMessage,
                    format!("unknown message type {other:?}"),
                ))
            }
        })
    }

    pub fn parse(text: &str) -> Result<Self, WireError> {
        Self::from_envelope(&Envelope::parse(text)?)
    }

    pub fn to_envelope(&self, seq: Option<u64>) -> Envelope {
        let name = self.type_name();
        match self {
            ClientMessage::Hello(b) => Envelope::new(name, seq, b),
            ClientMessage::Join(b) => Envelope::new(name, seq, b),
            ClientMessage::Pair(b) => Envelope::new(name, seq, b),
            ClientMessage::Event(b) => Envelope::new(name, seq, b),
            ClientMessage::SnapshotRequest(b) => Envelope::new(name, seq, b),
        }
    }
}

/// Server message type names.
pub mod server {
    pub const WELCOME: &str = "welcome";
    pub const JOINED: &str = "joined";
    pub const EVENT_ECHO: &str = "event_echo";
    pub const PROFILE_UPDATE: &str = "profile_update";
    pub const QUEUE_UPDATE: &str = "queue_update";
    pub const GRAPH_UPDATE: &str = "graph_update";
    pub const ERROR: &str = "error";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelcomeBody {
    pub client_id: u64,
    pub session_id: String,
    pub protocol: u32,
    pub watermark: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinStatus {
    /// The recipient (or, for projectors, someone) joined.
    Joined,
    /// A monitor is now bound to the feed user.
    MonitorBound,
    /// A fresh pairing code for the recipient feed.
    PairingCode,
    /// The user left; monitors should show a tombstone.
    Left,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinedBody {
    pub status: JoinStatus,
    pub role: RoleRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<UserId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairing_code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expires_in_secs: Option<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let msg = ClientMessage::Join(JoinBody {
            role: RoleRequest::Feed,
            nickname: Some("jarmo".into()),
            code: None,
            token: None,
        });
        let text = msg.to_envelope(Some(1)).to_text();
        assert_eq!(ClientMessage::parse(&text).unwrap(), msg);
    }

    #[test]
    fn envelope_shape() {
        let text = Envelope::new(server::ERROR, None, WireError::new(ErrorCode::CodeReused, "x")).to_text();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["v"], 1);
        assert_eq!(v["type"], "error");
        assert!(v["seq"].is_null());
        assert_eq!(v["body"]["code"], "code_reused");
    }

    #[test]
    fn rejects_malformed() {
        assert_eq!(ClientMessage::parse("{").unwrap_err().code, ErrorCode::BadMessage);
        assert_eq!(
            ClientMessage::parse(r#"{"v":2,"type":"hello","body":{}}"#).unwrap_err().code,
            ErrorCode::UnsupportedVersion
        );
        assert_eq!(
            ClientMessage::parse(r#"{"v":1,"type":"shout","body":{}}"#).unwrap_err().code,
            ErrorCode::BadMessage
        );
        assert_eq!(
            ClientMessage::parse(r#"{"v":1,"type":"join","body":{"role":"feed","extra":1}}"#)
                .unwrap_err()
                .code,
            ErrorCode::BadMessage
        );
    }

    #[test]
    fn missing_body_and_seq_default() {
        let m = ClientMessage::parse(r#"{"v":1,"type":"hello"}"#).unwrap();
        assert_eq!(m, ClientMessage::Hello(HelloBody::default()));
    }

    #[test]
    fn error_codes_serialize_as_names() {
        for code in [ErrorCode::DuplicateNickname, ErrorCode::RoleViolation, ErrorCode::Storage] {
            assert_eq!(serde_json::to_value(code).unwrap(), Value::String(code.as_str().into()));
        }
    }
}
