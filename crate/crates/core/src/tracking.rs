//! Engagement events and the append-only action log.
//!
//! Every tracked action becomes one [`EngagementEvent`]. The log assigns a
//! gap-free sequence number on append and never mutates or removes entries,
//! so replaying the same events always rebuilds the same log.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::catalog::{Catalog, ImageId};

pub type UserId = String;

#[derive(Debug, Error, PartialEq)]
pub enum TrackingError {
    #[error("event at t={t} precedes last logged timestamp {last}")]
    Ordering { t: u64, last: u64 },
    #[error("invalid event: {0}")]
    Invalid(String),
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("unknown image {0:?}")]
    UnknownImage(String),
    #[error("sequence gap: expected seq {expected}, found {found}")]
    SeqGap { expected: u64, found: u64 },
    #[error("seq {seq}: {message}")]
    AtSeq { seq: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emoji {
    HeartEyes,
    Laugh,
    Sad,
    Angry,
    Wow,
}

impl Emoji {
    pub const ALL: [Emoji; 5] = [
        Emoji::HeartEyes,
        Emoji::Laugh,
        Emoji::Sad,
        Emoji::Angry,
        Emoji::Wow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Emoji::HeartEyes => "heart_eyes",
            Emoji::Laugh => "laugh",
            Emoji::Sad => "sad",
            Emoji::Angry => "angry",
            Emoji::Wow => "wow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareScope {
    Private,
    Friends,
    Public,
}

impl ShareScope {
    pub const ALL: [ShareScope; 3] = [ShareScope::Private, ShareScope::Friends, ShareScope::Public];

    pub fn as_str(self) -> &'static str {
        match self {
            ShareScope::Private => "private",
            ShareScope::Friends => "friends",
            ShareScope::Public => "public",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    Seen,
    DwellEnd { duration_ms: u64 },
    Like,
    Unlike,
    EmojiReaction { emoji: Emoji },
    /// `text` is echoed to views only; computation uses `length_chars`.
    Comment { length_chars: u32, text: Option<String> },
    Follow { creator: String },
    Unfollow { creator: String },
    Share { scope: ShareScope },
    InactivityStart,
    InactivityEnd,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Seen => "seen",
            EventKind::DwellEnd { .. } => "dwell_end",
            EventKind::Like => "like",
            EventKind::Unlike => "unlike",
            EventKind::EmojiReaction { .. } => "emoji_reaction",
            EventKind::Comment { .. } => "comment",
            EventKind::Follow { .. } => "follow",
            EventKind::Unfollow { .. } => "unfollow",
            EventKind::Share { .. } => "share",
            EventKind::InactivityStart => "inactivity_start",
            EventKind::InactivityEnd => "inactivity_end",
        }
    }

    pub fn is_inactivity(&self) -> bool {
        matches!(self, EventKind::InactivityStart | EventKind::InactivityEnd)
    }

    pub fn data(&self) -> Map<String, Value> {
        let mut m = Map::new();
        match self {
            EventKind::DwellEnd { duration_ms } => {
                m.insert("duration_ms".into(), (*duration_ms).into());
            }
            EventKind::EmojiReaction { emoji } => {
                m.insert("emoji".into(), emoji.as_str().into());
            }
            EventKind::Comment { length_chars, text } => {
                m.insert("length".into(), (*length_chars).into());
                if let Some(text) = text {
                    m.insert("text".into(), text.clone().into());
                }
            }
            EventKind::Follow { creator } | EventKind::Unfollow { creator } => {
                m.insert("creator".into(), creator.clone().into());
            }
            EventKind::Share { scope } => {
                m.insert("scope".into(), scope.as_str().into());
            }
            _ => {}
        }
        m
    }

    pub fn from_wire(kind: &str, data: &Map<String, Value>) -> Result<Self, TrackingError> {
        let field = |name: &str| {
            data.get(name)
                .ok_or_else(|| TrackingError::Invalid(format!("{kind}: missing data.{name}")))
        };
        let uint = |name: &str| -> Result<u64, TrackingError> {
            field(name)?
                .as_u64()
                .ok_or_else(|| TrackingError::Invalid(format!("{kind}: data.{name} must be a non-negative integer")))
        };
        let string = |name: &str| -> Result<String, TrackingError> {
            field(name)?
                .as_str()
                .map(str::to_owned)
                .ok_or_else(|| TrackingError::Invalid(format!("{kind}: data.{name} must be a string")))
        };
        Ok(match kind {
            "seen" => EventKind::Seen,
            "dwell_end" => EventKind::DwellEnd {
                duration_ms: uint("duration_ms")?,
            },
            "like" => EventKind::Like,
            "unlike" => EventKind::Unlike,
            "emoji_reaction" => {
                let name = string("emoji")?;
                EventKind::EmojiReaction {
                    emoji: Emoji::parse(&name)
                        .ok_or_else(|| TrackingError::Invalid(format!("unknown emoji {name:?}")))?,
                }
            }
            "comment" => {
                let length = uint("length")?;
                let length_chars = u32::try_from(length)
                    .map_err(|_| TrackingError::Invalid("comment length out of range".into()))?;
                let text = match data.get("text") {
                    None | Some(Value::Null) => None,
                    Some(Value::String(s)) => Some(s.clone()),
                    Some(_) => return Err(TrackingError::Invalid("comment: data.text must be a string".into())),
                };
                EventKind::Comment { length_chars, text }
            }
            "follow" => EventKind::Follow {
                creator: string("creator")?,
            },
            "unfollow" => EventKind::Unfollow {
                creator: string("creator")?,
            },
            "share" => {
                let name = string("scope")?;
                EventKind::Share {
                    scope: ShareScope::parse(&name)
                        .ok_or_else(|| TrackingError::Invalid(format!("unknown share scope {name:?}")))?,
                }
            }
            "inactivity_start" => EventKind::InactivityStart,
            "inactivity_end" => EventKind::InactivityEnd,
            other => return Err(TrackingError::Invalid(format!("unknown event kind {other:?}"))),
        })
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An event before the log has assigned it a sequence number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewEvent {
    pub user: UserId,
    pub image: Option<ImageId>,
    /// Milliseconds since session start.
    pub t: u64,
    pub kind: EventKind,
}

impl NewEvent {
    pub fn on_image(user: impl Into<String>, image: impl Into<String>, t: u64, kind: EventKind) -> Self {
        Self {
            user: user.into(),
            image: Some(image.into()),
            t,
            kind,
        }
    }

    pub fn inactivity(user: impl Into<String>, t: u64, start: bool) -> Self {
        Self {
            user: user.into(),
            image: None,
            t,
            kind: if start {
                EventKind::InactivityStart
            } else {
                EventKind::InactivityEnd
            },
        }
    }

    /// Checks the per-event invariants that do not depend on the log.
    pub fn validate(&self) -> Result<(), TrackingError> {
        if self.user.is_empty() {
            return Err(TrackingError::Invalid("user id must be non-empty".into()));
        }
        match (&self.image, self.kind.is_inactivity()) {
            (Some(_), true) => {
                return Err(TrackingError::Invalid(format!(
                    "{} events carry no image",
                    self.kind
                )))
            }
            (None, false) => {
                return Err(TrackingError::Invalid(format!("{} events need an image", self.kind)))
            }
            _ => {}
        }
        if let EventKind::Comment { length_chars: 0, .. } = self.kind {
            return Err(TrackingError::Invalid("comment length must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "LogLine", try_from = "LogLine")]
pub struct EngagementEvent {
    pub seq: u64,
    pub user: UserId,
    pub image: Option<ImageId>,
    pub t: u64,
    pub kind: EventKind,
}

impl EngagementEvent {
    pub fn concerns(&self, user: &str, image: &str) -> bool {
        self.user == user && self.image.as_deref() == Some(image)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event serialization is infallible")
    }

    pub fn from_line(line: &str) -> Result<Self, TrackingError> {
        serde_json::from_str(line).map_err(|e| TrackingError::Invalid(e.to_string()))
    }
}

/// On-disk and on-wire shape of one logged event.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogLine {
    pub seq: u64,
    pub user: String,
    pub image: Option<String>,
    pub t: u64,
    pub kind: String,
    #[serde(default)]
    pub data: Map<String, Value>,
}

impl From<EngagementEvent> for LogLine {
    fn from(e: EngagementEvent) -> Self {
        LogLine {
            seq: e.seq,
            data: e.kind.data(),
            kind: e.kind.name().to_owned(),
            user: e.user,
            image: e.image,
            t: e.t,
        }
    }
}

impl TryFrom<LogLine> for EngagementEvent {
    type Error = TrackingError;

    fn try_from(line: LogLine) -> Result<Self, Self::Error> {
        let kind = EventKind::from_wire(&line.kind, &line.data)?;
        let event = NewEvent {
            user: line.user,
            image: line.image,
            t: line.t,
            kind,
        };
        event.validate()?;
        Ok(EngagementEvent {
            seq: line.seq,
            user: event.user,
            image: event.image,
            t: event.t,
            kind: event.kind,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionLog {
    session_id: String,
    events: Vec<EngagementEvent>,
}

impl ActionLog {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            events: Vec::new(),
        }
    }

    /// Rebuilds a log from persisted events, rejecting gaps and regressions.
    pub fn from_events(
        session_id: impl Into<String>,
        events: impl IntoIterator<Item = EngagementEvent>,
    ) -> Result<Self, TrackingError> {
        let mut log = Self::new(session_id);
        for event in events {
            let expected = log.next_seq();
            if event.seq != expected {
                return Err(TrackingError::SeqGap {
                    expected,
                    found: event.seq,
                });
            }
            let seq = event.seq;
            log.append(NewEvent {
                user: event.user,
                image: event.image,
                t: event.t,
                kind: event.kind,
            })
            .map_err(|e| TrackingError::AtSeq {
                seq,
                message: e.to_string(),
            })?;
        }
        Ok(log)
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn events(&self) -> &[EngagementEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Sequence number of the newest event, 0 for an empty log.
    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }

    pub fn next_seq(&self) -> u64 {
        self.last_seq() + 1
    }

    pub fn last_timestamp(&self) -> Option<u64> {
        self.events.last().map(|e| e.t)
    }

    /// Validates `event` against the log without appending it and returns the
    /// seq it would receive.
    pub fn check(&self, event: &NewEvent) -> Result<u64, TrackingError> {
        event.validate()?;
        if let Some(last) = self.last_timestamp() {
            if event.t < last {
                return Err(TrackingError::Ordering { t: event.t, last });
            }
        }
        Ok(self.next_seq())
    }

    /// Like [`check`](Self::check), additionally resolving ids against the
    /// catalog and a roster predicate.
    pub fn check_refs(
        &self,
        event: &NewEvent,
        catalog: &Catalog,
        known_user: impl Fn(&str) -> bool,
    ) -> Result<u64, TrackingError> {
        let seq = self.check(event)?;
        if !known_user(&event.user) {
            return Err(TrackingError::UnknownUser(event.user.clone()));
        }
        if let Some(image) = &event.image {
            if !catalog.contains(image) {
                return Err(TrackingError::UnknownImage(image.clone()));
            }
        }
        Ok(seq)
    }

    pub fn append(&mut self, event: NewEvent) -> Result<u64, TrackingError> {
        let seq = self.check(&event)?;
        self.push(seq, event);
        Ok(seq)
    }

    pub fn append_checked(
        &mut self,
        event: NewEvent,
        catalog: &Catalog,
        known_user: impl Fn(&str) -> bool,
    ) -> Result<u64, TrackingError> {
        let seq = self.check_refs(&event, catalog, known_user)?;
        self.push(seq, event);
        Ok(seq)
    }

    fn push(&mut self, seq: u64, event: NewEvent) {
        self.events.push(EngagementEvent {
            seq,
            user: event.user,
            image: event.image,
            t: event.t,
            kind: event.kind,
        });
    }

    pub fn events_for<'a>(&'a self, user: &'a str, image: &'a str) -> impl Iterator<Item = &'a EngagementEvent> + 'a {
        self.events.iter().filter(move |e| e.concerns(user, image))
    }

    pub fn events_by<'a>(&'a self, user: &'a str) -> impl Iterator<Item = &'a EngagementEvent> + 'a {
        self.events.iter().filter(move |e| e.user == user)
    }

    /// Total dwell in milliseconds for one (user, image) pair, uncapped.
    pub fn dwell_total(&self, user: &str, image: &str) -> u64 {
        self.events_for(user, image)
            .map(|e| match e.kind {
                EventKind::DwellEnd { duration_ms } => duration_ms,
                _ => 0,
            })
            .sum()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_line());
            out.push('\n');
        }
        out
    }
}
