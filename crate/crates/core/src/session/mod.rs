//! Live session hub.
//!
//! A [`Session`] owns the log-derived [`Engine`] plus everything that only
//! exists while clients are connected: the roster, pairing codes, client
//! roles and layout state. It is transport-agnostic: callers feed it client
//! messages and deliver the returned [`Outbound`] envelopes.

mod engine;
pub mod protocol;

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

pub use engine::{
    valid_nickname, DerivedSnapshot, Engine, IngestOutcome, ProfilePayload, TagClouds, TagWeight,
    MAX_NICKNAME_LEN,
};
use protocol::{
    server, ClientMessage, Envelope, ErrorCode, EventBody, JoinBody, JoinStatus, JoinedBody, PairBody,
    RoleRequest, Scope, SnapshotBody, WelcomeBody, WireError, PROTOCOL_VERSION,
};

use crate::catalog::Catalog;
use crate::coengagement::CoEngagementError;
use crate::config::{ConfigError, SessionConfig};
use crate::graph_layout::{Layout, LayoutPayload};
use crate::persistence::EventSink;
use crate::profiling::ProfilingError;
use crate::scoring::ScoringError;
use crate::tracking::{EventKind, NewEvent, TrackingError, UserId};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Profiling(#[from] ProfilingError),
    #[error(transparent)]
    CoEngagement(#[from] CoEngagementError),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl From<SessionError> for WireError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Tracking(t) => t.into(),
            SessionError::Storage(m) => WireError::new(ErrorCode::Storage, m),
            other => WireError::new(ErrorCode::InvalidEvent, other),
        }
    }
}

pub type ClientId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientRole {
    Feed(UserId),
    Monitor(UserId),
    Projector,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingCode {
    pub code: String,
    pub target: UserId,
    /// Seconds since session start.
    pub expires_at: u64,
}

/// A message addressed to one client.
#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub to: ClientId,
    pub envelope: Envelope,
}

/// Unambiguous code alphabet: no 0/O or 1/I.
pub const CODE_ALPHABET: &[u8] = b"ABCDEFGHJKLMNPQRSTUVWXYZ23456789";
pub const CODE_LEN: usize = 6;

const GRAPH_VIEWS: [Scope; 3] = [Scope::Social, Scope::ImageCoeng, Scope::TopicCoeng];

pub struct Session {
    id: String,
    engine: Engine,
    sink: Option<Box<dyn EventSink>>,
    admin_token: String,
    secrets: StdRng,
    clients: BTreeMap<ClientId, Option<ClientRole>>,
    next_client: ClientId,
    /// Connected feed clients by nickname.
    roster: BTreeMap<UserId, ClientId>,
    codes: BTreeMap<String, PairingCode>,
    consumed: BTreeSet<String>,
    layouts: BTreeMap<Scope, Layout>,
}

impl Session {
    /// Creates an empty session. Tokens and pairing codes come from OS
    /// entropy; everything derived from events uses `config.seed`.
    pub fn create(config: SessionConfig, catalog: Catalog, id: impl Into<String>) -> Result<Self, SessionError> {
        Self::with_secrets(config, catalog, id, StdRng::from_os_rng())
    }

    /// Like [`create`](Self::create) with a caller-supplied rng for tokens
    /// and pairing codes.
    pub fn with_secrets(
        config: SessionConfig,
        catalog: Catalog,
        id: impl Into<String>,
        secrets: StdRng,
    ) -> Result<Self, SessionError> {
        let id = id.into();
        let engine = Engine::new(config, catalog, &id)?;
        Ok(Self::restore(engine, secrets))
    }

    /// Wraps an engine rebuilt from a stored log, e.g. by
    /// [`replay`](crate::persistence::replay).
    pub fn restore(engine: Engine, mut secrets: StdRng) -> Self {
        let id = engine.log().session_id().to_owned();
        let admin_token: String = (0..32)
            .map(|_| char::from_digit(secrets.random_range(0..16), 16).expect("hex digit"))
            .collect();
        Self {
            id,
            engine,
            sink: None,
            admin_token,
            secrets,
            clients: BTreeMap::new(),
            next_client: 1,
            roster: BTreeMap::new(),
            codes: BTreeMap::new(),
            consumed: BTreeSet::new(),
            layouts: BTreeMap::new(),
        }
    }

    /// Every accepted event is handed to `sink` before it is applied.
    pub fn set_sink(&mut self, sink: Box<dyn EventSink>) {
        self.sink = Some(sink);
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn admin_token(&self) -> &str {
        &self.admin_token
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn watermark(&self) -> u64 {
        self.engine.watermark()
    }

    pub fn roster(&self) -> impl Iterator<Item = &str> {
        self.roster.keys().map(String::as_str)
    }

    pub fn role(&self, client: ClientId) -> Option<&ClientRole> {
        self.clients.get(&client).and_then(Option::as_ref)
    }

    pub fn connect(&mut self) -> ClientId {
        let id = self.next_client;
        self.next_client += 1;
        self.clients.insert(id, None);
        id
    }

    pub fn disconnect(&mut self, client: ClientId) -> Vec<Outbound> {
        let mut out = Vec::new();
        if let Some(Some(ClientRole::Feed(user))) = self.clients.remove(&client) {
            self.roster.remove(&user);
            self.codes.retain(|_, c| c.target != user);
            let left = JoinedBody {
                status: JoinStatus::Left,
                role: RoleRequest::Feed,
                user: Some(user.clone()),
                pairing_code: None,
                expires_in_secs: None,
            };
            for to in self.monitors_of(&user).chain(self.projectors()).collect::<Vec<_>>() {
                out.push(self.message(to, server::JOINED, &left));
            }
            out.extend(self.broadcast_graphs(&[Scope::Social]));
        }
        out
    }

    /// Parses and handles one text frame. Protocol errors come back as an
    /// `error` message to the sender.
    pub fn handle_text(&mut self, client: ClientId, text: &str, now_ms: u64) -> Vec<Outbound> {
        let envelope = match Envelope::parse(text) {
            Ok(e) => e,
            Err(e) => return vec![self.error(client, None, e)],
        };
        match ClientMessage::from_envelope(&envelope) {
            Ok(msg) => self.handle_seq(client, msg, envelope.seq, now_ms),
            Err(e) => vec![self.error(client, envelope.seq, e)],
        }
    }

    pub fn handle(&mut self, client: ClientId, msg: ClientMessage, now_ms: u64) -> Vec<Outbound> {
        self.handle_seq(client, msg, None, now_ms)
    }

    fn handle_seq(&mut self, client: ClientId, msg: ClientMessage, seq: Option<u64>, now_ms: u64) -> Vec<Outbound> {
        if !self.clients.contains_key(&client) {
            self.clients.insert(client, None);
            self.next_client = self.next_client.max(client + 1);
        }
        let result = match msg {
            ClientMessage::Hello(_) => Ok(vec![self.message(
                client,
                server::WELCOME,
                &WelcomeBody {
                    client_id: client,
                    session_id: self.id.clone(),
                    protocol: PROTOCOL_VERSION,
                    watermark: self.watermark(),
                },
            )]),
            ClientMessage::Join(body) => self.join(client, body, now_ms),
            ClientMessage::Pair(body) => self.pair(client, body, now_ms),
            ClientMessage::Event(body) => self.event(client, body, now_ms),
            ClientMessage::SnapshotRequest(body) => self.snapshot_request(client, body),
        };
        result.unwrap_or_else(|e| vec![self.error(client, seq, e)])
    }

    fn join(&mut self, client: ClientId, body: JoinBody, now_ms: u64) -> Result<Vec<Outbound>, WireError> {
        if self.role(client).is_some() {
            return Err(WireError::new(ErrorCode::RoleViolation, "client already has a role"));
        }
        match body.role {
            RoleRequest::Feed => {
                let nickname = body
                    .nickname
                    .ok_or_else(|| WireError::new(ErrorCode::InvalidNickname, "feed join needs a nickname"))?;
                if !valid_nickname(&nickname) {
                    return Err(WireError::new(
                        ErrorCode::InvalidNickname,
                        format!("nickname must be 1-{MAX_NICKNAME_LEN} letters, digits, '_' or '-'"),
                    ));
                }
                if self.roster.contains_key(&nickname) {
                    return Err(WireError::new(
                        ErrorCode::DuplicateNickname,
                        format!("nickname {nickname:?} is taken"),
                    ));
                }
                self.roster.insert(nickname.clone(), client);
                self.clients.insert(client, Some(ClientRole::Feed(nickname.clone())));
                let code = self.issue_code(&nickname, now_ms);
                let mut out = vec![self.message(
                    client,
                    server::JOINED,
                    &JoinedBody {
                        status: JoinStatus::Joined,
                        role: RoleRequest::Feed,
                        user: Some(nickname.clone()),
                        pairing_code: Some(code),
                        expires_in_secs: Some(self.engine.config().pairing_ttl_secs),
                    },
                )];
                out.extend(self.user_updates(Some(client), &[], &nickname));
                let announce = JoinedBody {
                    status: JoinStatus::Joined,
                    role: RoleRequest::Feed,
                    user: Some(nickname),
                    pairing_code: None,
                    expires_in_secs: None,
                };
                for to in self.projectors().collect::<Vec<_>>() {
                    out.push(self.message(to, server::JOINED, &announce));
                }
                out.extend(self.broadcast_graphs(&[Scope::Social]));
                Ok(out)
            }
            RoleRequest::Monitor => {
                let code = body
                    .code
                    .ok_or_else(|| WireError::new(ErrorCode::Unauthorized, "monitor join needs a pairing code"))?;
                self.bind_monitor(client, &code, now_ms)
            }
            RoleRequest::Projector => {
                if body.token.as_deref() != Some(self.admin_token.as_str()) {
                    return Err(WireError::new(ErrorCode::Unauthorized, "projector join needs the admin token"));
                }
                self.clients.insert(client, Some(ClientRole::Projector));
                let mut out = vec![self.message(
                    client,
                    server::JOINED,
                    &JoinedBody {
                        status: JoinStatus::Joined,
                        role: RoleRequest::Projector,
                        user: None,
                        pairing_code: None,
                        expires_in_secs: None,
                    },
                )];
                for view in GRAPH_VIEWS {
                    let body = self.graph_body(view);
                    out.push(self.message(client, server::GRAPH_UPDATE, &body));
                }
                let clouds = self.graph_body(Scope::TagClouds);
                out.push(self.message(client, server::GRAPH_UPDATE, &clouds));
                Ok(out)
            }
        }
    }

    fn pair(&mut self, client: ClientId, body: PairBody, now_ms: u64) -> Result<Vec<Outbound>, WireError> {
        if body.issue {
            let Some(ClientRole::Feed(user)) = self.role(client).cloned() else {
                return Err(WireError::new(ErrorCode::RoleViolation, "only feed clients issue pairing codes"));
            };
            let code = self.issue_code(&user, now_ms);
            return Ok(vec![self.message(
                client,
                server::JOINED,
                &JoinedBody {
                    status: JoinStatus::PairingCode,
                    role: RoleRequest::Feed,
                    user: Some(user),
                    pairing_code: Some(code),
                    expires_in_secs: Some(self.engine.config().pairing_ttl_secs),
                },
            )]);
        }
        let code = body
            .code
            .ok_or_else(|| WireError::new(ErrorCode::BadMessage, "pair needs a code or issue=true"))?;
        if self.role(client).is_some() {
            return Err(WireError::new(ErrorCode::RoleViolation, "client already has a role"));
        }
        self.bind_monitor(client, &code, now_ms)
    }

    fn issue_code(&mut self, user: &str, now_ms: u64) -> String {
        loop {
            let code: String = (0..CODE_LEN)
                .map(|_| char::from(CODE_ALPHABET[self.secrets.random_range(0..CODE_ALPHABET.len())]))
                .collect();
            if self.codes.contains_key(&code) || self.consumed.contains(&code) {
                continue;
            }
            self.codes.insert(
                code.clone(),
                PairingCode {
                    code: code.clone(),
                    target: user.to_owned(),
                    expires_at: now_ms / 1000 + self.engine.config().pairing_ttl_secs,
                },
            );
            return code;
        }
    }

    fn bind_monitor(&mut self, client: ClientId, code: &str, now_ms: u64) -> Result<Vec<Outbound>, WireError> {
        let code = code.trim().to_ascii_uppercase();
        if self.consumed.contains(&code) {
            return Err(WireError::new(ErrorCode::CodeReused, "pairing code was already used"));
        }
        let Some(entry) = self.codes.get(&code).cloned() else {
            return Err(WireError::new(ErrorCode::Unauthorized, "unknown pairing code"));
        };
        if now_ms / 1000 >= entry.expires_at {
            self.codes.remove(&code);
            return Err(WireError::new(ErrorCode::CodeExpired, "pairing code has expired"));
        }
        let Some(&feed) = self.roster.get(&entry.target) else {
            return Err(WireError::new(ErrorCode::Unauthorized, "the paired user has left"));
        };
        self.codes.remove(&code);
        self.consumed.insert(code);
        let user = entry.target;
        self.clients.insert(client, Some(ClientRole::Monitor(user.clone())));
        let bound = JoinedBody {
            status: JoinStatus::MonitorBound,
            role: RoleRequest::Monitor,
            user: Some(user.clone()),
            pairing_code: None,
            expires_in_secs: None,
        };
        let mut out = vec![self.message(client, server::JOINED, &bound), self.message(feed, server::JOINED, &bound)];
        out.extend(self.user_updates(None, &[client], &user));
        out.push(self.datalog_message(client, &user));
        Ok(out)
    }

    fn event(&mut self, client: ClientId, body: EventBody, now_ms: u64) -> Result<Vec<Outbound>, WireError> {
        let user = match self.role(client) {
            Some(ClientRole::Feed(user)) => user.clone(),
            Some(_) => return Err(WireError::new(ErrorCode::RoleViolation, "only feed clients send events")),
            None => return Err(WireError::new(ErrorCode::Unauthorized, "join before sending events")),
        };
        let kind = EventKind::from_wire(&body.kind, &body.data)?;
        let t = body
            .t
            .unwrap_or_else(|| now_ms.max(self.engine.log().last_timestamp().unwrap_or(0)));
        let event = NewEvent {
            user: user.clone(),
            image: body.image,
            t,
            kind,
        };
        self.ingest(event)?;

        let record = self.engine.log().events().last().cloned().expect("just appended");
        let echo = json!({ "user": user, "events": [record] });
        let monitors: Vec<ClientId> = self.monitors_of(&user).collect();
        let mut out = vec![self.message(client, server::EVENT_ECHO, &echo)];
        for &m in &monitors {
            out.push(self.message(m, server::EVENT_ECHO, &echo));
        }
        out.extend(self.user_updates(Some(client), &monitors, &user));
        out.extend(self.broadcast_graphs(&[Scope::Social, Scope::ImageCoeng, Scope::TopicCoeng, Scope::TagClouds]));
        Ok(out)
    }

    /// Appends through the sink and engine without producing messages.
    pub fn ingest(&mut self, event: NewEvent) -> Result<IngestOutcome, SessionError> {
        let sink = &mut self.sink;
        self.engine.ingest_with(event, |e| match sink {
            Some(s) => s.append(e),
            None => Ok(()),
        })
    }

    fn snapshot_request(&mut self, client: ClientId, body: SnapshotBody) -> Result<Vec<Outbound>, WireError> {
        let role = self
            .role(client)
            .cloned()
            .ok_or_else(|| WireError::new(ErrorCode::Unauthorized, "join before requesting snapshots"))?;
        if body.scope.is_user_scope() {
            let user = match (&role, body.user) {
                (ClientRole::Projector, Some(u)) => u,
                (ClientRole::Projector, None) => {
                    return Err(WireError::new(ErrorCode::BadMessage, "user scope needs a user"))
                }
                (ClientRole::Feed(own) | ClientRole::Monitor(own), requested) => match requested {
                    Some(u) if &u != own => {
                        return Err(WireError::new(ErrorCode::RoleViolation, "scope is limited to your own user"))
                    }
                    _ => own.clone(),
                },
            };
            return Ok(vec![match body.scope {
                Scope::Profile => self.profile_message(client, &user),
                Scope::Queue => self.queue_message(client, &user),
                _ => self.datalog_message(client, &user),
            }]);
        }
        if role != ClientRole::Projector {
            return Err(WireError::new(ErrorCode::RoleViolation, "class-wide views need the projector role"));
        }
        let body = self.graph_body(body.scope);
        Ok(vec![self.message(client, server::GRAPH_UPDATE, &body)])
    }

    fn message(&self, to: ClientId, kind: &str, body: &impl Serialize) -> Outbound {
        Outbound {
            to,
            envelope: Envelope::new(kind, Some(self.watermark()), body),
        }
    }

    fn error(&self, to: ClientId, seq: Option<u64>, e: WireError) -> Outbound {
        Outbound {
            to,
            envelope: Envelope::new(server::ERROR, seq, e),
        }
    }

    fn monitors_of<'a>(&'a self, user: &'a str) -> impl Iterator<Item = ClientId> + 'a {
        self.clients.iter().filter_map(move |(&id, role)| match role {
            Some(ClientRole::Monitor(u)) if u == user => Some(id),
            _ => None,
        })
    }

    fn projectors(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.clients
            .iter()
            .filter_map(|(&id, role)| (role == &Some(ClientRole::Projector)).then_some(id))
    }

    pub fn profile_payload(&self, user: &str) -> ProfilePayload {
        self.engine.profile_payload(user).unwrap_or_else(|| ProfilePayload {
            user: user.to_owned(),
            affinities: BTreeMap::new(),
            taste: vec![0.0; self.engine.catalog().vocabulary().len()],
            strategy_weights: crate::profiling::StrategyLearner::default().weights(&self.engine.config().learning()),
            totals: BTreeMap::new(),
            top_tags: Vec::new(),
            scores: Vec::new(),
            score_max: self.engine.config().weights.score_max,
        })
    }

    fn profile_message(&self, to: ClientId, user: &str) -> Outbound {
        self.message(to, server::PROFILE_UPDATE, &self.profile_payload(user))
    }

    fn queue_message(&self, to: ClientId, user: &str) -> Outbound {
        self.message(to, server::QUEUE_UPDATE, &self.engine.queue_for(user))
    }

    fn datalog_message(&self, to: ClientId, user: &str) -> Outbound {
        let body = json!({ "user": user, "events": self.engine.datalog(user) });
        self.message(to, server::EVENT_ECHO, &body)
    }

    /// Refreshed queue for the feed and monitors; the profile goes to
    /// monitors only.
    fn user_updates(&self, feed: Option<ClientId>, monitors: &[ClientId], user: &str) -> Vec<Outbound> {
        let queue = self.engine.queue_for(user);
        let mut out: Vec<Outbound> = feed
            .iter()
            .chain(monitors)
            .map(|&to| self.message(to, server::QUEUE_UPDATE, &queue))
            .collect();
        if !monitors.is_empty() {
            let profile = self.profile_payload(user);
            out.extend(monitors.iter().map(|&to| self.message(to, server::PROFILE_UPDATE, &profile)));
        }
        out
    }

    fn broadcast_graphs(&mut self, views: &[Scope]) -> Vec<Outbound> {
        let projectors: Vec<ClientId> = self.projectors().collect();
        if projectors.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::new();
        for &view in views {
            let body = self.graph_body(view);
            for &to in &projectors {
                out.push(self.message(to, server::GRAPH_UPDATE, &body));
            }
        }
        out
    }

    /// `graph_update` body for a class-wide view.
    pub fn graph_body(&mut self, view: Scope) -> serde_json::Value {
        let watermark = self.watermark();
        if view == Scope::TagClouds {
            return json!({ "view": view, "watermark": watermark, "clouds": self.engine.tag_clouds() });
        }
        let layout = self.layout(view);
        json!({ "view": view, "watermark": watermark, "layout": layout })
    }

    /// Lays out one graph view, starting from the previous positions.
    pub fn layout(&mut self, view: Scope) -> LayoutPayload {
        let graph = view_graph(&self.engine, self.roster.keys().map(String::as_str), view);
        let config = self.engine.config();
        let (params, seed, color_iters) = (config.layout, config.seed, config.color_iters);
        let layout = self.layouts.entry(view).or_insert_with(|| Layout::new(params, seed));
        layout
            .set_graph(
                graph.nodes.keys().map(String::as_str),
                graph.edges.iter().map(|(a, b, w)| (a.as_str(), b.as_str(), *w)),
            )
            .expect("view graphs reference their own nodes");
        layout.run();
        layout.propagate(color_iters);
        layout.to_payload(&graph.nodes)
    }
}

/// Nodes with (label, top image) and edges with weights in [0, 1].
pub struct ViewGraph {
    pub nodes: BTreeMap<String, (String, Option<String>)>,
    pub edges: Vec<(String, String, f64)>,
}

/// Builds the node and edge lists for a graph view. `extra_users` adds
/// connected users without events to the social view.
pub fn view_graph<'a>(engine: &Engine, extra_users: impl IntoIterator<Item = &'a str>, view: Scope) -> ViewGraph {
    let scores = engine.scores();
    let top_image_of_user = |user: &str| {
        crate::recommender::scores_of(scores, user)
            .min_by(|x, y| y.value.total_cmp(&x.value).then_with(|| x.image.cmp(&y.image)))
            .map(|s| s.image.clone())
    };
    let normalized = |graph: &crate::coengagement::CoEngagementGraph| {
        let max = graph.max_weight();
        graph
            .edges()
            .map(|(a, b, w)| (a.to_owned(), b.to_owned(), if max > 0.0 { w / max } else { 0.0 }))
            .collect::<Vec<_>>()
    };
    match view {
        Scope::ImageCoeng => {
            let graph = engine.image_graph();
            let nodes = graph
                .nodes()
                .iter()
                .map(|id| {
                    let label = engine
                        .catalog()
                        .get(id)
                        .and_then(|r| r.title.clone())
                        .unwrap_or_else(|| id.clone());
                    (id.clone(), (label, Some(id.clone())))
                })
                .collect();
            ViewGraph {
                nodes,
                edges: normalized(graph),
            }
        }
        Scope::TopicCoeng => {
            let graph = engine.topic_graph();
            let mut best: BTreeMap<&str, (f64, &str)> = BTreeMap::new();
            let mut per_image: BTreeMap<&str, f64> = BTreeMap::new();
            for ((_, image), s) in scores {
                *per_image.entry(image).or_default() += s.value;
            }
            for (image, total) in per_image {
                if let Some(record) = engine.catalog().get(image) {
                    for tag in &record.tags {
                        let e = best.entry(tag).or_insert((total, image));
                        if total > e.0 {
                            *e = (total, image);
                        }
                    }
                }
            }
            let nodes = graph
                .nodes()
                .iter()
                .map(|tag| {
                    let top = best.get(tag.as_str()).map(|(_, i)| (*i).to_owned());
                    (tag.clone(), (format!("#{tag}"), top))
                })
                .collect();
            ViewGraph {
                nodes,
                edges: normalized(&graph),
            }
        }
        _ => {
            let mut users: BTreeSet<String> = engine.users().map(str::to_owned).collect();
            users.extend(extra_users.into_iter().map(str::to_owned));
            let nodes = users
                .into_iter()
                .map(|u| {
                    let top = top_image_of_user(&u);
                    (u.clone(), (u, top))
                })
                .collect();
            ViewGraph {
                nodes,
                edges: engine
                    .similarity_edges()
                    .into_iter()
                    .map(|e| (e.a, e.b, e.w))
                    .collect(),
            }
        }
    }
}
