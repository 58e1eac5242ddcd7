//! Network transport for a [`Session`].
//!
//! `GET /ws` upgrades to a WebSocket speaking the session wire protocol, one
//! JSON text frame per message. `GET /catalog.json` returns the catalog
//! document byte for byte. Everything else is served from the static UI
//! directory, or a small built-in index page when none is configured.
//!
//! All clients funnel into one mutex-guarded session, so ingests are applied
//! in arrival order and each client's outbound frames keep their order.

use std::collections::HashMap;
use std::io;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::header;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use somekone_core::session::protocol::{server, Envelope, ErrorCode, WireError};
use somekone_core::session::{ClientId, Outbound};
use somekone_core::Session;
use tokio::net::TcpListener;
use tokio::sync::mpsc::{unbounded_channel, UnboundedSender};
use tower_http::services::ServeDir;

const INDEX: &str = include_str!("../assets/index.html");

struct Inner {
    session: Session,
    outboxes: HashMap<ClientId, UnboundedSender<String>>,
}

/// Shared state behind every connection.
pub struct Hub {
    inner: Mutex<Inner>,
    started: Instant,
    /// Session clock at startup; non-zero when resuming a stored log.
    clock_offset_ms: u64,
    catalog: Bytes,
}

impl Hub {
    pub fn new(session: Session) -> Self {
        let engine = session.engine();
        let clock_offset_ms = engine.log().last_timestamp().unwrap_or(0);
        let catalog = Bytes::copy_from_slice(engine.catalog().source_bytes());
        Self {
            inner: Mutex::new(Inner {
                session,
                outboxes: HashMap::new(),
            }),
            started: Instant::now(),
            clock_offset_ms,
            catalog,
        }
    }

    /// Milliseconds on the session clock.
    pub fn now_ms(&self) -> u64 {
        self.clock_offset_ms + self.started.elapsed().as_millis() as u64
    }

    pub fn admin_token(&self) -> String {
        self.lock().session.admin_token().to_owned()
    }

    pub fn watermark(&self) -> u64 {
        self.lock().session.watermark()
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // a panicked handler leaves the session usable; the log is the truth
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn connect(&self, outbox: UnboundedSender<String>) -> ClientId {
        let mut inner = self.lock();
        let id = inner.session.connect();
        inner.outboxes.insert(id, outbox);
        id
    }

    fn receive(&self, client: ClientId, text: &str) {
        let now = self.now_ms();
        let mut inner = self.lock();
        let out = inner.session.handle_text(client, text, now);
        deliver(&inner, out);
    }

    fn reject(&self, client: ClientId, error: WireError) {
        let inner = self.lock();
        let envelope = Envelope::new(server::ERROR, None, error);
        deliver(&inner, vec![Outbound { to: client, envelope }]);
    }

    fn disconnect(&self, client: ClientId) {
        let mut inner = self.lock();
        inner.outboxes.remove(&client);
        let out = inner.session.disconnect(client);
        deliver(&inner, out);
    }
}

fn deliver(inner: &Inner, out: Vec<Outbound>) {
    for Outbound { to, envelope } in out {
        if let Some(outbox) = inner.outboxes.get(&to) {
            // a closed outbox means the client is going away; disconnect cleans up
            let _ = outbox.send(envelope.to_text());
        }
    }
}

pub fn router(hub: Arc<Hub>, assets: Option<PathBuf>) -> Router {
    let app = Router::new()
        .route("/ws", get(upgrade))
        .route("/catalog.json", get(catalog))
        .with_state(hub);
    match assets {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(INDEX) })),
    }
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, hub: Arc<Hub>, assets: Option<PathBuf>) -> io::Result<()> {
    axum::serve(listener, router(hub, assets)).await
}

async fn catalog(State(hub): State<Arc<Hub>>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], hub.catalog.clone()).into_response()
}

async fn upgrade(ws: WebSocketUpgrade, State(hub): State<Arc<Hub>>) -> Response {
    ws.on_upgrade(move |socket| client(socket, hub))
}

async fn client(socket: WebSocket, hub: Arc<Hub>) {
    let (mut frames_out, mut frames_in) = socket.split();
    let (tx, mut rx) = unbounded_channel::<String>();
    let id = hub.connect(tx);
    log::info!("client {id} connected");

    let writer = tokio::spawn(async move {
        while let Some(text) = rx.recv().await {
            if frames_out.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });

    while let Some(Ok(frame)) = frames_in.next().await {
        match frame {
            Message::Text(text) => hub.receive(id, text.as_str()),
            Message::Binary(_) => hub.reject(id, WireError::new(ErrorCode::BadMessage, "expected a text frame")),
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => {}
        }
    }

    hub.disconnect(id);
    writer.abort();
    log::info!("client {id} disconnected");
}
