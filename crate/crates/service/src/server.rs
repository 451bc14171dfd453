//! HTTP and WebSocket transport around [`Connection`] and [`TicketQueue`].

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::sync::mpsc;

use rtvc_core::runtime::{Clock, Pipeline};
use rtvc_core::speaker::enroll;
use rtvc_core::wav::read_wav_from;
use rtvc_core::{Error, Result};

use crate::catalog::{Catalog, CatalogEntry};
use crate::connection::{Connection, Outbound};
use crate::protocol::{ServerEvent, FRAME_SAMPLES};
use crate::queue::{Notice, QueueConfig, TicketId, TicketQueue};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub queue: QueueConfig,
    /// Enables `POST /enroll`.
    pub admin: bool,
    /// How often expiry and position updates run.
    pub tick_ms: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { queue: QueueConfig::default(), admin: false, tick_ms: 250 }
    }
}

pub struct AppState {
    pipeline: Pipeline,
    catalog: Arc<RwLock<Catalog>>,
    queue: Mutex<TicketQueue>,
    subscribers: Mutex<HashMap<TicketId, mpsc::UnboundedSender<Notice>>>,
    clock: Arc<dyn Clock>,
    config: ServerConfig,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl AppState {
    pub fn new(pipeline: Pipeline, catalog: Catalog, config: ServerConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        if pipeline.chunk_len() != FRAME_SAMPLES {
            return Err(Error::Config(format!(
                "service frames carry {FRAME_SAMPLES} samples, pipeline chunks have {}",
                pipeline.chunk_len()
            )));
        }
        Ok(Self {
            pipeline,
            catalog: Arc::new(RwLock::new(catalog)),
            queue: Mutex::new(TicketQueue::new(config.queue)),
            subscribers: Mutex::new(HashMap::new()),
            clock,
            config,
        })
    }

    fn now_ms(&self) -> u64 {
        self.clock.now_ns() / 1_000_000
    }

    fn dispatch(&self, notices: Vec<Notice>) {
        let subs = lock(&self.subscribers);
        for n in notices {
            let id = match n {
                Notice::Active(id) | Notice::Expired(id) | Notice::Queued { id, .. } => id,
            };
            if let Some(tx) = subs.get(&id) {
                let _ = tx.send(n);
            }
        }
    }

    /// Run expiry and position updates once.
    pub fn tick(&self) {
        let mut q = lock(&self.queue);
        let notices = q.tick(self.now_ms());
        self.dispatch(notices);
    }

    pub fn active_ticket(&self) -> Option<TicketId> {
        lock(&self.queue).active()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/speakers", get(speakers))
        .route("/enroll", post(enroll_speaker))
        .with_state(state)
}

/// Serve until the listener fails, ticking the queue in the background.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    let ticker = state.clone();
    let period = Duration::from_millis(state.config.tick_ms.max(1));
    let handle = tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        loop {
            interval.tick().await;
            ticker.tick();
        }
    });
    let result = axum::serve(listener, router(state)).await;
    handle.abort();
    result
}

async fn speakers(State(state): State<Arc<AppState>>) -> Json<Vec<crate::catalog::SpeakerInfo>> {
    Json(state.catalog.read().unwrap_or_else(|e| e.into_inner()).list())
}

#[derive(Debug, Deserialize)]
struct EnrollQuery {
    id: String,
    name: Option<String>,
}

async fn enroll_speaker(
    State(state): State<Arc<AppState>>,
    Query(q): Query<EnrollQuery>,
    body: Bytes,
) -> Response {
    if !state.config.admin {
        return (StatusCode::FORBIDDEN, "enrollment is disabled").into_response();
    }
    let result = (|| -> Result<()> {
        let audio = read_wav_from(body.as_ref())?;
        let e = enroll(&audio, &state.pipeline.analyzer, &state.pipeline.models, &q.id)?;
        let mut catalog = state.catalog.write().unwrap_or_else(|e| e.into_inner());
        if catalog.contains(&q.id) {
            return Err(Error::Parameter(format!("speaker {} exists", q.id)));
        }
        let file = format!("{}.spke", q.id);
        if let Some(dir) = catalog.dir() {
            e.embedding.save(dir.join(&file))?;
        }
        let entry = CatalogEntry {
            id: q.id.clone(),
            display_name: q.name.clone().unwrap_or_else(|| q.id.clone()),
            embedding: file.into(),
            m_tgt: e.median_f0,
        };
        catalog.insert(entry, e.embedding)?;
        catalog.persist()
    })();
    match result {
        Ok(()) => Json(serde_json::json!({ "id": q.id })).into_response(),
        Err(e @ (Error::Io(_) | Error::Json(_))) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
        Err(e) => (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| run_socket(socket, state))
}

async fn send_all(socket: &mut WebSocket, out: Vec<Outbound>) -> std::result::Result<bool, axum::Error> {
    for o in out {
        match o {
            Outbound::Event(e) => socket.send(Message::Text(e.to_json().into())).await?,
            Outbound::Audio(b) => socket.send(Message::Binary(b.into())).await?,
            Outbound::Close => {
                socket.send(Message::Close(None)).await?;
                return Ok(false);
            }
        }
    }
    Ok(true)
}

async fn run_socket(mut socket: WebSocket, state: Arc<AppState>) {
    let (tx, mut rx) = mpsc::unbounded_channel();
    let admitted = {
        let mut q = lock(&state.queue);
        let r = q.connect(state.now_ms());
        if let Ok((id, _)) = r {
            lock(&state.subscribers).insert(id, tx);
        }
        r
    };
    let (ticket, first) = match admitted {
        Ok(t) => t,
        Err(r) => {
            let refused = ServerEvent::Refused { retry_after_s: r.retry_after_s };
            let _ = send_all(&mut socket, vec![Outbound::Event(refused), Outbound::Close]).await;
            return;
        }
    };
    log::info!("ticket {ticket} connected");
    let mut conn = Connection::new(ticket, state.pipeline.clone(), state.catalog.clone());
    let mut pending = conn.on_notice(first);
    loop {
        match send_all(&mut socket, pending).await {
            Ok(true) if !conn.is_closed() => {}
            _ => break,
        }
        pending = tokio::select! {
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(t))) => conn.on_text(t.as_str()),
                Some(Ok(Message::Binary(b))) => conn.on_binary(&b),
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => Vec::new(),
            },
            n = rx.recv() => match n {
                Some(n) => conn.on_notice(n),
                None => break,
            },
        };
    }
    let mut q = lock(&state.queue);
    lock(&state.subscribers).remove(&ticket);
    let notices = q.disconnect(ticket, state.now_ms());
    state.dispatch(notices);
    log::info!("ticket {ticket} disconnected");
}
