//! Websocket endpoint plus the control thread that runs the trainer.

use std::future::{Future, IntoFuture};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, watch};
use trayco_core::harness::HarnessError;
use trayco_core::{PartnerKind, RunConfig, RunLog, Trainer, TrayLayout};

use crate::live::{CadenceStats, LiveHooks, LiveOptions, Outbox};
use crate::protocol::{ScheduleSummary, WireMessage, PROTOCOL_VERSION};
use crate::session::{Session, DEFAULT_STALENESS};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("control thread failed: {0}")]
    Control(String),
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Run configuration; the partner kind is forced to `live`.
    pub config: RunConfig,
    /// Layout override; `None` loads the one named by the config.
    pub layout: Option<TrayLayout>,
    pub addr: SocketAddr,
    /// Where the run log, traces and checkpoints go.
    pub out_dir: PathBuf,
    pub live: LiveOptions,
    pub staleness: Duration,
}

impl ServeOptions {
    pub fn new(config: RunConfig, port: u16, out_dir: PathBuf) -> Self {
        Self {
            config,
            layout: None,
            addr: SocketAddr::from(([127, 0, 0, 1], port)),
            out_dir,
            live: LiveOptions::default(),
            staleness: DEFAULT_STALENESS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServeReport {
    pub log: RunLog,
    pub cadence: CadenceStats,
    /// True when the operator stopped the run before the schedule ended.
    pub interrupted: bool,
}

#[derive(Clone)]
struct AppState {
    session: Arc<Session>,
    out: Outbox,
    greeting: Arc<[String; 2]>,
    done: watch::Receiver<bool>,
}

fn router(state: AppState) -> Router {
    Router::new().route("/ws", get(ws_upgrade)).with_state(state)
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client_loop(socket, state))
}

async fn client_loop(socket: WebSocket, mut state: AppState) {
    // Subscribe before greeting so no frame between the two is lost.
    let mut rx = state.out.subscribe();
    let id = state.session.connect();
    log::info!("client {id} connected");
    let (mut sink, mut stream) = socket.split();
    for text in state.greeting.iter() {
        if sink.send(Message::Text(text.as_str().into())).await.is_err() {
            state.session.disconnect(id);
            return;
        }
    }
    loop {
        tokio::select! {
            inbound = stream.next() => {
                let reply = match inbound {
                    Some(Ok(Message::Text(text))) => {
                        state.session.ingest(id, text.as_str(), Instant::now()).err()
                    }
                    Some(Ok(Message::Binary(_))) => Some(crate::protocol::ProtocolError::Malformed(
                        "binary frames are not accepted".into(),
                    )),
                    Some(Ok(Message::Ping(_) | Message::Pong(_))) => None,
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                };
                if let Some(e) = reply {
                    if sink.send(Message::Text(e.to_message().to_text().into())).await.is_err() {
                        break;
                    }
                }
            }
            outbound = rx.recv() => match outbound {
                Ok(text) => {
                    if sink.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    log::warn!("client {id} lagged, {n} frames dropped");
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            _ = finished(&mut state.done) => {
                // Run over: deliver what is queued, then close.
                while let Ok(text) = rx.try_recv() {
                    if sink.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                let _ = sink.send(Message::Close(None)).await;
                break;
            }
        }
    }
    state.session.disconnect(id);
    log::info!("client {id} disconnected");
}

async fn finished(done: &mut watch::Receiver<bool>) {
    let _ = done.wait_for(|d| *d).await;
}

/// Binds `opts.addr` and runs until the schedule completes or Ctrl-C.
pub async fn serve(opts: ServeOptions) -> Result<ServeReport, ServeError> {
    let listener = TcpListener::bind(opts.addr).await?;
    log::info!("listening on ws://{}/ws", listener.local_addr()?);
    serve_on(listener, opts, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}

/// Runs a live session on an already bound listener. The run stops early
/// when `stop` resolves; the last completed block's checkpoint stays on disk.
pub async fn serve_on<F>(listener: TcpListener, opts: ServeOptions, stop: F) -> Result<ServeReport, ServeError>
where
    F: Future<Output = ()> + Send,
{
    let mut cfg = opts.config.clone();
    cfg.partner.kind = PartnerKind::Live;
    let layout = match &opts.layout {
        Some(l) => l.clone(),
        None => cfg.load_layout()?,
    };
    let mut trainer = Trainer::with_layout(cfg.clone(), layout)?;
    let session = Arc::new(Session::new(opts.staleness));
    trainer.set_partner_source(session.clone());

    let hello = WireMessage::Hello {
        protocol_version: PROTOCOL_VERSION,
        layout: trainer.layout().clone(),
        control_axis: cfg.env.agent_axis.other(),
        schedule: ScheduleSummary::new(&cfg.schedule, cfg.env.control_interval),
    };
    let config = WireMessage::Config { config: cfg };
    let (out, _) = broadcast::channel(4096);
    let (done_tx, done_rx) = watch::channel(false);
    let state = AppState {
        session: session.clone(),
        out: out.clone(),
        greeting: Arc::new([hello.to_text(), config.to_text()]),
        done: done_rx.clone(),
    };
    let mut done_signal = done_rx;
    let server = tokio::spawn(
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async move { finished(&mut done_signal).await })
            .into_future(),
    );

    let halt = Arc::new(AtomicBool::new(false));
    let mut hooks = LiveHooks::new(session, out, opts.live, halt.clone());
    let out_dir = opts.out_dir.clone();
    let mut control = tokio::task::spawn_blocking(move || {
        let result = trainer.run_to_dir(&out_dir, &mut hooks).map(|_| ());
        (result, trainer.log().clone(), hooks.cadence())
    });

    let joined = tokio::select! {
        r = &mut control => r,
        _ = stop => {
            log::info!("stop requested");
            halt.store(true, Ordering::Relaxed);
            control.await
        }
    };
    let _ = done_tx.send(true);
    if tokio::time::timeout(Duration::from_secs(2), server).await.is_err() {
        log::warn!("clients did not close in time");
    }
    let (result, log, cadence) = joined.map_err(|e| ServeError::Control(e.to_string()))?;
    let interrupted = match result {
        Ok(()) => false,
        Err(HarnessError::Interrupted) => true,
        Err(e) => return Err(e.into()),
    };
    if cadence.violations > 0 {
        log::warn!("{} of {} step periods outside tolerance", cadence.violations, cadence.periods);
    }
    Ok(ServeReport {
        log,
        cadence,
        interrupted,
    })
}
