#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;
use trayco_core::harness::Schedule;
use trayco_core::sac::SacConfig;
use trayco_core::{EnvConfig, RunConfig};
use trayco_serve::{serve_on, LiveOptions, ServeError, ServeOptions, ServeReport, WireMessage};

pub type Client = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

/// A run small enough to finish in a few seconds of real time.
pub fn small_config(total: usize, block: usize, eval: usize, cap: usize) -> RunConfig {
    RunConfig {
        seed: 3,
        env: EnvConfig {
            step_cap: cap,
            ..Default::default()
        },
        sac: SacConfig {
            hidden: 8,
            batch_size: 4,
            random_steps: 5,
            ..Default::default()
        },
        schedule: Schedule::new(total, 5, block, eval, cap).unwrap(),
        ..Default::default()
    }
}

pub struct Running {
    pub url: String,
    pub stop: Option<oneshot::Sender<()>>,
    pub handle: JoinHandle<Result<ServeReport, ServeError>>,
}

pub async fn start(cfg: RunConfig, live: LiveOptions, out: &Path) -> Running {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let opts = ServeOptions {
        live,
        ..ServeOptions::new(cfg, addr.port(), out.to_path_buf())
    };
    let (tx, rx) = oneshot::channel::<()>();
    let handle = tokio::spawn(serve_on(listener, opts, async {
        let _ = rx.await;
    }));
    Running {
        url: format!("ws://{addr}/ws"),
        stop: Some(tx),
        handle,
    }
}

pub async fn connect(url: &str) -> Client {
    let (ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    ws
}

pub async fn send_text(ws: &mut Client, text: &str) {
    ws.send(Message::Text(text.into())).await.unwrap();
}

/// Next server message, or `None` once the connection closes.
pub async fn next_msg(ws: &mut Client, timeout: Duration) -> Option<WireMessage> {
    loop {
        match tokio::time::timeout(timeout, ws.next()).await.ok()?? {
            Ok(Message::Text(t)) => return Some(serde_json::from_str(t.as_str()).expect("valid server message")),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => continue,
        }
    }
}
