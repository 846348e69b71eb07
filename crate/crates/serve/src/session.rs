use std::sync::Mutex;
use std::time::{Duration, Instant};

use trayco_core::partner::CommandSource;

use crate::protocol::{parse_client_message, ProtocolError, SessionPhase};

pub type ClientId = u64;

pub const DEFAULT_STALENESS: Duration = Duration::from_secs(1);

#[derive(Debug)]
struct Inner {
    phase: SessionPhase,
    block: usize,
    latest: Option<(f64, Instant)>,
    /// Connected clients in connection order; the first one controls.
    clients: Vec<ClientId>,
    next_id: ClientId,
}

/// Shared between the socket tasks and the control loop. Holds the newest
/// human command; reads never wait on the network.
#[derive(Debug)]
pub struct Session {
    inner: Mutex<Inner>,
    staleness: Duration,
}

impl Session {
    pub fn new(staleness: Duration) -> Self {
        Self {
            inner: Mutex::new(Inner {
                phase: SessionPhase::Waiting,
                block: 0,
                latest: None,
                clients: Vec::new(),
                next_id: 1,
            }),
            staleness,
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn connect(&self) -> ClientId {
        let mut s = self.lock();
        let id = s.next_id;
        s.next_id += 1;
        s.clients.push(id);
        id
    }

    /// Removes a client. When the controller leaves, its command is dropped
    /// at once and the longest-connected observer takes over.
    pub fn disconnect(&self, id: ClientId) {
        let mut s = self.lock();
        if s.clients.first() == Some(&id) {
            s.latest = None;
        }
        s.clients.retain(|&c| c != id);
    }

    pub fn client_count(&self) -> usize {
        self.lock().clients.len()
    }

    pub fn controller(&self) -> Option<ClientId> {
        self.lock().clients.first().copied()
    }

    pub fn phase(&self) -> SessionPhase {
        self.lock().phase
    }

    pub fn set_phase(&self, phase: SessionPhase) {
        self.lock().phase = phase;
    }

    pub fn block(&self) -> usize {
        self.lock().block
    }

    pub fn set_block(&self, block: usize) {
        self.lock().block = block;
    }

    /// Handles one inbound frame: either stores the command (clamped to
    /// [-1, 1], stamped with `now`) or returns the error to send back.
    pub fn ingest(&self, id: ClientId, text: &str, now: Instant) -> Result<(), ProtocolError> {
        let (tilt, _client_time) = parse_client_message(text)?;
        let mut s = self.lock();
        if s.clients.first() != Some(&id) {
            return Err(ProtocolError::NotController);
        }
        s.latest = Some((tilt.clamp(-1.0, 1.0), now));
        Ok(())
    }

    /// The stored command, or 0 once it is older than the staleness window.
    pub fn effective_at(&self, now: Instant) -> f64 {
        match self.lock().latest {
            Some((tilt, at)) if now.saturating_duration_since(at) <= self.staleness => tilt,
            _ => 0.0,
        }
    }
}

impl CommandSource for Session {
    fn latest(&self) -> f64 {
        self.effective_at(Instant::now())
    }
}
