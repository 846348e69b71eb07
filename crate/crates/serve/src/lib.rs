//! Live mode: a websocket server that lets a person drive the partner axis
//! while the agent trains in real time.
//!
//! The control loop runs on its own thread at one agent step per control
//! interval. Clients get `hello` and `config` on connect, then a stream of
//! `state` frames and `episode_result` messages; the first connected client
//! controls the partner axis with `cmd` messages, later ones only watch.

pub mod live;
pub mod protocol;
pub mod server;
pub mod session;

pub use live::{CadenceStats, LiveHooks, LiveOptions};
pub use protocol::{ProtocolError, SessionPhase, WireMessage, PROTOCOL_VERSION};
pub use server::{serve, serve_on, ServeError, ServeOptions, ServeReport};
pub use session::Session;
