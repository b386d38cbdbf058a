//! HTTP gateway, live node status stream and operator CLI for the testbed
//! orchestrator in `cornet-core`.

pub mod api;
pub mod auth;
pub mod cli;
pub mod client;
pub mod clock;
pub mod emulation;
pub mod error;
pub mod server;
pub mod state;
pub mod status;

pub use server::{router, serve, ServerHandle};
pub use state::{AppState, ServeConfig};
