//! HTTP service, persistence and command-line front end for the playlist
//! pipeline.

pub mod app;
pub mod commands;
pub mod config;
pub mod metrics;
pub mod store;

pub use app::{router, AppState};
pub use config::ServiceConfig;
