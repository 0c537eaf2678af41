//! HTTP API, command-line front end and network LLM provider for the aroma
//! generation loop.

pub mod api;
pub mod cli;
pub mod provider;

pub use api::{router, ApiError, AppState};
pub use provider::{HttpConfig, HttpProvider};
