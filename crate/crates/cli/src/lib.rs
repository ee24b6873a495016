//! Command-line tool and HTTP API for the delivery-issue triage engine.

pub mod api;
pub mod cli;

pub use cli::run_cli;
