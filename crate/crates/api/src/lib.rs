//! Service layer of the fairlens workbench: a JSON HTTP API for the web UI
//! and a CLI for scripts, both thin wrappers over [`service::Workbench`].

pub mod cli;
pub mod error;
pub mod http;
pub mod jobs;
pub mod service;

pub use error::ApiError;
pub use service::Workbench;
