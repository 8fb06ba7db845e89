//! Command-line tools and the retrieval service.
//!
//! [`engine::Engine`] binds a checkpoint, a sticker index and a sticker set;
//! [`session::SessionManager`] keeps live conversations against one engine;
//! [`service::router`] exposes the sessions over HTTP; [`commands`] holds the
//! work behind each CLI subcommand.

pub mod commands;
pub mod engine;
pub mod error;
pub mod service;
pub mod session;

pub use error::{AppError, Result};
