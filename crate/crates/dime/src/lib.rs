//! DIME engine: dataset/model/index registry, embedding runtime with
//! subprocess plugins, on-disk exact-search indexes, query and comparison
//! workflows, ranking evaluation, an HTTP JSON API, and the `dime` CLI.

pub mod cli;
pub mod error;
pub mod format;
pub mod http;
pub mod model;
pub mod plugin;
pub mod registry;
pub mod runtime;
pub mod search;
pub mod service;
pub mod store;

pub use error::{Error, Result};
pub use service::Engine;
