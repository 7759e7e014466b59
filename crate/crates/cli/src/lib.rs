//! Command-line tools and HTTP service around `dsattr-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod render;
pub mod server;
pub mod workspace;

pub use commands::{run, Cli, Command};
pub use config::{Config, SetKey};
pub use error::{Failure, EXIT_INPUT, EXIT_INTERNAL, EXIT_OK, EXIT_STATE};
pub use server::{router, Session};
pub use workspace::{LogStore, Workspace};
