//! Command line and HTTP front ends for `dataforge`.

pub mod cli;
pub mod server;

pub use cli::cli_dispatch;
