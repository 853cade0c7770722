//! Command-line pipeline and HTTP API over region directories.
//!
//! The `streetpattern` binary wraps [`commands::run`]; [`http::router`]
//! is exposed so the API can be exercised in-process.

pub mod commands;
pub mod http;
