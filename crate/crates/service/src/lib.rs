//! Command-line pipeline and HTTP inference service for the `rpnformer`
//! recognizer.
//!
//! Every subcommand reads files and writes JSON, so runs can be chained
//! and diffed. The server holds one checkpoint and answers
//! `POST /recognize`, `GET /model` and `GET /healthz`.

pub mod cli;
pub mod config;
pub mod recognize;
pub mod server;
