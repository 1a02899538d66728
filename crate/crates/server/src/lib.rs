//! HTTP API and command-line front end for `textclust`.

pub mod api;
pub mod cli;
