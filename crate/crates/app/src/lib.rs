//! Command line and HTTP front end for the typography model.

pub mod api;
pub mod cli;
pub mod config;
pub mod server;
