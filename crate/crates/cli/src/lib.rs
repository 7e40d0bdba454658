//! Command-line front end and HTTP service for kbdialog.

pub mod commands;
pub mod server;
