//! The escalation engine as a service: layered configuration, HTTP providers,
//! webhook alerts, the HTTP/SSE API used by the analyst console, and the
//! library side of the `escalate` CLI.

pub mod alerts;
pub mod api;
pub mod commands;
pub mod config;
pub mod providers;
