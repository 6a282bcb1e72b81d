//! Configuration, experiment runs, traces, the verification suite, the live
//! session service and adapter conformance checks.

pub mod config;
pub mod experiment;
pub mod trace;
pub mod session;
pub mod verify;
