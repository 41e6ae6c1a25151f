pub mod api;
pub mod bandit;
pub mod comms;
pub mod config;
pub mod log;
pub mod oracle;
pub mod replay;
pub mod session;
pub mod story;
