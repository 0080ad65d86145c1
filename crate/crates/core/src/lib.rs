pub mod auth;
pub mod canonical;
pub mod catalog;
pub mod error;
pub mod federation;
pub mod inference;
pub mod platform;
pub mod provenance;
pub mod quality;
pub mod ranker;
pub mod scheduler;
pub mod secrets;
pub mod types;
