//! Closed-loop benchmark engine for vehicle motion planners.

pub mod agents;
pub mod controller;
pub mod error;
pub mod geometry;
pub mod map;
pub mod metrics;
pub mod planners;
pub mod protocol;
pub mod scenario;
pub mod scoring;
pub mod sim;
pub mod tagging;
pub mod vehicle;

pub use error::ValidationError;
