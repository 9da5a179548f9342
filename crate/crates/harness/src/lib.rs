//! Scenario generation, batch evaluation and reporting.

pub mod batch;
pub mod expert;
pub mod generate;
pub mod roads;
