//! Scenario runner for the detlab library.

pub mod run;
pub mod scenario;
