pub mod case_study;
pub mod error;
pub mod normal;
pub mod options;
pub mod pooling;
pub mod scenario;
pub mod service;
pub mod solver;
pub mod views;
pub mod workflow;

pub use error::{Error, Result};
