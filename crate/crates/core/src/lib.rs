pub mod calibration;
pub mod config;
pub mod dialogue;
pub mod digest;
pub mod elo;
pub mod error;
pub mod io;
pub mod judge;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod negatives;
pub mod pipeline;
pub mod prompts;
pub mod rubric;
pub mod teacher;
pub mod text;

pub use error::{Error, Result};
