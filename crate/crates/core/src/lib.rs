pub mod anomaly;
pub mod data;
pub mod error;
pub mod graph;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod persist;
pub mod training;

pub use error::{Error, Result};
