pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod head;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod registry;
pub mod rgcn;
pub mod scene;
pub mod seed;
pub mod streams;
pub mod trainer;

pub use error::{PriseError, Result};
