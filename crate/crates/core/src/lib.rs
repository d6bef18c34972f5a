pub mod analysis;
pub mod classifiers;
pub mod cli;
pub mod error;
pub mod fbopt;
pub mod io;
pub mod net;
pub mod optim;
pub mod spd;
pub mod train;
pub mod trial;

pub use error::{Error, Result};
