pub mod error;
pub mod fft;
pub mod grid;
pub mod io;
pub mod iteration;
pub mod jets;
pub mod geometry;
pub mod ops;
pub mod params;
pub mod profiles;
pub mod quadrature;
pub mod time;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{Grid3, PeriodicField, Rank};
