pub mod adjoint;
pub mod cli;
pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod forcing;
pub mod integrate;
pub mod io;
pub mod network;
pub mod optimize;
pub mod sbp;
pub mod scenarios;

pub use error::{Error, Result};
