pub mod dataset;
pub mod io;
pub mod synthetic;
