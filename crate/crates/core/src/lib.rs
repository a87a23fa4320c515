pub mod error;
pub mod evolve;
pub mod gauge;
pub mod grid;
pub mod io;
pub mod linop;
pub mod modulate;
pub mod numerics;
pub mod scenario;
pub mod soliton;
pub mod stationary;
pub mod virial;

mod cli;

pub use error::{CssError, Result};

pub fn run_cli() -> i32 {
    cli::run()
}
