//! Simulation harness: data-generating designs, the warp-speed loop and the
//! published rejection-rate tables.

pub mod dgp;
pub mod tables;
pub mod warp;

pub use dgp::{generate_dgp, Design, DgpConfig, OutcomeKind, Simulated};
pub use warp::{run_warp_speed, McResult, McTest, PropensitySource};
