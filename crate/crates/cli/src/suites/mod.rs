//! One module per subcommand.

pub mod approx;
pub mod cap_law;
pub mod isom;
pub mod potential;
