//! Distributed optimal power flow for radial distribution feeders.
//!
//! The feeder is modeled with the branch-flow equations in squared voltages
//! and currents. [`partition`] splits it into subtree areas, [`opf`] builds
//! the area (or whole-network) nonlinear programs, and [`coordinator`]
//! iterates area solves with a damped fixed-point exchange of interface
//! voltages and flows. [`pfsweep`] is an independent power-flow solver used
//! to check any resulting dispatch, and [`synth`] generates test feeders.

pub mod coordinator;
pub mod network;
pub mod opf;
pub mod partition;
pub mod pfsweep;
pub mod synth;

pub use coordinator::{
    fpi_update, initialize_boundary, residual, run_central, run_distributed, BoundaryState,
    CoordinatorError, FpiConfig, RunRecord,
};
pub use network::{validate_radial, NetworkError, Power, RadialNetwork};
pub use opf::{build_central, build_subproblem, Objective, OpfSettings};
pub use partition::{decompose, interface_schedule, Partition};
pub use synth::{build_feeder, place_ders, DerScenario, FeederSpec};
