//! Simulation and verification toolkit for nonlinear resistive-capacitive
//! networks with threshold (dielectric-breakdown) link laws.
//!
//! With threshold-like characteristics, injecting a current at one node
//! drives the transient through a branching phase and settles on a steady
//! state whose support is the source-to-ground path of least total
//! dielectric rigidity. The crate provides the network model, the stiff
//! transient integrator, a direct steady-state solver, an independent
//! shortest-path oracle with an LP cross-check, and a reproducible
//! experiment harness.

pub mod characteristic;
pub mod experiment;
pub mod functional;
pub mod netfile;
pub mod network;
pub mod path;
pub mod steady;
pub mod transient;

mod simplex;

pub use characteristic::{CharacteristicError, LinkCharacteristic};
pub use network::{build_grid, build_grid_with_source, Link, LinkSpec, NetworkGraph, Terminal};
pub use path::{min_threshold_path, PathResult};
pub use steady::{solve_linear_oracle, solve_steady, SteadyStateSolution};
pub use transient::{integrate, InjectionProfile, IntegratorControls, TrajectoryRecord};
