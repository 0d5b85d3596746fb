//! Online impedance-gain optimization with a barrier-constrained safety filter.
//!
//! The impedance error dynamics are written in control-affine form with the
//! gains as inputs ([`dynamics`]). A low-rate loop tunes those gains against a
//! time-weighted velocity-error cost over recorded force windows
//! ([`objective`], [`optimizer`]). A per-tick quadratic program keeps the
//! position error inside a box ([`safety`]). [`runtime`] closes the loop
//! against simulated surroundings ([`environment`]) described by a
//! [`scenario`] file.

pub mod dynamics;
pub mod environment;
pub mod objective;
pub mod optimizer;
pub mod runtime;
pub mod safety;
pub mod scenario;

pub use dynamics::{GainBounds, GainInput, ImpedanceGains, PlantState, Wrench};
pub use runtime::{compare_baselines, compute_metrics, run_episode, ControllerMode, TrajectoryLog};
pub use scenario::{Scenario, ScenarioError};
