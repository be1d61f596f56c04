//! Cramér-Rao bound computation and minimization for multi-IRS
//! collaborative TOA localization.
//!
//! A base station illuminates K semi-passive intelligent reflecting surfaces
//! (IRSs). Each IRS steers its reflection toward the targets and listens for
//! the echoes with its own sensors. The crate computes the position CRB of
//! every target and minimizes it over transmit power, reflect phases and the
//! set of active IRSs:
//!
//! - [`single_target`]: Dinkelbach + ADMM power allocation with closed-form
//!   phases and two-stage IRS selection.
//! - [`multi_target`]: max-min CRB by bisection over a QoS level, alternating
//!   SCA power allocation with an SDR reflect design.
//! - [`experiment`]: scenario generation, baselines and parameter sweeps.
//! - [`oracles`]: brute-force references used by the test suite.

pub mod beamforming;
pub mod channel;
pub mod convex;
pub mod crb;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod model;
pub mod multi_target;
pub mod oracles;
pub mod single_target;

pub use beamforming::BeamSolution;
pub use channel::{build_channels, ChannelSet};
pub use crb::{CrbReport, FimBlocks, SolverTrace};
pub use error::{Error, Result};
pub use geometry::{GeometryCoefficients, Position, ReflectInit, Scenario, SolverSettings};
pub use model::Network;
