//! Optimal information/disturbance measurement schemes for qudits.
//!
//! A signal qudit is coupled to a single probe qudit through the controlled
//! shift gate `C_d` and the probe is read out in the computational basis.
//! The probe preparation angle `theta` interpolates between a projective
//! measurement (maximum information, maximum disturbance) and a blind
//! repeater (no information, no disturbance), and every intermediate angle
//! sits on the optimal estimation/transmission fidelity boundary.
//!
//! Modules:
//!
//! - [`qlinalg`]: dense complex matrices, pure states, Haar sampling.
//! - [`measurement`]: probe state, `C_d` gate and the Kraus operators.
//! - [`fidelity`]: per-state, closed-form and Monte Carlo fidelities and the
//!   trade-off bound.
//! - [`sequential`]: N-user transmission lines, outcome enumeration and the
//!   heterogeneous two-user line.
//! - [`cli`]: command-line front end (sweeps, figure data, verification).

#![forbid(unsafe_code)]

pub mod cli;
pub mod error;
pub mod fidelity;
pub mod measurement;
pub mod qlinalg;
pub mod sequential;
pub mod verify;

pub use error::{Error, Result};
pub use fidelity::{BoundReport, Estimate, FidelityPoint, Method};
pub use measurement::{MeasurementModel, ProbeConfig};
pub use qlinalg::{ComplexMatrix, PureState};
pub use sequential::{Budget, ChainConfig, OutcomeSequence};
