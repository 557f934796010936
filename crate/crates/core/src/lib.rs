#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod array;
pub mod drive;
pub mod error;
pub mod greens;
pub mod modes;
pub mod precision;
pub mod quad;
pub mod scene;
pub mod sense;
pub mod spectra;
pub mod steady;
pub mod units;

pub use array::{build_array, mirror, Dipole, DetuningProfile, EmitterArray, Environment, Geometry, Point, C64};
pub use drive::{Direction, DriveField, DriveKind, GaussianBeam};
pub use error::{Error, Result};
pub use greens::{coupling_matrix, CouplingMatrices};
pub use modes::{eigenmodes, BrightDarkModel, LatticeMode, ModeClass, ModeSet};
pub use spectra::{sweep_spectrum, DetectionLayout, GridSpec, SpectrumRecord, TransmissionModel};
pub use steady::{motion_averaged_inputs, remove_atoms, solve_steady_state, MotionModel, Quadrature, SteadyState};
pub use units::{Preset, Units, K0};
