//! Spin-1 overtone resonance toolkit.
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod analytics;
pub mod experiment;
pub mod fit;
pub mod hamiltonian;
pub mod oracle;
pub mod spin;
pub mod validation;
pub mod zfs;

pub use analytics::{AnalyticsError, AxisKind, Spectrum, UniformAxis};
pub use experiment::{ExperimentError, IseConfig, LevelPopulations, TripletPopulations};
pub use hamiltonian::{FieldContext, HamiltonianError, ShiftModel, SwTransform};
pub use oracle::{Frame, OracleError, TransitionSet};
pub use spin::{Label, Operator3, SpinError, State3, TimeTrace};
pub use zfs::{Fgh, Orientation, PowderGrid, PowderScheme, ZfsError, ZfsTensor, GAMMA_E};
pub use validation::{run_suite, CriterionOutcome, Suite, ValidationOptions, ValidationReport};
