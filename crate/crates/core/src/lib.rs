//! Simulation, optimization, and optimality certification for nonlinear
//! control systems with time delays driven by vector-valued impulsive
//! (bounded-variation) controls.
//!
//! The crate works through an equivalent time-space representation: a BV
//! control becomes a Lipschitz parameterization of its completed graph, the
//! delay system becomes a delay-free block system integrated by the method of
//! steps, and the impulsive trajectory is read back through the inverse time
//! change. On top of that sit a direct-transcription solver for the Mayer
//! problem and maximum-principle checkers on both sides of the equivalence.

pub mod adjoint;
pub mod cone;
pub mod dynamics;
pub mod equivalence;
pub mod error;
pub mod extsys;
pub mod expr;
pub mod graphcomp;
pub mod hermite;
pub mod measure;
pub mod piecewise;
pub mod report;
pub mod util;

pub use adjoint::{
    check_extended_pmp, check_impulse_pmp, cost_gradient, impulse_multipliers,
    integrate_extended_adjoint, ExtendedMultipliers, ImpulseMultipliers, PMPReport,
};
pub use cone::ControlCone;
pub use dynamics::{DelayDynamics, Grid, MayerProblemData, Target};
pub use error::{Error, Result};
pub use equivalence::{
    extended_to_impulse, extract_jump_arcs, gc_solution, impulse_to_extended, simulate_impulse,
    strict_sense_approximation, ImpulseProcess, ImpulseTrajectory, JumpArc, JumpArcSet,
    StrictApproximation,
};
pub use extsys::{integrate_acs, richardson_check, ExtendedProcess};
pub use expr::{parse_expression, ExpressionAst};
pub use graphcomp::{
    canonicalize, rectilinear_gc, reparameterize, tilde_concatenate, validate_extended_control,
    ExtendedControl, GraphCompletionMeta,
};
pub use measure::{
    validate_impulse_control, AttachedControl, AttachedFamily, ImpulseControl, ScalarMeasure,
    VectorMeasure,
};
pub use piecewise::{Monotone, PwlCurve};
pub use report::{ConditionCheck, ValidationReport};
