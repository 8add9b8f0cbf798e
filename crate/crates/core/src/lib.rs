//! Computable model of permutation groups metrized by weighted
//! submeasures on the naturals: exact evaluation of the submeasures,
//! finite-support permutations with the induced metric, a block schedule
//! realizing every finite pattern tuple cofinally on a canonical set,
//! and stage-wise conjugacy approximants with exact rational
//! certificates for every inequality involved.

pub mod conjugacy;
pub mod generic_tuple;
pub mod permutation;
pub mod ratio;
pub mod selfcheck;
pub mod submeasure;

pub use conjugacy::{
    build_witness, check_targets, choose_parameters, convergence_table, dense_approx,
    dense_parameters, convergence_oracle, ApproxParameters, ConjugacyError, ConjugacyWitness,
    ConvergenceRow, TargetTuple,
};
pub use generic_tuple::{BlockSchedule, GenericTuple, PatternTuple, ScheduleError};
pub use permutation::{distance, in_v_epsilon, CycleType, FinitePermutation};
pub use submeasure::{
    find_tail_cutoff, phi_upto, tail_phi, validate_weights, CanonicalIdealSet, Submeasure,
    SubmeasureError,
};
