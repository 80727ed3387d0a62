//! Guaranteed-convergent minimization of Kikuchi and Bethe free energies.
//!
//! The free energy of a region graph is minimized by a double loop: each
//! outer step replaces it by a convex upper bound that touches it at the
//! current pseudo-marginals, and each inner loop minimizes that bound under
//! the consistency constraints with generalized belief propagation. The
//! bound variants differ in which entropy terms they linearize; their
//! inner-loop overcounting numbers come from allocation problems on the
//! region graph, solved by max-flow.
//!
//! Modules, bottom up:
//! - [`regions`]: region graphs, Moebius numbers, structural queries.
//! - [`model`]: factor models, benchmark generators and model files.
//! - [`energy`]: free-energy functionals and divergences.
//! - [`bounds`]: convexity checks and bound construction.
//! - [`propagation`]: message passing.
//! - [`doubleloop`]: the outer loop and run traces.
//! - [`oracle`]: exact inference by enumeration.
//! - [`experiment`]: the experiment harness behind the `kikuchi` binary.

pub mod bounds;
pub mod doubleloop;
pub mod energy;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod model;
pub mod oracle;
pub mod propagation;
pub mod regions;
pub mod table;

/// Index of a model variable.
pub type VarId = usize;

pub use bounds::{check_conv2_bound, check_convex_over_constraints, make_bound_spec, tilde_potentials, Allocation, BoundSpec, Variant};
pub use doubleloop::{compare, minimize, OuterSettings, RunTrace, Termination};
pub use energy::{f_bound, f_kikuchi, kl_marginals, Beliefs};
pub use error::{Error, Result};
pub use model::{generate, FactorModel, Family, ModelSpec};
pub use oracle::{exact_inference, ExactResult};
pub use propagation::{constraint_residual, run_gbp, InnerSettings, MessageSet, Propagator};
pub use regions::{Region, RegionGraph, RegionKind};
