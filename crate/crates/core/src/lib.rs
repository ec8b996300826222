//! Discrete optimal transport with learned Sinkhorn warm starts.
//!
//! This crate holds everything that does not involve a neural network:
//! measures and costs on grids, an exact network-simplex solver with
//! certified dual potentials, linear- and log-domain Sinkhorn with pluggable
//! initialization, barycenters by potential descent, and the dataset and
//! container formats shared with the training crate.

pub mod barycenter;
pub mod data;
pub mod error;
pub mod exact;
pub mod measures;
pub mod sinkhorn;
mod sum;

pub use barycenter::{
    barycenter_descent, noise_cancellation_check, project_simplex, BarycenterConfig,
    BarycenterResult, ExactPotentials, NoiseReport, PotentialOracle, PotentialSource,
    SimplexHandling, StepRule,
};
pub use data::{Container, DatasetKind, DatasetSpec, Tensor};
pub use error::{Error, Result};
pub use exact::{solve_exact, verify_certificate, CertificateReport, ExactSolution, ExactSolver};
pub use measures::{
    build_cost, c_transform, center_f_zero_sum, dual_value, entropic_dual_value,
    entropic_primal_objective, entropy, gibbs_kernel, marginal_constraint_violation, primal_cost,
    Centering, CostMatrix, Direction, DiscreteMeasure, DualPair, ExtendedReal, GridGeometry,
    TransportPlan,
};
pub use sinkhorn::{
    relative_distance_error, scalings_to_potentials, sinkhorn_run, sinkhorn_run_log_init,
    warm_start_vector, Domain, SinkhornConfig, SinkhornTrace, TraceRecord,
};
pub use sum::{dot, pairwise_sum};
