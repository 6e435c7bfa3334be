//! Entropic optimal transport between discrete measures.
//!
//! The solver works on dual potentials in the log domain, so every
//! exponential sum goes through a max-shifted log-sum-exp and stays finite
//! for very small `epsilon`. The debiased divergence
//! `S = W(a,b) - W(a,a)/2 - W(b,b)/2` and its gradient come from three
//! solves; gradients use the converged plans directly (envelope theorem),
//! never the unrolled iterations.

mod cost;
mod divergence;
mod exact;
mod measure;
mod sinkhorn;

pub use cost::{cost_grad_x, lp_distance, pairwise_cost, CostMatrix};
pub use divergence::{
    divergence_grad_x, energy_mmd, sinkhorn_divergence, sinkhorn_divergence_with_grad,
    DivergenceParts,
};
pub use exact::exact_ot_uniform;
pub use measure::DiscreteMeasure;
pub use sinkhorn::{median, sinkhorn_solve, SinkhornConfig, SinkhornSolution};
