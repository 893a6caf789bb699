//! Gibbs sampler for the mixture with Pólya–Gamma augmented mixing
//! proportions and latent log-incomes.

mod chain;
mod conditionals;
mod grid;
mod sweep;

pub use chain::{bin_midpoint, fit, grid_for, initial_state, log_posterior, run_chain_with};
pub use conditionals::{
    rho_log_weights, temporal_sum_of_squares, update_alpha, update_eta, update_eta0, update_mu, update_rho,
    update_tau, update_u, Augmentation, TemporalPrior,
};
pub use grid::{Interpolation, RhoGrid};
pub use sweep::{
    augment_component, gibbs_sweep, update_component_counts, update_components, CellRef, LatentState,
    SweepWorkspace,
};
