//! Exact and estimated behaviour of the meta-model, rejection-rate sweeps and
//! distribution summaries.

mod ecdf;
mod estimate;
mod likelihood;
mod sweep;

pub use ecdf::{ecdf_and_histograms, Ecdf, Histogram, SeriesBundle};
pub use estimate::{likelihood_m_bounds, rejection_prob_mc, CiMethod, RejectionEstimate};
pub use likelihood::{
    expected_iterations, likelihood_m_exact, m_distribution, multiplier, rejection_profile, MDistribution, MLikelihood,
    RejectionProfile,
};
pub use sweep::{
    default_k_grid, frr_trr_sweep, DEFAULT_GRID_POINTS, generation_frr, write_sweep_csv, SweepPoint, SweepResult, TargetFrr, TARGET_FRRS,
};
