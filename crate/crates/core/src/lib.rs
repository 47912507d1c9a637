//! Chaos expansions, asymptotic variances and Monte Carlo verification for
//! integrals of functionals of stationary Gaussian vector fields.
//!
//! For a jointly stationary field `ξ : ℝ^n → ℝ^m` with covariance
//! `r_{ij}(x - y) = E[ξ_i(x) ξ_j(y)]`, `r(0) = Id`, and a centered functional
//! `G ∈ L²(γ_m)` of Hermite rank `d` with `r_{jk} ∈ L^d`, the normalized
//! integral `L_s = (2s)^{-n/2} ∫_{[-s,s]^n} G(ξ(x)) dx` is asymptotically
//! `N(0, V)` with `V = ∫ C_G(x) dx`.

pub mod chaos;
pub mod cli;
pub mod config;
pub mod covariance;
pub mod diagram;
pub mod error;
pub mod functional;
pub mod harness;
pub mod hermite;
pub mod numeric;
pub mod rng;
pub mod second_chaos;
pub mod simulate;
pub mod spectral;
pub mod stats;
pub mod variance;

pub use chaos::{chaos_coefficients, evaluate_g_q, hermite_rank, ChaosExpansion, ChaosTerm};
pub use covariance::{check_c1, psi, whiten, C1Report, CovarianceModel};
pub use diagram::{pair_expectation, CrossCovarianceMatrix};
pub use error::{Error, Result};
pub use functional::{Functional, FunctionalSpec};
pub use harness::{
    clt_test, compute_l_s, compute_z_path, increment_test, BMObservation, BMPath,
    VerificationReport,
};
pub use hermite::{hermite_eval, multi_hermite_eval, MultiIndex};
pub use second_chaos::{c_matrix, v2_spectral, v2_trace, SecondChaosMatrix};
pub use simulate::{empirical_covariance, simulate, FieldSample, GridSpec};
pub use spectral::{HermiteAmplitude, SpectralModel};
pub use variance::{c_g, v_limit, v_s, VarianceReport};
