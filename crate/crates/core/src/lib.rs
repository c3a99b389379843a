//! State-space modelling of multivariate count time series with
//! autoregressive-Gamma latent intensities and Markov-switching
//! multiplicative amplification.
//!
//! The observation model couples J count series and one global series:
//!
//! ```text
//! z_t  | w_t        ~ Poi(w_t + exp(v_z' phi_z))
//! y_jt | w_t, x_jt  ~ Poi(w_t + x_jt (1 + xi_{j,s_jt}) + exp(v_j' phi_j))
//! x_{j,t+1} | x_jt  ~ NcGa(alpha_j, beta_j x_jt, delta_j)
//! w_{t+1}   | w_t   ~ NcGa(alpha_w, beta_w w_t, delta_w)
//! ```
//!
//! with per-series hidden Markov regime chains s_jt selecting the active
//! amplification factor (regime 1 pins xi to zero). Estimation is Bayesian:
//! a two-block Gibbs sampler alternates particle-filter draws of the latent
//! intensity paths with forward-filtering backward-sampling of the regime
//! chains and adaptive Metropolis-Hastings / conjugate updates of the static
//! parameters.
//!
//! Modules:
//! - [`dist`]: the probability kernels (non-central Gamma, truncated Gamma,
//!   Dirichlet, Poisson, Gamma-shape conjugate grid sampler);
//! - [`model`]: data containers, intensities, complete-data log-likelihood;
//! - [`filter`]: selection/mutation particle filters for the latent paths;
//! - [`ffbs`]: exact regime-chain simulation;
//! - [`mcmc`]: the Gibbs sampler and its conditional updates;
//! - [`simulate`]: the generative simulator;
//! - [`analysis`]: intensity decomposition, regime reports, rank
//!   correlations, and Bayesian linear regression with DIC.

pub mod analysis;
pub mod dist;
pub mod ffbs;
pub mod filter;
pub mod math;
pub mod mcmc;
pub mod model;
pub mod simulate;

pub use model::{CountPanel, LatentPaths, StaticParams};
