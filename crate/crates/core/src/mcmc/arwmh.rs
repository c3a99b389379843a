//! Adaptive random-walk Metropolis-Hastings steps.
//!
//! The step size follows a diminishing Robbins-Monro recursion on the log
//! scale, `log(step) += c * i^(-kappa) * (accepted - target)`, driving the
//! acceptance rate towards its target (0.30 by default). Adaptation stops
//! once the state is frozen, which preserves ergodicity after burn-in.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::dist::gamma_logpdf;

/// Proposal families used across the conditional updates. All of them keep
/// positive-support targets on their support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProposalFamily {
    /// Multiplicative lognormal walk for positive parameters.
    LogNormal,
    /// Lognormal walk truncated above, for parameters living on (0, upper).
    TruncLogNormal { upper: f64 },
    /// Additive symmetric normal walk for unconstrained parameters.
    Normal,
    /// Gamma proposal with mean at the current value and relative spread
    /// controlled by the step size.
    Gamma,
}

/// Step-size state of one adaptive chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptState {
    log_step: f64,
    target: f64,
    c: f64,
    kappa: f64,
    iterations: u64,
    accepted: u64,
    nan_rejections: u64,
    frozen: bool,
}

/// Default target acceptance rate.
pub const TARGET_ACCEPTANCE: f64 = 0.30;

const NAN_WARN_THRESHOLD: u64 = 100;

impl AdaptState {
    pub fn new(initial_step: f64) -> Self {
        Self::with_schedule(initial_step, TARGET_ACCEPTANCE, 1.0, 0.6)
    }

    pub fn with_schedule(initial_step: f64, target: f64, c: f64, kappa: f64) -> Self {
        assert!(initial_step > 0.0, "step size must be positive");
        assert!((0.0..1.0).contains(&target) && target > 0.0);
        Self {
            log_step: initial_step.ln(),
            target,
            c,
            kappa,
            iterations: 0,
            accepted: 0,
            nan_rejections: 0,
            frozen: false,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.iterations == 0 {
            return 0.0;
        }
        self.accepted as f64 / self.iterations as f64
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Stop adapting; the chain becomes a fixed-kernel Metropolis sampler.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Reset the acceptance counters (step size is kept), so rates can be
    /// reported for a post-freeze window.
    pub fn reset_counters(&mut self) {
        self.iterations = 0;
        self.accepted = 0;
    }

    fn record(&mut self, accepted: bool) {
        self.iterations += 1;
        if accepted {
            self.accepted += 1;
        }
        if !self.frozen {
            let gain = self.c * (self.iterations as f64).powf(-self.kappa);
            let indicator = if accepted { 1.0 } else { 0.0 };
            self.log_step = (self.log_step + gain * (indicator - self.target)).clamp(-15.0, 15.0);
        }
    }

    fn record_nan(&mut self) {
        self.nan_rejections += 1;
        if self.nan_rejections == NAN_WARN_THRESHOLD {
            log::warn!(
                "proposal log-target returned NaN {NAN_WARN_THRESHOLD} times; treating as rejections"
            );
        }
    }
}

/// Outcome of one Metropolis-Hastings step.
#[derive(Debug, Clone, Copy)]
pub struct StepResult {
    pub value: f64,
    pub log_target: f64,
    pub accepted: bool,
}

fn std_normal() -> statrs::distribution::Normal {
    statrs::distribution::Normal::new(0.0, 1.0).expect("unit normal")
}

/// One adaptive MH step when the log target at the current point is already
/// known; avoids re-evaluating what the caller has cached.
pub fn arwmh_step_cached<R, F>(
    rng: &mut R,
    current: f64,
    current_lp: f64,
    log_target: F,
    family: ProposalFamily,
    adapt: &mut AdaptState,
) -> StepResult
where
    R: Rng + ?Sized,
    F: Fn(f64) -> f64,
{
    let step = adapt.step_size();
    let (proposal, log_hastings) = match family {
        ProposalFamily::LogNormal => {
            let eps: f64 = rand_distr::StandardNormal.sample(rng);
            let prop = current * (step * eps).exp();
            // q(x|y) / q(y|x) for a lognormal walk reduces to y / x.
            (prop, prop.ln() - current.ln())
        }
        ProposalFamily::TruncLogNormal { upper } => {
            let norm = std_normal();
            let ln_upper = upper.ln();
            let cap_x = norm.cdf((ln_upper - current.ln()) / step);
            let u: f64 = rng.random::<f64>() * cap_x;
            let prop = (current.ln() + step * norm.inverse_cdf(u.max(f64::MIN_POSITIVE))).exp();
            let prop = prop.min(upper * (1.0 - 1e-15));
            let cap_y = norm.cdf((ln_upper - prop.ln()) / step);
            (
                prop,
                prop.ln() - current.ln() + cap_x.ln() - cap_y.ln(),
            )
        }
        ProposalFamily::Normal => {
            let eps: f64 = rand_distr::StandardNormal.sample(rng);
            (current + step * eps, 0.0)
        }
        ProposalFamily::Gamma => {
            let shape = step.powi(-2);
            let prop = rand_distr::Gamma::new(shape, current / shape)
                .expect("positive shape/scale")
                .sample(rng)
                .max(f64::MIN_POSITIVE);
            let fwd = gamma_logpdf(prop, shape, current / shape);
            let bwd = gamma_logpdf(current, shape, prop / shape);
            (prop, bwd - fwd)
        }
    };

    let prop_lp = log_target(proposal);
    if prop_lp.is_nan() {
        adapt.record_nan();
        adapt.record(false);
        return StepResult {
            value: current,
            log_target: current_lp,
            accepted: false,
        };
    }
    let log_ratio = prop_lp - current_lp + log_hastings;
    let accepted = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
    adapt.record(accepted);
    if accepted {
        StepResult {
            value: proposal,
            log_target: prop_lp,
            accepted: true,
        }
    } else {
        StepResult {
            value: current,
            log_target: current_lp,
            accepted: false,
        }
    }
}

/// One adaptive MH step on a scalar target.
pub fn arwmh_step<R, F>(
    rng: &mut R,
    current: f64,
    log_target: F,
    family: ProposalFamily,
    adapt: &mut AdaptState,
) -> (f64, bool)
where
    R: Rng + ?Sized,
    F: Fn(f64) -> f64,
{
    let current_lp = log_target(current);
    let out = arwmh_step_cached(rng, current, current_lp, log_target, family, adapt);
    (out.value, out.accepted)
}
