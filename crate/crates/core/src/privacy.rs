//! Gradient clipping, Gaussian perturbation and per-round noise calibration.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::topology::CommGraph;

#[derive(Debug, Error, PartialEq)]
pub enum PrivacyError {
    #[error("clipping threshold must be positive, got {0}")]
    ClipThreshold(f64),
    #[error("gradient has a non-finite entry at coordinate {0}")]
    NonFinite(usize),
    #[error("invalid privacy parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
}

fn param(name: &'static str, reason: impl Into<String>) -> PrivacyError {
    PrivacyError::Parameter {
        name,
        reason: reason.into(),
    }
}

/// Privacy budget and the quantities the noise calibration depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpBudget {
    pub epsilon: f64,
    pub delta: f64,
    /// Clipping threshold `C`.
    pub clip_c: f64,
    /// Assumed lower bound on any normalized Shapley share
    /// `phi_hat_j / sum_k phi_hat_k`.
    pub phi_min: f64,
}

impl DpBudget {
    pub fn validate(&self) -> Result<(), PrivacyError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(param("epsilon", format!("must be positive, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(param("delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.clip_c > 0.0) {
            return Err(PrivacyError::ClipThreshold(self.clip_c));
        }
        if self.phi_min == 0.0 {
            return Err(param(
                "phi_min",
                "a zero share floor makes the required noise unbounded",
            ));
        }
        if !(self.phi_min > 0.0 && self.phi_min <= 1.0) {
            return Err(param("phi_min", format!("must lie in (0, 1], got {}", self.phi_min)));
        }
        Ok(())
    }

    /// `1 / max_i |M_i|`, the default share floor for a graph.
    pub fn default_phi_min(g: &CommGraph) -> f64 {
        1.0 / g.max_degree().max(1) as f64
    }
}

/// A budget together with the noise level actually used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConfig {
    pub budget: DpBudget,
    pub sigma: f64,
}

impl DpConfig {
    /// Uses the smallest `sigma` that meets the budget on `g`.
    pub fn calibrated(g: &CommGraph, budget: DpBudget) -> Result<Self, PrivacyError> {
        let sigma = calibrate_sigma(g, &budget)?;
        Ok(Self { budget, sigma })
    }
}

/// Rescales `g` to norm at most `c`: `g / max(1, |g| / c)`.
///
/// `c` may be `+inf`, which disables clipping.
pub fn clip_gradient(g: &[f64], c: f64) -> Result<Vec<f64>, PrivacyError> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, c)?;
    Ok(out)
}

/// In-place variant of [`clip_gradient`]; returns the norm before clipping.
pub fn clip_in_place(g: &mut [f64], c: f64) -> Result<f64, PrivacyError> {
    if !(c > 0.0) {
        return Err(PrivacyError::ClipThreshold(c));
    }
    if let Some(k) = g.iter().position(|v| !v.is_finite()) {
        return Err(PrivacyError::NonFinite(k));
    }
    let norm = l2_norm(g);
    let factor = (norm / c).max(1.0);
    if factor > 1.0 {
        g.iter_mut().for_each(|v| *v /= factor);
    }
    Ok(norm)
}

/// `g + n` with `n ~ N(0, sigma^2 I)`, one standard normal per coordinate in order.
pub fn gaussian_perturb<R: Rng + ?Sized>(g: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    let mut out = g.to_vec();
    perturb_in_place(&mut out, sigma, rng);
    out
}

pub fn perturb_in_place<R: Rng + ?Sized>(g: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    for v in g.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += sigma * z;
    }
}

/// Per-round L2 sensitivity bound of agent `agent`'s aggregated gradient:
/// `2C / omega_min + sum_{j in M_i} 2C / omega_ij`.
pub fn sensitivity_bound(g: &CommGraph, agent: usize, c: f64) -> f64 {
    let inv_sum: f64 = g.neighbors(agent).iter().map(|&j| 1.0 / g.weight(agent, j)).sum();
    2.0 * c * (1.0 / g.omega_min() + inv_sum)
}

/// Smallest `sigma` giving `(epsilon, delta)`-DP per round:
///
/// ```text
/// max_i  sens_i * sqrt(2 ln(1.25 / delta)) / (phi_min * epsilon * sqrt(sum_{j in M_i} omega_ij^-2))
/// ```
pub fn calibrate_sigma(g: &CommGraph, budget: &DpBudget) -> Result<f64, PrivacyError> {
    budget.validate()?;
    let gauss = (2.0 * (1.25 / budget.delta).ln()).sqrt();
    let sigma = (0..g.agents())
        .map(|i| {
            let inv_sq: f64 = g.neighbors(i).iter().map(|&j| g.weight(i, j).powi(-2)).sum();
            sensitivity_bound(g, i, budget.clip_c) * gauss
                / (budget.phi_min * budget.epsilon * inv_sq.sqrt())
        })
        .fold(0.0, f64::max);
    Ok(sigma)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
