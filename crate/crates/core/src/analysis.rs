//! Calculators for the convergence theory: the admissible learning-rate
//! window, the non-asymptotic bound on the average squared gradient of the
//! network-average model, and the minimum round count for the `1/sqrt(T)`
//! regime.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::data::LabeledDataset;
use crate::model::{ModelError, ModelSpec};
use crate::privacy::l2_norm;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("invalid constant `{name}`: {reason}")]
    Constant { name: &'static str, reason: String },
    #[error("theorem hypothesis violated: m1 = {m1} must be positive")]
    HypothesisViolated { m1: f64 },
    #[error("round count must be positive")]
    NoRounds,
    #[error("smoothness estimation needs at least one pair")]
    NoPairs,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Problem, network and algorithm constants the theory is stated in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstants {
    /// Smoothness constant `L` of every local objective.
    pub l: f64,
    /// Bound `zeta` on stochastic-gradient deviation.
    pub zeta: f64,
    /// Bound `kappa` on local-vs-global gradient deviation.
    pub kappa: f64,
    /// Squared second-largest eigenvalue magnitude of `W`.
    pub rho: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub clip_c: f64,
    /// Model dimension.
    pub d: usize,
    /// Number of agents.
    pub m: usize,
    pub omega_min: f64,
    /// `F(x_bar^0) - F*`.
    pub f_gap: f64,
}

impl TheoryConstants {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        fn bad(name: &'static str, reason: impl Into<String>) -> Result<(), AnalysisError> {
            Err(AnalysisError::Constant {
                name,
                reason: reason.into(),
            })
        }
        for (name, v) in [
            ("zeta", self.zeta),
            ("kappa", self.kappa),
            ("gamma", self.gamma),
            ("sigma", self.sigma),
            ("clip_c", self.clip_c),
            ("f_gap", self.f_gap),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, format!("must be finite and nonnegative, got {v}"));
            }
        }
        if !(self.l > 0.0 && self.l.is_finite()) {
            return bad("l", format!("must be finite and positive, got {}", self.l));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad("rho", format!("must lie in [0, 1), got {}", self.rho));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha", format!("must lie in [0, 1), got {}", self.alpha));
        }
        if !(self.omega_min > 0.0 && self.omega_min <= 1.0) {
            return bad("omega_min", format!("must lie in (0, 1], got {}", self.omega_min));
        }
        if self.m == 0 {
            return bad("m", "needs at least one agent");
        }
        Ok(())
    }
}

/// Learning rates for which the convergence theorem applies.
#[derive(Debug, Clone, PartialEq)]
pub enum LrWindow {
    /// `lower < gamma <= upper`.
    Interval { lower: f64, upper: f64 },
    Empty {
        lower: Option<f64>,
        upper: f64,
        reason: String,
    },
}

impl LrWindow {
    pub fn contains(&self, gamma: f64) -> bool {
        match self {
            LrWindow::Interval { lower, upper } => *lower < gamma && gamma <= *upper,
            LrWindow::Empty { .. } => false,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, LrWindow::Empty { .. })
    }
}

impl fmt::Display for LrWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrWindow::Interval { lower, upper } => write!(f, "({lower}, {upper}]"),
            LrWindow::Empty { reason, .. } => write!(f, "empty: {reason}"),
        }
    }
}

/// The two branches of the upper end of the window.
pub fn lr_upper_terms(c: &TheoryConstants) -> (f64, f64) {
    let (a, l) = (c.alpha, c.l);
    let gap = 1.0 - c.rho.sqrt();
    let first = (1.0 - a) * gap / (2.0 * 26f64.sqrt() * l);
    let second = a * gap * gap / (2.0 * 13f64.sqrt() * l).powi(2)
        * (-1.0 + (52.0 * l * l * (1.0 - a).powi(2) / (a * a * gap * gap) + 1.0).sqrt());
    (first, second)
}

pub fn lr_window(c: &TheoryConstants) -> Result<LrWindow, AnalysisError> {
    c.validate()?;
    if c.alpha == 0.0 {
        return Ok(LrWindow::Empty {
            lower: None,
            upper: lr_upper_terms(c).0,
            reason: "lower end (1 - alpha)^2 / alpha is undefined for alpha = 0".into(),
        });
    }
    let lower = (1.0 - c.alpha).powi(2) / c.alpha;
    let (first, second) = lr_upper_terms(c);
    let upper = first.min(second);
    if lower < upper {
        Ok(LrWindow::Interval { lower, upper })
    } else {
        Ok(LrWindow::Empty {
            lower: Some(lower),
            upper,
            reason: format!("lower end {lower} is not below upper end {upper}"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub m5: f64,
}

pub fn bound_constants(c: &TheoryConstants) -> Result<BoundConstants, AnalysisError> {
    c.validate()?;
    let (a, g, l) = (c.alpha, c.gamma, c.l);
    let b = 1.0 - a;
    let m1 = g / (2.0 * b) - b / (2.0 * a);
    if !(m1 > 0.0) {
        return Err(AnalysisError::HypothesisViolated { m1 });
    }
    Ok(BoundConstants {
        m1,
        m2: (a * l * g * g / (2.0 * b.powi(3)) + l * g * g / (2.0 * b * b)) / m1,
        m3: l * b / (2.0 * m1 * a),
        m4: a * g * g / (2.0 * m1 * b.powi(3)),
        m5: l * l * g / (2.0 * m1 * b),
    })
}

/// Right-hand side of the convergence bound, split into the part that
/// decays with `T` and the additive floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundBreakdown {
    pub constants: BoundConstants,
    /// `f_gap / (m1 T)`.
    pub transient: f64,
    /// Noise-, clipping- and heterogeneity-driven floor.
    pub floor: f64,
    pub total: f64,
}

pub fn convergence_bound(c: &TheoryConstants, rounds: u64) -> Result<BoundBreakdown, AnalysisError> {
    if rounds == 0 {
        return Err(AnalysisError::NoRounds);
    }
    let k = bound_constants(c)?;
    let (a, g) = (c.alpha, c.gamma);
    let b = 1.0 - a;
    let gap = 1.0 - c.rho.sqrt();
    let w4 = c.omega_min.powi(4);
    let c2 = c.clip_c * c.clip_c;
    let noise = c.sigma * c.sigma * c.d as f64;
    let z2 = c.zeta * c.zeta;
    let k2 = c.kappa * c.kappa;

    let transient = c.f_gap / (k.m1 * rounds as f64);
    let variance = 4.0 * c2 / w4 + 4.0 * noise / w4 + 2.0 * z2 / c.m as f64;
    let coeff = k.m2 + k.m3 * g * g * a * a / b.powi(4) + k.m4;
    let consensus = 16.0 * g * g * (c2 + noise) / (w4 * b * b * gap * gap)
        + 4.0 * g * g * (7.0 * z2 + 13.0 * k2) / (b * b * gap * gap);
    let floor = coeff * variance + k.m5 * consensus;
    Ok(BoundBreakdown {
        constants: k,
        transient,
        floor,
        total: transient + floor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinRounds {
    Bounded(u64),
    /// The requirement diverges or exceeds the representable range.
    Unbounded,
}

impl fmt::Display for MinRounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MinRounds::Bounded(t) => write!(f, "{t}"),
            MinRounds::Unbounded => f.write_str("unbounded"),
        }
    }
}

/// The two lower bounds on `T` of the `1/sqrt(T)` regime.
pub fn min_rounds_terms(c: &TheoryConstants) -> (f64, f64) {
    let (a, l) = (c.alpha, c.l);
    let b = 1.0 - a;
    let gap = 1.0 - c.rho.sqrt();
    let first = 104.0 * l * l / (b * b * gap * gap);
    let denom = gap * (52.0 * l * l * b * b + a * a * gap * gap).sqrt() - a * gap * gap;
    let second = 52.0 * 52.0 * l.powi(4) / (denom * denom);
    (first, second)
}

/// Smallest integer round count satisfying both requirements. Never fails:
/// anything that does not evaluate to a finite count is `Unbounded`.
pub fn min_rounds(c: &TheoryConstants) -> MinRounds {
    if c.rho >= 1.0 {
        return MinRounds::Unbounded;
    }
    let (first, second) = min_rounds_terms(c);
    let t = first.max(second).ceil();
    // 2^64 is the first float past u64::MAX
    if t.is_finite() && t >= 0.0 && t < 18_446_744_073_709_551_616.0 {
        MinRounds::Bounded(t as u64)
    } else {
        MinRounds::Unbounded
    }
}

/// Empirical smoothness estimate: the largest observed
/// `|grad F(x) - grad F(y)| / |x - y|` over `pairs` random pairs drawn
/// around `center` with per-coordinate spread `radius`.
///
/// This is a lower bound on the true constant, not an estimate of it.
pub fn estimate_smoothness<R: Rng + ?Sized>(
    spec: &ModelSpec,
    data: &LabeledDataset,
    center: &[f64],
    radius: f64,
    pairs: usize,
    rng: &mut R,
) -> Result<f64, AnalysisError> {
    if pairs == 0 {
        return Err(AnalysisError::NoPairs);
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let mut sample = || -> Vec<f64> {
        center
            .iter()
            .map(|c| c + radius * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let mut best = 0.0f64;
    for _ in 0..pairs {
        let (x, y) = (sample(), sample());
        let (_, gx) = spec.loss_and_grad(&x, data, &all)?;
        let (_, gy) = spec.loss_and_grad(&y, data, &all)?;
        let dx: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let dg: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
        let denom = l2_norm(&dx);
        if denom > 0.0 {
            best = best.max(l2_norm(&dg) / denom);
        }
    }
    Ok(best)
}
