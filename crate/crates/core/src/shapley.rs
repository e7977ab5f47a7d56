//! Credit assignment over an agent's neighbourhood.
//!
//! Players are the members of `M_i`, identified by their position
//! `0..n` in the neighbour list; coalitions are bitmasks over those
//! positions. The value of a coalition is the validation accuracy of the
//! unweighted mean of its members' candidate models, and `v(empty) = 0`.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::data::LabeledDataset;
use crate::model::ModelSpec;

/// Default enumeration cap for [`exact_shapley`].
pub const DEFAULT_EXACT_CAP: usize = 12;

/// Largest player count accepted by [`exhaustive_permutation_shapley`].
pub const EXHAUSTIVE_CAP: usize = 10;

/// Score spread at or below which normalization treats all players as tied.
pub const DEGENERATE_SPREAD: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ShapleyError {
    #[error("{players} players exceed the exact enumeration cap of {cap}; use the Monte Carlo estimator")]
    CapExceeded { players: usize, cap: usize },
    #[error("permutation count must be at least 1")]
    ZeroPermutations,
    #[error("agent {0} is not a member of this neighbourhood")]
    UnknownMember(usize),
    #[error("a coalition game needs at least one player")]
    NoPlayers,
    #[error("candidate model has length {found}, expected {expected}")]
    CandidateDim { expected: usize, found: usize },
}

/// A transferable-utility game over players `0..players()`.
pub trait CoalitionGame {
    fn players(&self) -> usize;
    /// Value of the coalition whose members are the set bits of `coalition`.
    fn value(&self, coalition: u64) -> f64;
}

/// A game given by an explicit table indexed by coalition bitmask.
#[derive(Debug, Clone, PartialEq)]
pub struct TableGame {
    players: usize,
    values: Vec<f64>,
}

impl TableGame {
    pub fn new(players: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), 1 << players, "table must hold 2^players entries");
        Self { players, values }
    }
}

impl CoalitionGame for TableGame {
    fn players(&self) -> usize {
        self.players
    }

    fn value(&self, coalition: u64) -> f64 {
        self.values[coalition as usize]
    }
}

/// Candidate models of one agent's neighbourhood scored on the shared
/// validation set.
#[derive(Debug, Clone)]
pub struct CoalitionContext<'a> {
    neighbors: Vec<usize>,
    candidates: Vec<Vec<f64>>,
    validation: &'a LabeledDataset,
    spec: &'a ModelSpec,
}

impl<'a> CoalitionContext<'a> {
    /// `candidates[k]` is the model proposed through neighbour `neighbors[k]`.
    pub fn new(
        neighbors: Vec<usize>,
        candidates: Vec<Vec<f64>>,
        validation: &'a LabeledDataset,
        spec: &'a ModelSpec,
    ) -> Result<Self, ShapleyError> {
        if neighbors.is_empty() {
            return Err(ShapleyError::NoPlayers);
        }
        assert_eq!(neighbors.len(), candidates.len());
        if let Some(bad) = candidates.iter().find(|c| c.len() != spec.dim()) {
            return Err(ShapleyError::CandidateDim {
                expected: spec.dim(),
                found: bad.len(),
            });
        }
        Ok(Self {
            neighbors,
            candidates,
            validation,
            spec,
        })
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    /// Value of a coalition named by agent ids.
    pub fn coalition_value(&self, members: &[usize]) -> Result<f64, ShapleyError> {
        let mut mask = 0u64;
        for &j in members {
            let pos = self
                .neighbors
                .iter()
                .position(|&n| n == j)
                .ok_or(ShapleyError::UnknownMember(j))?;
            mask |= 1 << pos;
        }
        Ok(self.value(mask))
    }

    /// Unweighted mean of the candidate models in `coalition`.
    pub fn mean_model(&self, coalition: u64) -> Vec<f64> {
        let mut mean = vec![0.0; self.spec.dim()];
        let mut count = 0usize;
        for (k, cand) in self.candidates.iter().enumerate() {
            if coalition & (1 << k) != 0 {
                mean.iter_mut().zip(cand).for_each(|(m, c)| *m += c);
                count += 1;
            }
        }
        let inv = 1.0 / count as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        mean
    }
}

impl CoalitionGame for CoalitionContext<'_> {
    fn players(&self) -> usize {
        self.neighbors.len()
    }

    fn value(&self, coalition: u64) -> f64 {
        if coalition == 0 {
            return 0.0;
        }
        let mean = self.mean_model(coalition);
        self.spec.correct_count(&mean, self.validation) as f64 / self.validation.len() as f64
    }
}

// Coalition values cached by bitmask.
struct Memo<'g, G: ?Sized> {
    game: &'g G,
    cache: HashMap<u64, f64>,
}

impl<'g, G: CoalitionGame + ?Sized> Memo<'g, G> {
    fn new(game: &'g G) -> Self {
        Self {
            game,
            cache: HashMap::new(),
        }
    }

    fn value(&mut self, coalition: u64) -> f64 {
        *self
            .cache
            .entry(coalition)
            .or_insert_with(|| self.game.value(coalition))
    }
}

/// Exact Shapley values by subset enumeration:
/// `phi_j = sum_{S not containing j} [v(S + j) - v(S)] / (n * C(n-1, |S|))`.
pub fn exact_shapley<G: CoalitionGame + ?Sized>(
    game: &G,
    cap: usize,
) -> Result<Vec<f64>, ShapleyError> {
    let n = game.players();
    if n == 0 {
        return Err(ShapleyError::NoPlayers);
    }
    if n > cap || n > 30 {
        return Err(ShapleyError::CapExceeded { players: n, cap });
    }
    let values: Vec<f64> = (0..1u64 << n).map(|s| game.value(s)).collect();
    // weight[s] = 1 / (n * C(n-1, s))
    let mut weight = vec![0.0; n];
    let mut binom = 1.0;
    for (s, w) in weight.iter_mut().enumerate() {
        *w = 1.0 / (n as f64 * binom);
        binom = binom * (n - 1 - s) as f64 / (s + 1) as f64;
    }
    let phi = (0..n)
        .map(|j| {
            let bit = 1u64 << j;
            (0..1u64 << n)
                .filter(|s| s & bit == 0)
                .map(|s| weight[s.count_ones() as usize] * (values[(s | bit) as usize] - values[s as usize]))
                .sum()
        })
        .collect();
    Ok(phi)
}

// Adds each player's marginal contribution along `order` to `acc`.
fn accumulate_permutation<G: CoalitionGame + ?Sized>(
    memo: &mut Memo<'_, G>,
    order: &[usize],
    acc: &mut [f64],
) {
    let mut coalition = 0u64;
    let mut prev = memo.value(0);
    for &j in order {
        coalition |= 1 << j;
        let current = memo.value(coalition);
        acc[j] += current - prev;
        prev = current;
    }
}

/// Monte Carlo Shapley estimate from `r` uniformly random permutations.
///
/// Each player is credited `v(Z_j + j) - v(Z_j)` where `Z_j` is the set of
/// its predecessors in the permutation; the sum over permutations is divided
/// by `r`. Coalition values are memoized across permutations.
pub fn mc_shapley<G: CoalitionGame + ?Sized, R: Rng + ?Sized>(
    game: &G,
    r: usize,
    rng: &mut R,
) -> Result<Vec<f64>, ShapleyError> {
    let n = game.players();
    if n == 0 {
        return Err(ShapleyError::NoPlayers);
    }
    if n > 63 {
        return Err(ShapleyError::CapExceeded { players: n, cap: 63 });
    }
    if r == 0 {
        return Err(ShapleyError::ZeroPermutations);
    }
    let mut memo = Memo::new(game);
    let mut acc = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..r {
        order.shuffle(rng);
        accumulate_permutation(&mut memo, &order, &mut acc);
    }
    let inv = 1.0 / r as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// The permutation estimator run over every one of the `n!` orderings
/// instead of random ones. Equal to [`exact_shapley`] up to rounding.
pub fn exhaustive_permutation_shapley<G: CoalitionGame + ?Sized>(
    game: &G,
) -> Result<Vec<f64>, ShapleyError> {
    let n = game.players();
    if n == 0 {
        return Err(ShapleyError::NoPlayers);
    }
    if n > EXHAUSTIVE_CAP {
        return Err(ShapleyError::CapExceeded {
            players: n,
            cap: EXHAUSTIVE_CAP,
        });
    }
    let mut memo = Memo::new(game);
    let mut acc = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut count = 0usize;
    // Heap's algorithm, iterative form
    let mut c = vec![0usize; n];
    accumulate_permutation(&mut memo, &order, &mut acc);
    count += 1;
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                order.swap(0, i);
            } else {
                order.swap(c[i], i);
            }
            accumulate_permutation(&mut memo, &order, &mut acc);
            count += 1;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    let inv = 1.0 / count as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// Min-max normalization to `[0, 1]`. If every score lies within
/// [`DEGENERATE_SPREAD`] of the others (always the case for one player),
/// every player gets 1.
pub fn normalize_shapley(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = max - min;
    if !(spread > DEGENERATE_SPREAD * max.abs().max(min.abs()).max(1.0)) {
        return vec![1.0; raw.len()];
    }
    raw.iter().map(|p| (p - min) / spread).collect()
}

/// `pi_j = phi_hat_j / (omega_j * sum_k phi_hat_k)`.
///
/// With `convex` set the weights are additionally rescaled to sum to one.
pub fn aggregation_weights(phi_hat: &[f64], omega: &[f64], convex: bool) -> Vec<f64> {
    assert_eq!(phi_hat.len(), omega.len());
    let total: f64 = phi_hat.iter().sum();
    let mut pi: Vec<f64> = phi_hat
        .iter()
        .zip(omega)
        .map(|(p, w)| p / (w * total))
        .collect();
    if convex {
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= s);
    }
    pi
}

/// Which Shapley estimator an agent runs each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Exact,
    /// Random permutations; `None` means `4 * |M_i|`.
    MonteCarlo { permutations: Option<usize> },
    /// Every permutation, for cross-checking the Monte Carlo path.
    Exhaustive,
}

impl Estimator {
    pub fn permutations_for(&self, players: usize) -> Option<usize> {
        match self {
            Estimator::MonteCarlo { permutations } => Some(permutations.unwrap_or(4 * players)),
            _ => None,
        }
    }
}

/// The estimator that actually produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorUsed {
    Exact,
    MonteCarlo(usize),
    Exhaustive,
}

impl fmt::Display for EstimatorUsed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorUsed::Exact => f.write_str("exact"),
            EstimatorUsed::MonteCarlo(r) => write!(f, "mc({r})"),
            EstimatorUsed::Exhaustive => f.write_str("exhaustive"),
        }
    }
}

pub fn estimate<G: CoalitionGame + ?Sized, R: Rng + ?Sized>(
    game: &G,
    estimator: Estimator,
    exact_cap: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, EstimatorUsed), ShapleyError> {
    match estimator {
        Estimator::Exact => Ok((exact_shapley(game, exact_cap)?, EstimatorUsed::Exact)),
        Estimator::MonteCarlo { .. } => {
            let r = estimator.permutations_for(game.players()).expect("monte carlo");
            Ok((mc_shapley(game, r, rng)?, EstimatorUsed::MonteCarlo(r)))
        }
        Estimator::Exhaustive => Ok((exhaustive_permutation_shapley(game)?, EstimatorUsed::Exhaustive)),
    }
}

/// Shapley scores and aggregation weights for one agent in one round.
/// All vectors are aligned with `neighbors`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyReport {
    pub neighbors: Vec<usize>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub weights: Vec<f64>,
    pub estimator: EstimatorUsed,
}

impl ShapleyReport {
    /// Scores `raw`, normalizes them and derives weights from `omega`.
    pub fn from_raw(
        neighbors: Vec<usize>,
        raw: Vec<f64>,
        omega: &[f64],
        convex: bool,
        estimator: EstimatorUsed,
    ) -> Self {
        let normalized = normalize_shapley(&raw);
        let weights = aggregation_weights(&normalized, omega, convex);
        Self {
            neighbors,
            raw,
            normalized,
            weights,
            estimator,
        }
    }

    /// Smallest normalized share `phi_hat_j / sum_k phi_hat_k`.
    pub fn min_share(&self) -> f64 {
        let total: f64 = self.normalized.iter().sum();
        self.normalized
            .iter()
            .map(|p| p / total)
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};
    use proptest::prelude::*;

    fn random_game(n: usize, seed: u64) -> TableGame {
        let mut rng = substream(seed, Domain::Analysis, n as u64, 0, 0);
        let mut values: Vec<f64> = (0..1 << n).map(|_| rng.random::<f64>()).collect();
        values[0] = 0.0;
        TableGame::new(n, values)
    }

    // Average marginal contribution over all orderings, written directly.
    fn permutation_oracle(game: &TableGame) -> Vec<f64> {
        fn perms(items: Vec<usize>) -> Vec<Vec<usize>> {
            if items.len() <= 1 {
                return vec![items];
            }
            let mut out = Vec::new();
            for k in 0..items.len() {
                let mut rest = items.clone();
                let head = rest.remove(k);
                for mut p in perms(rest) {
                    p.insert(0, head);
                    out.push(p);
                }
            }
            out
        }
        let n = game.players();
        let all = perms((0..n).collect());
        let mut phi = vec![0.0; n];
        for p in &all {
            for (pos, &j) in p.iter().enumerate() {
                let before: u64 = p[..pos].iter().map(|&k| 1u64 << k).sum();
                phi[j] += game.value(before | 1 << j) - game.value(before);
            }
        }
        phi.iter().map(|v| v / all.len() as f64).collect()
    }

    #[test]
    fn two_player_closed_form() {
        let g = TableGame::new(2, vec![0.0, 0.2, 0.4, 1.0]);
        let phi = exact_shapley(&g, DEFAULT_EXACT_CAP).unwrap();
        assert!((phi[0] - 0.4).abs() < 1e-12);
        assert!((phi[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn exact_matches_permutation_oracle() {
        for seed in 0..50 {
            for n in [3, 4] {
                let g = random_game(n, seed);
                let exact = exact_shapley(&g, DEFAULT_EXACT_CAP).unwrap();
                let oracle = permutation_oracle(&g);
                for (a, b) in exact.iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dummy_player_gets_zero() {
        // player 2 never changes a coalition's value
        let base = random_game(2, 4);
        let values = (0..8u64).map(|s| base.value(s & 0b11)).collect();
        let g = TableGame::new(3, values);
        let phi = exact_shapley(&g, DEFAULT_EXACT_CAP).unwrap();
        assert!(phi[2].abs() < 1e-12);
    }

    #[test]
    fn cap_is_enforced() {
        let g = random_game(5, 0);
        assert_eq!(
            exact_shapley(&g, 4),
            Err(ShapleyError::CapExceeded { players: 5, cap: 4 })
        );
    }

    #[test]
    fn exhaustive_equals_exact() {
        for seed in 0..20 {
            for n in 1..=6 {
                let g = random_game(n, seed);
                let a = exact_shapley(&g, DEFAULT_EXACT_CAP).unwrap();
                let b = exhaustive_permutation_shapley(&g).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mc_rejects_zero_permutations() {
        let g = random_game(3, 0);
        let mut rng = substream(0, Domain::Shapley, 0, 0, 0);
        assert_eq!(mc_shapley(&g, 0, &mut rng), Err(ShapleyError::ZeroPermutations));
    }

    #[test]
    fn mc_close_to_exact_with_many_permutations() {
        let g = random_game(3, 9);
        let exact = exact_shapley(&g, DEFAULT_EXACT_CAP).unwrap();
        let mut rng = substream(9, Domain::Shapley, 0, 0, 0);
        let mc = mc_shapley(&g, 5000, &mut rng).unwrap();
        // marginal contributions lie in [-1, 1], so 3 SE <= 3 / sqrt(5000)
        for (a, b) in mc.iter().zip(&exact) {
            assert!((a - b).abs() < 3.0 / (5000f64).sqrt());
        }
    }

    fn mc_mean_error(r: usize) -> f64 {
        let mut total = 0.0;
        for seed in 0..200 {
            let g = random_game(4, seed);
            let exact = exact_shapley(&g, DEFAULT_EXACT_CAP).unwrap();
            let mut rng = substream(seed, Domain::Shapley, r as u64, 0, 0);
            let mc = mc_shapley(&g, r, &mut rng).unwrap();
            total += mc.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>() / 4.0;
        }
        total / 200.0
    }

    #[test]
    fn mc_error_shrinks_with_more_permutations() {
        let errs: Vec<f64> = [4, 16, 64, 256].iter().map(|&r| mc_mean_error(r)).collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    proptest! {
        #[test]
        fn mc_balance_holds_for_any_r(seed in 0u64..10_000, r in 1usize..50, n in 1usize..7) {
            let g = random_game(n, seed);
            let mut rng = substream(seed, Domain::Shapley, 1, 0, 0);
            let phi = mc_shapley(&g, r, &mut rng).unwrap();
            let full = g.value((1 << n) - 1) - g.value(0);
            prop_assert!((phi.iter().sum::<f64>() - full).abs() <= 1e-12);
        }

        #[test]
        fn normalization_is_affine_invariant(
            raw in proptest::collection::vec(-10.0f64..10.0, 2..8),
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
        ) {
            let base = normalize_shapley(&raw);
            let moved: Vec<f64> = raw.iter().map(|x| a * x + b).collect();
            for (x, y) in base.iter().zip(normalize_shapley(&moved)) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            prop_assert!(base.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn weights_follow_phi_over_omega(
            phi_hat in proptest::collection::vec(0.0f64..1.0, 1..8),
            omega_raw in proptest::collection::vec(0.05f64..1.0, 8),
        ) {
            prop_assume!(phi_hat.iter().sum::<f64>() > 0.0);
            let omega = &omega_raw[..phi_hat.len()];
            let pi = aggregation_weights(&phi_hat, omega, false);
            prop_assert!(pi.iter().all(|p| *p >= 0.0));
            for a in 0..pi.len() {
                for b in 0..pi.len() {
                    if phi_hat[a] / omega[a] > phi_hat[b] / omega[b] {
                        prop_assert!(pi[a] > pi[b]);
                    }
                }
            }
            let weighted: f64 = pi.iter().zip(omega).map(|(p, w)| p * w).sum();
            prop_assert!((weighted - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_examples() {
        let n = normalize_shapley(&[0.2, 0.5, 0.8]);
        assert!((n[0]).abs() < 1e-15 && (n[1] - 0.5).abs() < 1e-12 && (n[2] - 1.0).abs() < 1e-15);
        assert_eq!(normalize_shapley(&[0.3, 0.3, 0.3]), vec![1.0; 3]);
        assert_eq!(normalize_shapley(&[0.7]), vec![1.0]);
    }

    #[test]
    fn weight_examples() {
        assert_eq!(aggregation_weights(&[1.0, 1.0], &[0.5, 0.5], false), vec![1.0, 1.0]);
        assert_eq!(aggregation_weights(&[0.0, 1.0], &[0.5, 0.5], false), vec![0.0, 2.0]);
        assert_eq!(aggregation_weights(&[1.0], &[1.0], false), vec![1.0]);
        assert_eq!(aggregation_weights(&[0.0, 1.0], &[0.5, 0.5], true), vec![0.0, 1.0]);
    }

    #[test]
    fn report_min_share() {
        let r = ShapleyReport::from_raw(
            vec![0, 1, 2],
            vec![0.1, 0.2, 0.3],
            &[1.0 / 3.0; 3],
            false,
            EstimatorUsed::Exact,
        );
        assert_eq!(r.min_share(), 0.0);
        assert_eq!(r.estimator.to_string(), "exact");
        assert_eq!(EstimatorUsed::MonteCarlo(12).to_string(), "mc(12)");
    }

    mod context {
        use super::*;

        fn setup() -> (LabeledDataset, ModelSpec) {
            // two 1-d classes separated at zero
            let ds = LabeledDataset::new(vec![-2.0, -1.0, 1.0, 2.0], 1, vec![0, 0, 1, 1], 2).unwrap();
            (ds, ModelSpec::softmax(1, 2))
        }

        #[test]
        fn empty_and_singleton_values() {
            let (ds, spec) = setup();
            let good = vec![-1.0, 1.0, 0.0, 0.0];
            let bad = vec![1.0, -1.0, 0.0, 0.0];
            let ctx = CoalitionContext::new(vec![4, 7], vec![good.clone(), bad], &ds, &spec).unwrap();
            assert_eq!(ctx.coalition_value(&[]).unwrap(), 0.0);
            assert_eq!(ctx.coalition_value(&[4]).unwrap(), spec.accuracy(&good, &ds).unwrap());
            assert_eq!(ctx.coalition_value(&[4]).unwrap(), 1.0);
            assert_eq!(ctx.coalition_value(&[7]).unwrap(), 0.0);
            assert_eq!(ctx.coalition_value(&[5]), Err(ShapleyError::UnknownMember(5)));
        }

        #[test]
        fn identical_candidates_give_constant_value() {
            let (ds, spec) = setup();
            let x = vec![-0.3, 0.8, 0.1, -0.1];
            let ctx = CoalitionContext::new(vec![0, 1, 2], vec![x.clone(); 3], &ds, &spec).unwrap();
            let v = ctx.value(1);
            for s in 1..8 {
                assert_eq!(ctx.value(s), v);
            }
            // identical players split the grand coalition value evenly
            let phi = exact_shapley(&ctx, DEFAULT_EXACT_CAP).unwrap();
            for p in phi {
                assert!((p - v / 3.0).abs() < 1e-12);
            }
        }

        #[test]
        fn rejects_bad_candidates() {
            let (ds, spec) = setup();
            assert!(matches!(
                CoalitionContext::new(vec![0], vec![vec![0.0; 3]], &ds, &spec),
                Err(ShapleyError::CandidateDim { .. })
            ));
            assert!(matches!(
                CoalitionContext::new(vec![], vec![], &ds, &spec),
                Err(ShapleyError::NoPlayers)
            ));
        }
    }
}
