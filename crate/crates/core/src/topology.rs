//! Communication graphs and their mixing matrices.
//!
//! A [`CommGraph`] stores a dense symmetric doubly stochastic matrix `W`
//! together with the neighborhood `M_i = { j : W[i][j] > 0 }` of every agent
//! (self included). Graphs built by [`CommGraph::build`] satisfy all
//! invariants by construction; [`CommGraph::validate`] measures them for
//! matrices that come from elsewhere.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

/// Row/column sum tolerance for the doubly stochastic check.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("unknown topology kind `{0}` (expected full, ring or bipartite)")]
    UnknownKind(String),
    #[error("{kind} topology needs {requirement}, got m = {m}")]
    InvalidSize {
        kind: TopologyKind,
        m: usize,
        requirement: &'static str,
    },
    #[error("weight matrix must be square with {expected} entries, got {found}")]
    Shape { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    Full,
    Ring,
    Bipartite,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyKind::Full => "full",
            TopologyKind::Ring => "ring",
            TopologyKind::Bipartite => "bipartite",
        })
    }
}

impl FromStr for TopologyKind {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(TopologyKind::Full),
            "ring" => Ok(TopologyKind::Ring),
            "bipartite" => Ok(TopologyKind::Bipartite),
            other => Err(TopologyError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    m: usize,
    weights: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    /// Builds one of the supported topologies over `m` agents.
    ///
    /// * `Full`: `W[i][j] = 1/m`.
    /// * `Ring`: `1/3` on the diagonal and both ring neighbours (`m >= 3`).
    /// * `Bipartite`: complete bipartite graph between `{0..m/2}` and
    ///   `{m/2..m}` with Metropolis-Hastings weights
    ///   `1 / (1 + max(d_i, d_j))` and the remaining mass on the diagonal
    ///   (`m >= 2`, even).
    pub fn build(kind: TopologyKind, m: usize) -> Result<Self, TopologyError> {
        let invalid = |requirement| TopologyError::InvalidSize {
            kind,
            m,
            requirement,
        };
        let mut w = vec![0.0; m * m];
        match kind {
            TopologyKind::Full => {
                if m < 1 {
                    return Err(invalid("m >= 1"));
                }
                let v = 1.0 / m as f64;
                w.iter_mut().for_each(|e| *e = v);
            }
            TopologyKind::Ring => {
                if m < 3 {
                    return Err(invalid("m >= 3"));
                }
                let third = 1.0 / 3.0;
                for i in 0..m {
                    w[i * m + i] = third;
                    w[i * m + (i + 1) % m] = third;
                    w[i * m + (i + m - 1) % m] = third;
                }
            }
            TopologyKind::Bipartite => {
                if m < 2 || m % 2 != 0 {
                    return Err(invalid("an even m >= 2"));
                }
                let half = m / 2;
                // every node has degree m/2, so all edges share one weight
                let edge = 1.0 / (1.0 + half as f64);
                for i in 0..m {
                    for j in 0..m {
                        if (i < half) != (j < half) {
                            w[i * m + j] = edge;
                        }
                    }
                }
                for i in 0..m {
                    let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[i * m + j]).sum();
                    w[i * m + i] = 1.0 - off;
                }
            }
        }
        Self::from_weights(m, w)
    }

    /// Wraps a row-major `m x m` matrix without checking any invariant.
    /// Neighbour lists are derived from the positive entries.
    pub fn from_weights(m: usize, weights: Vec<f64>) -> Result<Self, TopologyError> {
        if weights.len() != m * m {
            return Err(TopologyError::Shape {
                expected: m * m,
                found: weights.len(),
            });
        }
        let neighbors = (0..m)
            .map(|i| (0..m).filter(|&j| weights[i * m + j] > 0.0).collect())
            .collect();
        Ok(Self {
            m,
            weights,
            neighbors,
        })
    }

    pub fn agents(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.m + j]
    }

    /// Row-major weight matrix.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `M_i` in increasing agent order, including `i` itself when `W[i][i] > 0`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Smallest positive weight over all agents and their neighbourhoods.
    pub fn omega_min(&self) -> f64 {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.weight(i, j))
            .fold(f64::INFINITY, f64::min)
    }

    /// Measures every structural invariant.
    pub fn validate(&self) -> Diagnostics {
        let m = self.m;
        let mut asym: f64 = 0.0;
        let mut row_res: f64 = 0.0;
        let mut col_res: f64 = 0.0;
        let mut range_res: f64 = 0.0;
        for i in 0..m {
            let mut row = 0.0;
            let mut col = 0.0;
            for j in 0..m {
                let w = self.weight(i, j);
                asym = asym.max((w - self.weight(j, i)).abs());
                range_res = range_res.max((-w).max(w - 1.0).max(0.0));
                row += w;
                col += self.weight(j, i);
            }
            row_res = row_res.max((row - 1.0).abs());
            col_res = col_res.max((col - 1.0).abs());
        }
        let min_diag = (0..m).map(|i| self.weight(i, i)).fold(f64::INFINITY, f64::min);
        let unreached = self.unreached_agents();

        Diagnostics {
            checks: vec![
                Check::new("symmetry", asym == 0.0, asym),
                Check::new("range", range_res == 0.0, range_res),
                Check::new("row_sums", row_res <= STOCHASTIC_TOL, row_res),
                Check::new("column_sums", col_res <= STOCHASTIC_TOL, col_res),
                Check::new(
                    "self_inclusion",
                    m == 0 || min_diag > 0.0,
                    if m == 0 { 0.0 } else { min_diag },
                ),
                Check::new("connectivity", unreached == 0, unreached as f64),
            ],
        }
    }

    // Agents not reachable from agent 0 through positive off-diagonal weights.
    fn unreached_agents(&self) -> usize {
        if self.m <= 1 {
            return 0;
        }
        let mut seen = vec![false; self.m];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..self.m {
                if j != i && !seen[j] && self.weight(i, j) > 0.0 {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.iter().filter(|s| !**s).count()
    }

    /// Writes `m` lines of `m` comma-separated weights.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for i in 0..self.m {
            wtr.write_record(self.weights[i * self.m..(i + 1) * self.m].iter().map(f64::to_string))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// One measured invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Largest violation observed. For `self_inclusion` this is the smallest
    /// diagonal entry, for `connectivity` the number of unreachable agents.
    pub residual: f64,
}

impl Check {
    fn new(name: &'static str, passed: bool, residual: f64) -> Self {
        Self {
            name,
            passed,
            residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub checks: Vec<Check>,
}

impl Diagnostics {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = if c.passed { "ok" } else { "FAIL" };
            writeln!(f, "{:<15} {:<4} residual={:e}", c.name, status, c.residual)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralInfo {
    /// `max(|lambda_2|, |lambda_m|)^2`, zero for a single agent.
    pub rho: f64,
    /// Eigenvalues of `W`, largest first.
    pub eigenvalues: Vec<f64>,
}

/// Eigen-decomposition of the (symmetric) mixing matrix.
pub fn spectral_info(g: &CommGraph) -> SpectralInfo {
    let m = g.agents();
    let mat = DMatrix::from_row_slice(m, m, g.weights());
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(mat).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    let rho = if m < 2 {
        0.0
    } else {
        eigenvalues[1].abs().max(eigenvalues[m - 1].abs()).powi(2)
    };
    SpectralInfo { rho, eigenvalues }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn row_col_sums(g: &CommGraph) -> (Vec<f64>, Vec<f64>) {
        let m = g.agents();
        let rows = (0..m).map(|i| (0..m).map(|j| g.weight(i, j)).sum()).collect();
        let cols = (0..m).map(|j| (0..m).map(|i| g.weight(i, j)).sum()).collect();
        (rows, cols)
    }

    #[test]
    fn full_four_is_uniform() {
        let g = CommGraph::build(TopologyKind::Full, 4).unwrap();
        assert!(g.weights().iter().all(|&w| w == 0.25));
        let (rows, _) = row_col_sums(&g);
        assert!(rows.iter().all(|&r| r == 1.0));
    }

    #[test]
    fn ring_four_rows() {
        let g = CommGraph::build(TopologyKind::Ring, 4).unwrap();
        let t = 1.0 / 3.0;
        assert_eq!(&g.weights()[0..4], &[t, t, 0.0, t]);
        assert_eq!(&g.weights()[4..8], &[t, t, t, 0.0]);
        assert_eq!(g.neighbors(0), &[0, 1, 3]);
    }

    #[test]
    fn bipartite_four_by_direct_summation() {
        let g = CommGraph::build(TopologyKind::Bipartite, 4).unwrap();
        let t = 1.0 / 3.0;
        for (w, e) in g.weights()[0..4].iter().zip([t, 0.0, t, t]) {
            assert!((w - e).abs() < 1e-15);
        }
        assert_eq!(g.neighbors(2), &[0, 1, 2]);
        let (rows, cols) = row_col_sums(&g);
        for s in rows.iter().chain(&cols) {
            assert!((s - 1.0).abs() <= 1e-12, "{s}");
        }
    }

    #[test]
    fn size_preconditions() {
        assert!(CommGraph::build(TopologyKind::Full, 0).is_err());
        assert!(CommGraph::build(TopologyKind::Ring, 2).is_err());
        assert!(CommGraph::build(TopologyKind::Bipartite, 3).is_err());
        assert!(CommGraph::build(TopologyKind::Bipartite, 2).is_ok());
        assert_eq!(
            "star".parse::<TopologyKind>(),
            Err(TopologyError::UnknownKind("star".into()))
        );
    }

    #[test]
    fn spectrum_examples() {
        let full = spectral_info(&CommGraph::build(TopologyKind::Full, 4).unwrap());
        assert!((full.eigenvalues[0] - 1.0).abs() < 1e-9);
        assert!(full.eigenvalues[1..].iter().all(|l| l.abs() < 1e-9));
        assert!(full.rho.abs() < 1e-9);

        let ring = spectral_info(&CommGraph::build(TopologyKind::Ring, 4).unwrap());
        let expected = [1.0, 1.0 / 3.0, 1.0 / 3.0, -1.0 / 3.0];
        for (l, e) in ring.eigenvalues.iter().zip(expected) {
            assert!((l - e).abs() < 1e-9);
        }
        assert!((ring.rho - 1.0 / 9.0).abs() < 1e-9);

        let single = spectral_info(&CommGraph::build(TopologyKind::Full, 1).unwrap());
        assert_eq!(single.eigenvalues, vec![1.0]);
        assert_eq!(single.rho, 0.0);
    }

    #[test]
    fn ring_rho_matches_circulant_formula() {
        for m in 3..=20 {
            let g = CommGraph::build(TopologyKind::Ring, m).unwrap();
            let mut lambdas: Vec<f64> = (0..m)
                .map(|k| (1.0 + 2.0 * (2.0 * PI * k as f64 / m as f64).cos()) / 3.0)
                .collect();
            lambdas.sort_by(|a, b| b.total_cmp(a));
            let closed = lambdas[1].abs().max(lambdas[m - 1].abs()).powi(2);
            assert!((spectral_info(&g).rho - closed).abs() < 1e-9, "m={m}");
        }
    }

    #[test]
    fn ones_vector_is_fixed() {
        for kind in [TopologyKind::Full, TopologyKind::Ring, TopologyKind::Bipartite] {
            for m in 2..=12 {
                let Ok(g) = CommGraph::build(kind, m) else { continue };
                for i in 0..m {
                    let s: f64 = (0..m).map(|j| g.weight(i, j)).sum();
                    assert!((s - 1.0).abs() <= 1e-12);
                }
                assert!(g.validate().all_passed(), "{kind} m={m}\n{}", g.validate());
            }
        }
    }

    #[test]
    fn scaled_row_fails_stochastic_check() {
        let g = CommGraph::build(TopologyKind::Ring, 5).unwrap();
        let mut w = g.weights().to_vec();
        for e in &mut w[0..5] {
            *e *= 1.01;
        }
        let d = CommGraph::from_weights(5, w).unwrap().validate();
        let rows = d.get("row_sums").unwrap();
        assert!(!rows.passed);
        assert!((rows.residual - 0.01).abs() < 1e-12);
        assert!(!d.get("symmetry").unwrap().passed);
    }

    #[test]
    fn asymmetric_pair_fails_symmetry_only_there() {
        let g = CommGraph::build(TopologyKind::Full, 4).unwrap();
        let mut w = g.weights().to_vec();
        w[1] += 0.05;
        w[4] -= 0.05;
        let d = CommGraph::from_weights(4, w).unwrap().validate();
        assert!(!d.get("symmetry").unwrap().passed);
    }

    #[test]
    fn disconnected_graph_detected() {
        // two isolated pairs
        let w = vec![
            0.5, 0.5, 0.0, 0.0, //
            0.5, 0.5, 0.0, 0.0, //
            0.0, 0.0, 0.5, 0.5, //
            0.0, 0.0, 0.5, 0.5,
        ];
        let d = CommGraph::from_weights(4, w).unwrap().validate();
        let c = d.get("connectivity").unwrap();
        assert!(!c.passed);
        assert_eq!(c.residual, 2.0);
    }

    #[test]
    fn csv_dump_has_m_rows() {
        let g = CommGraph::build(TopologyKind::Ring, 3).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), 3);
        let parsed: f64 = lines[0].split(',').next().unwrap().parse().unwrap();
        assert_eq!(parsed, 1.0 / 3.0);
    }

    #[test]
    fn omega_min_values() {
        assert_eq!(CommGraph::build(TopologyKind::Full, 2).unwrap().omega_min(), 0.5);
        assert_eq!(CommGraph::build(TopologyKind::Full, 1).unwrap().omega_min(), 1.0);
    }
}
