//! Labeled datasets, heterogeneous partitioning and the validation split.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },
    #[error("{file}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        file: String,
        expected: u32,
        found: u32,
    },
    #[error("{file}: truncated, expected {expected} bytes but found {found}")]
    Truncated {
        file: String,
        expected: usize,
        found: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("feature value {value} at row {row} is not representable as an 8-bit pixel")]
    NotPixel { row: usize, value: f64 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(name: &'static str, reason: impl Into<String>) -> DataError {
    DataError::InvalidArgument {
        name,
        reason: reason.into(),
    }
}

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self, DataError> {
        if labels.is_empty() {
            return Err(invalid("labels", "dataset must hold at least one sample"));
        }
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(invalid(
                "features",
                format!("expected {} values, got {}", labels.len() * dim, features.len()),
            ));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(invalid("labels", format!("label {y} >= class count {classes}")));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(invalid("features", format!("non-finite value in row {}", pos / dim)));
        }
        Ok(Self {
            features,
            dim,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// Copies the given rows, in order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, DataError> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(invalid("indices", format!("index {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(features, self.dim, labels, self.classes)
    }
}

/// Class means used by [`synth_classification`].
///
/// With `classes <= dim` the means sit on scaled coordinate axes, otherwise
/// they are spaced along the first axis. Either way every pair is at least
/// `separation` apart, and the means depend only on the arguments, so
/// repeated calls draw from the same distribution.
pub fn synth_means(classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|k| {
            let mut mu = vec![0.0; dim];
            if classes <= dim {
                mu[k] = separation / std::f64::consts::SQRT_2;
            } else {
                mu[0] = k as f64 * separation;
            }
            mu
        })
        .collect()
}

/// Unit-variance Gaussian blobs, one per class, with balanced labels
/// (`label_i = i mod classes`).
pub fn synth_classification<R: Rng + ?Sized>(
    classes: usize,
    dim: usize,
    n: usize,
    separation: f64,
    rng: &mut R,
) -> Result<LabeledDataset, DataError> {
    if classes < 2 {
        return Err(invalid("classes", "need at least 2 classes"));
    }
    if dim == 0 {
        return Err(invalid("dim", "must be positive"));
    }
    if n < classes {
        return Err(invalid("n", format!("need at least {classes} samples")));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(invalid("separation", "must be finite and nonnegative"));
    }
    let means = synth_means(classes, dim, separation);
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        for mu in &means[y] {
            let z: f64 = StandardNormal.sample(rng);
            features.push(mu + z);
        }
        labels.push(y);
    }
    LabeledDataset::new(features, dim, labels, classes)
}

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn check_header(bytes: &[u8], file: &str, magic: u32, header_len: usize) -> Result<(), DataError> {
    if bytes.len() < 4 {
        return Err(DataError::Truncated {
            file: file.into(),
            expected: header_len,
            found: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(DataError::BadMagic {
            file: file.into(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < header_len {
        return Err(DataError::Truncated {
            file: file.into(),
            expected: header_len,
            found: bytes.len(),
        });
    }
    Ok(())
}

/// Decodes an IDX image/label pair held in memory. Pixels are scaled to
/// `[0, 1]`; the class count is one more than the largest label.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset, DataError> {
    check_header(images, "images", IMAGES_MAGIC, 16)?;
    check_header(labels, "labels", LABELS_MAGIC, 8)?;
    let count = be_u32(images, 4) as usize;
    let rows = be_u32(images, 8) as usize;
    let cols = be_u32(images, 12) as usize;
    let n_labels = be_u32(labels, 4) as usize;
    let dim = rows * cols;

    let img_len = 16 + count * dim;
    if images.len() < img_len {
        return Err(DataError::Truncated {
            file: "images".into(),
            expected: img_len,
            found: images.len(),
        });
    }
    if labels.len() < 8 + n_labels {
        return Err(DataError::Truncated {
            file: "labels".into(),
            expected: 8 + n_labels,
            found: labels.len(),
        });
    }
    if count != n_labels {
        return Err(DataError::CountMismatch {
            images: count,
            labels: n_labels,
        });
    }

    let features = images[16..img_len].iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = labels[8..8 + count].iter().map(|&b| usize::from(b)).collect();
    let classes = labels.iter().max().map_or(0, |&y| y + 1);
    LabeledDataset::new(features, dim, labels, classes)
}

pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset, DataError> {
    let read = |p: &Path| {
        fs::read(p).map_err(|source| DataError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    let images = read(images_path.as_ref())?;
    let labels = read(labels_path.as_ref())?;
    parse_idx(&images, &labels)
}

/// Encodes a dataset as an IDX pair. Every feature must be an exact
/// `k / 255` value so that [`parse_idx`] reproduces it bit for bit.
pub fn encode_idx(
    ds: &LabeledDataset,
    rows: usize,
    cols: usize,
) -> Result<(Vec<u8>, Vec<u8>), DataError> {
    if rows * cols != ds.dim() {
        return Err(invalid("rows", format!("{rows}x{cols} != dim {}", ds.dim())));
    }
    if ds.classes() > 256 {
        return Err(invalid("labels", "IDX labels are single bytes"));
    }
    let n = ds.len() as u32;
    let mut images = Vec::with_capacity(16 + ds.features().len());
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&n.to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    for (pos, &v) in ds.features().iter().enumerate() {
        let k = (v * 255.0).round();
        if !(0.0..=255.0).contains(&k) || k / 255.0 != v {
            return Err(DataError::NotPixel {
                row: pos / ds.dim(),
                value: v,
            });
        }
        images.push(k as u8);
    }
    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    labels.extend(ds.labels().iter().map(|&y| y as u8));
    Ok((images, labels))
}

pub fn write_idx(
    ds: &LabeledDataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<(), DataError> {
    let (images, labels) = encode_idx(ds, rows, cols)?;
    for (path, bytes) in [(images_path.as_ref(), images), (labels_path.as_ref(), labels)] {
        fs::write(path, bytes).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

/// Disjoint shards of a parent dataset, one index list per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionResult {
    pub shards: Vec<Vec<usize>>,
}

impl PartitionResult {
    /// Writes `index,agent` rows for auditing.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["index", "agent"])?;
        let mut rows: Vec<(usize, usize)> = self
            .shards
            .iter()
            .enumerate()
            .flat_map(|(a, s)| s.iter().map(move |&i| (i, a)))
            .collect();
        rows.sort_unstable();
        for (i, a) in rows {
            wtr.write_record([i.to_string(), a.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Allocates `total` items proportionally to `q` with largest-remainder
/// rounding. Ties go to the lower index.
fn largest_remainder(q: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = q.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

fn dirichlet<R: Rng + ?Sized>(m: usize, mu: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(mu, 1.0).expect("mu > 0 checked by caller");
    let draws: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        // every gamma draw underflowed; the limit of Dir(mu) as mu -> 0 is a vertex
        let mut q = vec![0.0; m];
        q[rng.random_range(0..m)] = 1.0;
        q
    }
}

/// Splits `ds` over `m` agents with per-class proportions drawn from
/// `Dir(mu * 1_m)`.
///
/// Each class's samples are shuffled and cut into consecutive runs whose
/// lengths come from largest-remainder rounding of the drawn proportions.
/// Empty shards then receive one sample from the currently largest shard.
pub fn dirichlet_partition<R: Rng + ?Sized>(
    ds: &LabeledDataset,
    m: usize,
    mu: f64,
    rng: &mut R,
) -> Result<PartitionResult, DataError> {
    if m == 0 {
        return Err(invalid("m", "need at least one agent"));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(invalid("mu", format!("must be positive and finite, got {mu}")));
    }
    if ds.len() < m {
        return Err(invalid("m", format!("{m} agents but only {} samples", ds.len())));
    }
    let mut by_class = vec![Vec::new(); ds.classes()];
    for (i, &y) in ds.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    let mut shards = vec![Vec::new(); m];
    for mut members in by_class {
        let q = dirichlet(m, mu, rng);
        members.shuffle(rng);
        let counts = largest_remainder(&q, members.len());
        let mut rest = members.as_slice();
        for (shard, c) in shards.iter_mut().zip(counts) {
            let (head, tail) = rest.split_at(c);
            shard.extend_from_slice(head);
            rest = tail;
        }
    }
    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let donor = (0..m)
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .expect("m >= 1");
        let moved = shards[donor].pop().expect("n >= m leaves a nonempty donor");
        shards[empty].push(moved);
    }
    Ok(PartitionResult { shards })
}

#[derive(Debug, Clone)]
pub struct ValidationSplit {
    pub validation: LabeledDataset,
    pub remainder: LabeledDataset,
    pub validation_indices: Vec<usize>,
    pub remainder_indices: Vec<usize>,
}

/// Draws `round(fraction * n)` samples uniformly without replacement as the
/// shared validation set; the remainder keeps its original order.
pub fn make_validation_split<R: Rng + ?Sized>(
    test: &LabeledDataset,
    fraction: f64,
    rng: &mut R,
) -> Result<ValidationSplit, DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid("fraction", format!("must lie in (0, 1), got {fraction}")));
    }
    let n = test.len();
    let k = (fraction * n as f64).round() as usize;
    if k == 0 || k == n {
        return Err(invalid(
            "fraction",
            format!("{fraction} of {n} samples leaves an empty side"),
        ));
    }
    let validation_indices = index::sample(rng, n, k).into_vec();
    let mut taken = vec![false; n];
    for &i in &validation_indices {
        taken[i] = true;
    }
    let remainder_indices: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
    Ok(ValidationSplit {
        validation: test.subset(&validation_indices)?,
        remainder: test.subset(&remainder_indices)?,
        validation_indices,
        remainder_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};
    use proptest::prelude::*;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        substream(seed, Domain::Synth, 0, 0, 0)
    }

    fn balanced(n: usize, classes: usize) -> LabeledDataset {
        LabeledDataset::new(vec![0.0; n], 1, (0..n).map(|i| i % classes).collect(), classes).unwrap()
    }

    fn assert_partition(p: &PartitionResult, n: usize) {
        let mut all: Vec<usize> = p.shards.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
        assert!(p.shards.iter().all(|s| !s.is_empty()));
    }

    #[test]
    fn synth_balanced_histogram() {
        let ds = synth_classification(3, 5, 99, 5.0, &mut rng(1)).unwrap();
        assert_eq!(ds.histogram(), vec![33, 33, 33]);
        let ds = synth_classification(3, 2, 100, 5.0, &mut rng(1)).unwrap();
        assert_eq!(ds.histogram(), vec![34, 33, 33]);
    }

    #[test]
    fn synth_means_are_separated() {
        for (classes, dim) in [(2, 2), (3, 10), (5, 2), (4, 1)] {
            let means = synth_means(classes, dim, 4.0);
            for a in 0..classes {
                for b in a + 1..classes {
                    let d: f64 = means[a]
                        .iter()
                        .zip(&means[b])
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    assert!(d >= 4.0 - 1e-12);
                }
            }
        }
    }

    #[test]
    fn synth_rejects_bad_sizes() {
        assert!(synth_classification(1, 2, 10, 1.0, &mut rng(0)).is_err());
        assert!(synth_classification(2, 0, 10, 1.0, &mut rng(0)).is_err());
        assert!(synth_classification(3, 2, 2, 1.0, &mut rng(0)).is_err());
    }

    #[test]
    fn idx_scaling_and_errors() {
        let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        images.extend_from_slice(&[0, 255, 51, 102, 255, 0, 0, 255]);
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 3, 7];
        let ds = parse_idx(&images, &labels).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.labels(), &[3, 7]);
        assert_eq!(ds.classes(), 8);

        let mut bad = images.clone();
        bad[3] = 1;
        assert!(matches!(parse_idx(&bad, &labels), Err(DataError::BadMagic { .. })));
        assert!(matches!(
            parse_idx(&images[..images.len() - 1], &labels),
            Err(DataError::Truncated { .. })
        ));

        let mut three = vec![0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0, 1, 1, 2, 3];
        three.truncate(19);
        assert!(matches!(
            parse_idx(&three, &labels),
            Err(DataError::CountMismatch { images: 3, labels: 2 })
        ));
    }

    #[test]
    fn idx_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = LabeledDataset::new(
            vec![0.0, 1.0, 128.0 / 255.0, 3.0 / 255.0],
            2,
            vec![1, 0],
            2,
        )
        .unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx(&ds, 1, 2, &ip, &lp).unwrap();
        assert_eq!(load_idx(&ip, &lp).unwrap(), ds);
        assert!(matches!(
            load_idx(dir.path().join("missing"), &lp),
            Err(DataError::Io { .. })
        ));
    }

    #[test]
    fn non_pixel_features_rejected_by_encoder() {
        let ds = LabeledDataset::new(vec![0.5], 1, vec![0], 1).unwrap();
        assert!(matches!(encode_idx(&ds, 1, 1), Err(DataError::NotPixel { .. })));
    }

    proptest! {
        #[test]
        fn idx_round_trip_is_bit_exact(
            pixels in proptest::collection::vec(any::<u8>(), 12),
            labels in proptest::collection::vec(0usize..10, 3),
        ) {
            let classes = labels.iter().max().unwrap() + 1;
            let feats = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
            let ds = LabeledDataset::new(feats, 4, labels, classes).unwrap();
            let (img, lbl) = encode_idx(&ds, 2, 2).unwrap();
            prop_assert_eq!(parse_idx(&img, &lbl).unwrap(), ds);
        }

        #[test]
        fn dirichlet_partition_is_a_cover(seed in 0u64..500, m in 1usize..9, mu in 0.01f64..50.0) {
            let ds = balanced(60, 4);
            let p = dirichlet_partition(&ds, m, mu, &mut rng(seed)).unwrap();
            prop_assert_eq!(p.shards.len(), m);
            assert_partition(&p, 60);
        }
    }

    #[test]
    fn single_agent_gets_everything() {
        let ds = balanced(10, 2);
        let p = dirichlet_partition(&ds, 1, 0.5, &mut rng(3)).unwrap();
        let mut s = p.shards[0].clone();
        s.sort_unstable();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn partition_argument_errors() {
        let ds = balanced(10, 2);
        assert!(dirichlet_partition(&ds, 2, 0.0, &mut rng(0)).is_err());
        assert!(dirichlet_partition(&ds, 2, -1.0, &mut rng(0)).is_err());
        assert!(dirichlet_partition(&ds, 0, 1.0, &mut rng(0)).is_err());
        assert!(dirichlet_partition(&ds, 11, 1.0, &mut rng(0)).is_err());
    }

    #[test]
    fn tiny_mu_still_yields_nonempty_shards() {
        let ds = balanced(40, 2);
        for seed in 0..50 {
            let p = dirichlet_partition(&ds, 8, 1e-4, &mut rng(seed)).unwrap();
            assert_partition(&p, 40);
        }
    }

    #[test]
    fn largest_remainder_exact_counts() {
        assert_eq!(largest_remainder(&[0.5, 0.25, 0.25], 4), vec![2, 1, 1]);
        assert_eq!(largest_remainder(&[1.0 / 3.0; 3], 4), vec![2, 1, 1]);
        assert_eq!(largest_remainder(&[0.0, 1.0], 7), vec![0, 7]);
    }

    #[test]
    fn large_mu_gives_near_equal_shards() {
        let ds = balanced(400, 4);
        let mut within = 0;
        for seed in 0..1000 {
            let p = dirichlet_partition(&ds, 4, 1e6, &mut rng(seed)).unwrap();
            if p.shards.iter().all(|s| (90..=110).contains(&s.len())) {
                within += 1;
            }
        }
        assert!(within >= 990, "{within}/1000");
    }

    fn mean_label_entropy(mu: f64, seeds: u64) -> f64 {
        let ds = balanced(400, 4);
        let mut total = 0.0;
        let mut count = 0.0;
        for seed in 0..seeds {
            let p = dirichlet_partition(&ds, 5, mu, &mut rng(seed)).unwrap();
            for shard in &p.shards {
                let mut h = [0.0f64; 4];
                for &i in shard {
                    h[ds.label(i)] += 1.0;
                }
                let n = shard.len() as f64;
                total -= h
                    .iter()
                    .filter(|&&c| c > 0.0)
                    .map(|c| (c / n) * (c / n).ln())
                    .sum::<f64>();
                count += 1.0;
            }
        }
        total / count
    }

    #[test]
    fn larger_mu_is_less_heterogeneous() {
        assert!(mean_label_entropy(100.0, 200) > mean_label_entropy(0.1, 200));
    }

    #[test]
    fn validation_split_sizes() {
        let ds = balanced(10_000, 10);
        let s = make_validation_split(&ds, 0.2, &mut rng(5)).unwrap();
        assert_eq!(s.validation.len(), 2000);
        assert_eq!(s.remainder.len(), 8000);

        let ds = balanced(10, 2);
        let s = make_validation_split(&ds, 0.5, &mut rng(5)).unwrap();
        assert_eq!(s.validation.len(), 5);
        let mut all: Vec<usize> = s
            .validation_indices
            .iter()
            .chain(&s.remainder_indices)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn validation_split_rejects_bad_fraction() {
        let ds = balanced(10, 2);
        for f in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(make_validation_split(&ds, f, &mut rng(0)).is_err());
        }
    }

    #[test]
    fn shard_csv_lists_every_index() {
        let p = PartitionResult {
            shards: vec![vec![2, 0], vec![1]],
        };
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "index,agent\n0,0\n1,1\n2,0\n");
    }
}
