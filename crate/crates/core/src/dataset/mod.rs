//! Synthetic long-tailed Gaussian-mixture data and class statistics.

mod io;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ProbVector, RngStream, Vector};

pub use io::{load_counts, load_dataset, save_counts, save_dataset};
pub(crate) use io::write_atomic;

/// One isotropic Gaussian component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassComponent {
    pub mean: Vector,
    pub sigma: f64,
}

/// Class-conditional generative model `x | y ~ N(mean_y, sigma_y² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture")]
pub struct GaussianMixtureSpec {
    dims: usize,
    classes: Vec<ClassComponent>,
}

#[derive(Deserialize)]
struct RawMixture {
    dims: usize,
    classes: Vec<ClassComponent>,
}

impl TryFrom<RawMixture> for GaussianMixtureSpec {
    type Error = Error;
    fn try_from(r: RawMixture) -> Result<Self> {
        GaussianMixtureSpec::new(r.dims, r.classes)
    }
}

impl GaussianMixtureSpec {
    pub fn new(dims: usize, classes: Vec<ClassComponent>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::Config(format!(
                "a mixture needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        if dims == 0 {
            return Err(Error::Config("mixture dimensionality must be positive".into()));
        }
        for (i, c) in classes.iter().enumerate() {
            if c.mean.len() != dims {
                return Err(Error::Dimension(format!(
                    "class {i} mean has {} coordinates, expected {dims}",
                    c.mean.len()
                )));
            }
            if !(c.sigma > 0.0 && c.sigma.is_finite()) {
                return Err(Error::Config(format!("class {i} sigma must be positive")));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::NonFinite(format!("class {i} mean is not finite")));
            }
        }
        Ok(Self { dims, classes })
    }

    /// Two unit-variance classes at (−1, 0) and (+1, 0).
    pub fn toy() -> Self {
        Self::new(
            2,
            vec![
                ClassComponent { mean: vec![-1.0, 0.0], sigma: 1.0 },
                ClassComponent { mean: vec![1.0, 0.0], sigma: 1.0 },
            ],
        )
        .expect("toy mixture is valid")
    }

    /// `classes` components spaced evenly on a circle of the given radius in 2-D.
    pub fn ring(classes: usize, radius: f64, sigma: f64) -> Result<Self> {
        let comps = (0..classes)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / classes as f64;
                ClassComponent {
                    mean: vec![-radius * a.cos(), radius * a.sin()],
                    sigma,
                }
            })
            .collect();
        Self::new(2, comps)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassComponent] {
        &self.classes
    }

    /// Same spec with every mean coordinate and sigma multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(
            self.dims,
            self.classes
                .iter()
                .map(|c| ClassComponent {
                    mean: c.mean.iter().map(|m| m * k).collect(),
                    sigma: c.sigma * k,
                })
                .collect(),
        )
    }

    pub(crate) fn draw_into<R: Rng>(&self, class: usize, rng: &mut R, out: &mut Vec<f64>) {
        let c = &self.classes[class];
        for m in &c.mean {
            let e: f64 = rng.sample(StandardNormal);
            out.push(m + c.sigma * e);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ProfileShape {
    /// `nᵢ = n₁ · IF^(−i/(C−1))`
    Exponential,
    /// First `head_classes` classes get `n₁`, the rest `n₁ / IF`.
    Step { head_classes: usize },
    Explicit { counts: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailProfile {
    pub num_classes: usize,
    pub max_count: usize,
    pub imbalance_factor: f64,
    pub shape: ProfileShape,
}

fn round_count(x: f64) -> usize {
    x.round_ties_even().max(0.0) as usize
}

/// Per-class counts for a long-tail profile, head class first.
pub fn make_longtail_counts(profile: &LongTailProfile) -> Result<Vec<usize>> {
    let c = profile.num_classes;
    if c < 2 {
        return Err(Error::Profile(format!("need at least 2 classes, got {c}")));
    }
    let imb = profile.imbalance_factor;
    if !(imb >= 1.0 && imb.is_finite()) {
        return Err(Error::Profile(format!("imbalance factor {imb} must be >= 1")));
    }
    let n1 = profile.max_count as f64;
    let counts: Vec<usize> = match &profile.shape {
        ProfileShape::Exponential => (0..c)
            .map(|i| round_count(n1 * imb.powf(-(i as f64) / (c - 1) as f64)))
            .collect(),
        ProfileShape::Step { head_classes } => {
            if *head_classes == 0 || *head_classes >= c {
                return Err(Error::Profile(format!(
                    "step profile needs 1..{c} head classes, got {head_classes}"
                )));
            }
            (0..c)
                .map(|i| {
                    if i < *head_classes {
                        profile.max_count
                    } else {
                        round_count(n1 / imb)
                    }
                })
                .collect()
        }
        ProfileShape::Explicit { counts } => {
            if counts.len() != c {
                return Err(Error::Profile(format!(
                    "explicit profile lists {} counts for {c} classes",
                    counts.len()
                )));
            }
            counts.clone()
        }
    };
    if let Some(i) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Profile(format!("class {i} would have zero samples")));
    }
    Ok(counts)
}

/// Features, labels and per-class counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    counts: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        let mut counts = vec![0usize; num_classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::Dimension(format!(
                    "label {y} of sample {i} is outside [0, {num_classes})"
                )));
            }
            counts[y] += 1;
        }
        Ok(Self { features, labels, counts })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        let labels: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
        LabeledDataset::new(self.features.select_rows(idx), labels, self.num_classes())
            .expect("subset of a valid dataset is valid")
    }
}

/// Draws exactly `counts[i]` samples from class `i`, then applies a seeded permutation.
pub fn sample_dataset(
    gmm: &GaussianMixtureSpec,
    counts: &[usize],
    rng: RngStream,
) -> Result<LabeledDataset> {
    if counts.len() != gmm.num_classes() {
        return Err(Error::Dimension(format!(
            "{} counts for a {}-class mixture",
            counts.len(),
            gmm.num_classes()
        )));
    }
    if let Some(i) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Count(format!("class {i} has a zero count")));
    }
    let mut r = rng.rng();
    let n: usize = counts.iter().sum();
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(n);
    for (class, &k) in counts.iter().enumerate() {
        for _ in 0..k {
            let mut x = Vec::with_capacity(gmm.dims());
            gmm.draw_into(class, &mut r, &mut x);
            rows.push((class, x));
        }
    }
    rows.shuffle(&mut r);
    let mut values = Vec::with_capacity(n * gmm.dims());
    let mut labels = Vec::with_capacity(n);
    for (y, x) in rows {
        labels.push(y);
        values.extend(x);
    }
    LabeledDataset::new(Matrix::from_vec(n, gmm.dims(), values)?, labels, gmm.num_classes())
}

/// `nᵢ / Σₖ nₖ`.
pub fn empirical_prior(counts: &[usize]) -> Result<ProbVector> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Normalization("all class counts are zero".into()));
    }
    let t = total as f64;
    ProbVector::new(counts.iter().map(|&n| n as f64 / t).collect())
}

/// `max(counts) / min(counts)`.
pub fn imbalance_factor(counts: &[usize]) -> f64 {
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().min().unwrap_or(0);
    max as f64 / min as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftDirection {
    Forward,
    Backward,
    Uniform,
}

impl std::str::FromStr for ShiftDirection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Self::Forward),
            "backward" => Ok(Self::Backward),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::Usage(format!("unknown shift direction '{other}'"))),
        }
    }
}

impl std::fmt::Display for ShiftDirection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Forward => "forward",
            Self::Backward => "backward",
            Self::Uniform => "uniform",
        })
    }
}

/// Test-time label shift: head-heavy (forward), tail-heavy (backward) or balanced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    direction: ShiftDirection,
    ratio: f64,
}

impl ShiftSpec {
    pub fn new(direction: ShiftDirection, ratio: f64) -> Result<Self> {
        if !(ratio >= 1.0 && ratio.is_finite()) {
            return Err(Error::Shift(format!("imbalance ratio {ratio} must be >= 1")));
        }
        if direction == ShiftDirection::Uniform && ratio != 1.0 {
            return Err(Error::Shift("a uniform shift must have ratio 1".into()));
        }
        Ok(Self { direction, ratio })
    }

    pub fn uniform() -> Self {
        Self { direction: ShiftDirection::Uniform, ratio: 1.0 }
    }

    pub fn direction(&self) -> ShiftDirection {
        self.direction
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// Class weights of the shifted profile, normalized to sum 1.
    pub fn target_prior(&self, num_classes: usize) -> Result<ProbVector> {
        let c = num_classes;
        if c < 2 {
            return Err(Error::Dimension("shift needs at least 2 classes".into()));
        }
        let w: Vec<f64> = (0..c)
            .map(|i| {
                let pos = match self.direction {
                    ShiftDirection::Forward => i,
                    ShiftDirection::Backward => c - 1 - i,
                    ShiftDirection::Uniform => 0,
                };
                self.ratio.powf(-(pos as f64) / (c - 1) as f64)
            })
            .collect();
        crate::numerics::normalize_to_simplex(&w)
    }
}

/// Redistributes the total of `base` according to a shift profile.
pub fn make_shifted_counts(base: &[usize], shift: &ShiftSpec) -> Result<Vec<usize>> {
    let total: usize = base.iter().sum();
    let prior = shift.target_prior(base.len())?;
    let counts: Vec<usize> = prior
        .as_slice()
        .iter()
        .map(|p| round_count(p * total as f64))
        .collect();
    if let Some(i) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Shift(format!(
            "class {i} gets zero samples under {} ratio {}",
            shift.direction, shift.ratio
        )));
    }
    Ok(counts)
}

/// Mean feature row.
pub fn feature_mean(ds: &LabeledDataset) -> Result<Vector> {
    if ds.is_empty() {
        return Err(Error::Dimension("feature mean of an empty dataset".into()));
    }
    ds.features().column_means()
}

/// Mean feature row of each class; `None` for classes without samples.
pub fn class_feature_means(ds: &LabeledDataset) -> Vec<Option<Vector>> {
    let d = ds.dims();
    let mut sums = vec![vec![0.0; d]; ds.num_classes()];
    for (row, &y) in ds.features().iter_rows().zip(ds.labels()) {
        for (s, v) in sums[y].iter_mut().zip(row) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(ds.counts())
        .map(|(s, &n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
        .collect()
}
