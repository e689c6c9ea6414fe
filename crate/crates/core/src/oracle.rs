//! Exact Bayes quantities for Gaussian mixtures, and a Monte-Carlo estimate
//! of a model's marginal class distribution.

use rand::Rng;

use crate::dataset::GaussianMixtureSpec;
use crate::error::{Error, Result};
use crate::model::{LinearSoftmaxModel, Model};
use crate::numerics::{argmax, dot, norm, Matrix, ProbVector, RngStream};
use crate::scores::{LogitMatrix, PosteriorMatrix};

fn check(gmm: &GaussianMixtureSpec, prior: &ProbVector, dims: usize) -> Result<()> {
    if prior.len() != gmm.num_classes() {
        return Err(Error::Dimension(format!(
            "prior has {} classes, mixture {}",
            prior.len(),
            gmm.num_classes()
        )));
    }
    if dims != gmm.dims() {
        return Err(Error::Dimension(format!(
            "point has {dims} coordinates, mixture {}",
            gmm.dims()
        )));
    }
    Ok(())
}

/// Unnormalized log joint `log πᵢ + log N(x; μᵢ, σᵢ² I)` without the shared `2π` term.
fn log_joint(gmm: &GaussianMixtureSpec, prior: &ProbVector, x: &[f64], out: &mut [f64]) {
    let d = gmm.dims() as f64;
    for (k, c) in gmm.classes().iter().enumerate() {
        let sq: f64 = x.iter().zip(&c.mean).map(|(a, m)| (a - m) * (a - m)).sum();
        out[k] = prior[k].ln() - d * c.sigma.ln() - sq / (2.0 * c.sigma * c.sigma);
    }
}

fn normalize_log_row(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

pub fn bayes_posterior(gmm: &GaussianMixtureSpec, prior: &ProbVector, x: &[f64]) -> Result<ProbVector> {
    check(gmm, prior, x.len())?;
    let mut row = vec![0.0; gmm.num_classes()];
    log_joint(gmm, prior, x, &mut row);
    normalize_log_row(&mut row);
    ProbVector::new(row)
}

/// Bayes posteriors for every row of `features`.
pub fn bayes_posteriors(gmm: &GaussianMixtureSpec, prior: &ProbVector, features: &Matrix) -> Result<PosteriorMatrix> {
    check(gmm, prior, features.cols())?;
    let c = gmm.num_classes();
    let mut out = Matrix::zeros(features.rows(), c);
    for i in 0..features.rows() {
        let row = out.row_mut(i);
        log_joint(gmm, prior, features.row(i), row);
        normalize_log_row(row);
    }
    PosteriorMatrix::new(out)
}

/// Log Bayes posteriors; requires a strictly positive prior.
pub fn bayes_log_posteriors(gmm: &GaussianMixtureSpec, prior: &ProbVector, features: &Matrix) -> Result<LogitMatrix> {
    check(gmm, prior, features.cols())?;
    if !prior.is_strictly_positive() {
        return Err(Error::Domain("log posterior under a prior with zero entries".into()));
    }
    let c = gmm.num_classes();
    let mut out = Matrix::zeros(features.rows(), c);
    for i in 0..features.rows() {
        let row = out.row_mut(i);
        log_joint(gmm, prior, features.row(i), row);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let l = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= l;
        }
    }
    LogitMatrix::new(out)
}

/// Argmax of the Bayes posterior per row, ties to the smaller index.
pub fn bayes_classify(gmm: &GaussianMixtureSpec, prior: &ProbVector, features: &Matrix) -> Result<Vec<usize>> {
    check(gmm, prior, features.cols())?;
    let mut row = vec![0.0; gmm.num_classes()];
    Ok(features
        .iter_rows()
        .map(|x| {
            log_joint(gmm, prior, x, &mut row);
            argmax(&row)
        })
        .collect())
}

/// Mean model posterior over `n_draws` fresh samples from the mixture under `sampling_prior`.
pub fn oracle_effective_prior(
    model: &Model,
    gmm: &GaussianMixtureSpec,
    sampling_prior: &ProbVector,
    n_draws: usize,
    rng: RngStream,
) -> Result<ProbVector> {
    if n_draws < 1000 {
        return Err(Error::Config(format!("oracle needs at least 1000 draws, got {n_draws}")));
    }
    check(gmm, sampling_prior, model.dims())?;
    if model.num_classes() != gmm.num_classes() {
        return Err(Error::Dimension("model and mixture class counts differ".into()));
    }
    let c = gmm.num_classes();
    let mut r = rng.rng();
    let mut acc = vec![0.0; c];
    let mut x = Vec::with_capacity(gmm.dims());
    let mut z = vec![0.0; c];
    for _ in 0..n_draws {
        let u: f64 = r.random();
        let mut y = c - 1;
        let mut cum = 0.0;
        for k in 0..c {
            cum += sampling_prior[k];
            if u < cum {
                y = k;
                break;
            }
        }
        x.clear();
        gmm.draw_into(y, &mut r, &mut x);
        model.logits_into(&x, &mut z);
        normalize_log_row(&mut z);
        for (a, p) in acc.iter_mut().zip(&z) {
            *a += p;
        }
    }
    let n = n_draws as f64;
    crate::numerics::normalize_to_simplex(&acc.iter().map(|a| a / n).collect::<Vec<_>>())
}

/// Unit inter-mean direction, mean-to-mean distance and midpoint of a 2-class mixture.
fn axis(gmm: &GaussianMixtureSpec) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    if gmm.num_classes() != 2 {
        return Err(Error::UnsupportedModel(format!(
            "boundary geometry needs 2 classes, got {}",
            gmm.num_classes()
        )));
    }
    let (m0, m1) = (&gmm.classes()[0].mean, &gmm.classes()[1].mean);
    let diff: Vec<f64> = m1.iter().zip(m0).map(|(a, b)| a - b).collect();
    let d = norm(&diff);
    if d == 0.0 {
        return Err(Error::Domain("class means coincide".into()));
    }
    let u = diff.iter().map(|v| v / d).collect();
    let mid = m0.iter().zip(m1).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((u, d, mid))
}

/// Position of the Bayes boundary on the inter-mean axis, measured from the
/// midpoint towards class 1.
pub fn bayes_boundary_position(gmm: &GaussianMixtureSpec, prior: &ProbVector) -> Result<f64> {
    check(gmm, prior, gmm.dims())?;
    let (_, d, _) = axis(gmm)?;
    if !prior.is_strictly_positive() {
        return Err(Error::Domain("boundary under a prior with zero entries".into()));
    }
    let s0 = gmm.classes()[0].sigma;
    let s1 = gmm.classes()[1].sigma;
    let dim = gmm.dims() as f64;
    let (q0, q1) = (1.0 / (s0 * s0), 1.0 / (s1 * s1));
    // log-odds(t) = a t² + b t + c along x = mid + t·u
    let a = 0.5 * (q0 - q1);
    let b = 0.5 * d * (q0 + q1);
    let c = (prior[1] / prior[0]).ln() + dim * (s0 / s1).ln() + d * d / 8.0 * (q0 - q1);
    if a.abs() < 1e-12 * b.abs() {
        return Ok(-c / b);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Err(Error::Domain("Bayes rule has no boundary on the inter-mean axis".into()));
    }
    let sq = disc.sqrt();
    let r1 = (-b + sq) / (2.0 * a);
    let r2 = (-b - sq) / (2.0 * a);
    Ok(if r1.abs() <= r2.abs() { r1 } else { r2 })
}

/// Position of a linear model's zero-log-odds hyperplane on the inter-mean axis.
pub fn model_boundary_position(model: &LinearSoftmaxModel, gmm: &GaussianMixtureSpec) -> Result<f64> {
    if model.num_classes() != 2 {
        return Err(Error::UnsupportedModel(format!(
            "boundary geometry needs 2 classes, got {}",
            model.num_classes()
        )));
    }
    if model.dims() != gmm.dims() {
        return Err(Error::Dimension("model and mixture dimensions differ".into()));
    }
    let (u, _, mid) = axis(gmm)?;
    let w = model.weights();
    let dw: Vec<f64> = w.row(1).iter().zip(w.row(0)).map(|(a, b)| a - b).collect();
    let db = model.biases()[1] - model.biases()[0];
    let proj = dot(&dw, &u);
    if proj == 0.0 {
        return Err(Error::Domain("model boundary is parallel to the inter-mean axis".into()));
    }
    Ok(-(dot(&dw, &mid) + db) / proj)
}

/// Signed distance along the inter-mean axis from the Bayes boundary to the
/// model's boundary; positive means the model's boundary lies further towards class 1.
pub fn boundary_offset(model: &Model, gmm: &GaussianMixtureSpec, prior: &ProbVector) -> Result<f64> {
    let lin = model
        .as_linear()
        .ok_or_else(|| Error::UnsupportedModel("boundary offset needs a linear model".into()))?;
    Ok(model_boundary_position(lin, gmm)? - bayes_boundary_position(gmm, prior)?)
}

/// Linear model whose softmax equals the Bayes posterior; all sigmas must be equal.
pub fn bayes_linear_model(gmm: &GaussianMixtureSpec, prior: &ProbVector) -> Result<LinearSoftmaxModel> {
    check(gmm, prior, gmm.dims())?;
    let s = gmm.classes()[0].sigma;
    if gmm.classes().iter().any(|c| c.sigma != s) {
        return Err(Error::UnsupportedModel("unequal class sigmas give a quadratic rule".into()));
    }
    if !prior.is_strictly_positive() {
        return Err(Error::Domain("prior has zero entries".into()));
    }
    let q = 1.0 / (s * s);
    let rows: Vec<Vec<f64>> = gmm.classes().iter().map(|c| c.mean.iter().map(|m| m * q).collect()).collect();
    let biases = gmm
        .classes()
        .iter()
        .enumerate()
        .map(|(k, c)| prior[k].ln() - 0.5 * q * dot(&c.mean, &c.mean))
        .collect();
    LinearSoftmaxModel::new(Matrix::from_rows(&rows, gmm.dims())?, biases)
}
