use std::fmt::Write as _;
use std::path::Path;

use super::GroupThresholds;
use crate::dataset::{write_atomic, GaussianMixtureSpec};
use crate::error::{Error, Result};
use crate::model::LinearSoftmaxModel;
use crate::numerics::{dot, ProbVector};
use crate::oracle::bayes_linear_model;

/// A named 2-class linear decision rule.
#[derive(Debug, Clone)]
pub struct BoundarySeries {
    pub name: String,
    pub model: LinearSoftmaxModel,
}

/// `points` evenly spaced samples of a 2-D, 2-class model's zero-log-odds line,
/// within `half_width` of the line's point nearest the origin.
pub fn boundary_line_points(model: &LinearSoftmaxModel, half_width: f64, points: usize) -> Result<Vec<[f64; 2]>> {
    if model.dims() != 2 || model.num_classes() != 2 {
        return Err(Error::Dimension(format!(
            "boundary lines need a 2-D, 2-class model, got {} dims and {} classes",
            model.dims(),
            model.num_classes()
        )));
    }
    let w = model.weights();
    let dw = [w.get(1, 0) - w.get(0, 0), w.get(1, 1) - w.get(0, 1)];
    let db = model.biases()[1] - model.biases()[0];
    let nn = dot(&dw, &dw);
    if nn == 0.0 {
        return Err(Error::Domain("model has no decision line".into()));
    }
    let base = [-db * dw[0] / nn, -db * dw[1] / nn];
    let len = nn.sqrt();
    let dir = [-dw[1] / len, dw[0] / len];
    let n = points.max(2);
    Ok((0..n)
        .map(|i| {
            let t = -half_width + 2.0 * half_width * i as f64 / (n - 1) as f64;
            [base[0] + t * dir[0], base[1] + t * dir[1]]
        })
        .collect())
}

/// Writes `series,x0,x1` rows for each model's decision line plus the Bayes line under `prior`.
pub fn export_boundary_2d(
    series: &[BoundarySeries],
    gmm: &GaussianMixtureSpec,
    prior: &ProbVector,
    half_width: f64,
    points: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    if gmm.dims() != 2 || gmm.num_classes() != 2 {
        return Err(Error::Dimension("boundary-2d needs a 2-D, 2-class mixture".into()));
    }
    let bayes = bayes_linear_model(gmm, prior)?;
    let mut s = String::from("series,x0,x1\n");
    let all = series
        .iter()
        .map(|b| (b.name.as_str(), &b.model))
        .chain(std::iter::once(("bayes", &bayes)));
    for (name, m) in all {
        for p in boundary_line_points(m, half_width, points)? {
            let _ = writeln!(s, "{name},{:?},{:?}", p[0], p[1]);
        }
    }
    write_atomic(path.as_ref(), s.as_bytes())
}

/// Writes `class,freq_prior,effective_prior,group` rows.
pub fn export_prior_bars(
    freq: &ProbVector,
    effective: &ProbVector,
    train_counts: &[usize],
    thresholds: &GroupThresholds,
    path: impl AsRef<Path>,
) -> Result<()> {
    if freq.len() != effective.len() || freq.len() != train_counts.len() {
        return Err(Error::Dimension(format!(
            "prior bars need equal lengths, got {}, {} and {}",
            freq.len(),
            effective.len(),
            train_counts.len()
        )));
    }
    let mut s = String::from("class,freq_prior,effective_prior,group\n");
    for k in 0..freq.len() {
        let _ = writeln!(
            s,
            "{k},{:?},{:?},{}",
            freq[k],
            effective[k],
            thresholds.group_of(train_counts[k]).as_str()
        );
    }
    write_atomic(path.as_ref(), s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bayes_model_line_coincides_with_bayes_series() {
        let g = GaussianMixtureSpec::toy();
        let prior = ProbVector::new(vec![0.99, 0.01]).unwrap();
        let bayes = bayes_linear_model(&g, &prior).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        export_boundary_2d(&[BoundarySeries { name: "model".into(), model: bayes }], &g, &prior, 3.0, 5, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "series,x0,x1");
        assert_eq!(lines.len(), 11);
        for i in 0..5 {
            let a: Vec<&str> = lines[1 + i].split(',').collect();
            let b: Vec<&str> = lines[6 + i].split(',').collect();
            assert_eq!((a[0], b[0]), ("model", "bayes"));
            assert_eq!(a[1..], b[1..]);
        }
        let x0: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
        assert!((x0 - 99f64.ln() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn prior_bars_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        let f = ProbVector::new(vec![0.9, 0.09, 0.01]).unwrap();
        let e = ProbVector::new(vec![0.95, 0.045, 0.005]).unwrap();
        export_prior_bars(&f, &e, &[900, 90, 10], &GroupThresholds::default(), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("0,0.9,0.95,many"));
        assert!(text.contains("2,0.01,0.005,few"));
    }

    #[test]
    fn wrong_dimensionality() {
        let m = LinearSoftmaxModel::zeros(3, 2).unwrap();
        assert!(matches!(boundary_line_points(&m, 1.0, 3), Err(Error::Dimension(_))));
    }
}
