//! Synthesis-quality metrics: Fréchet distance between embedding sets,
//! foreground fidelity, a 2-D projection of style descriptors and per-category
//! tail statistics.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cellbank::cosine_similarity;
use crate::dataio::Dataset;
use crate::error::{Error, Result};

/// Relative cutoff below which eigenvalues of the square-root argument are
/// treated as zero.
pub const EIGEN_CLAMP: f64 = 1e-10;

const EIGEN_EPS: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 10_000;

/// Sample mean and unbiased covariance of a set of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

impl GaussianSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn summarize(embeddings: &[Vec<f64>]) -> Result<GaussianSummary> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let d = embeddings[0].len();
    if let Some(bad) = embeddings.iter().find(|e| e.len() != d) {
        return Err(Error::LengthMismatch {
            left: d,
            right: bad.len(),
        });
    }
    let x = DMatrix::from_fn(n, d, |i, j| embeddings[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut covariance = centered.transpose() * &centered / (n - 1) as f64;
    // exact symmetry
    covariance = (&covariance + covariance.transpose()) * 0.5;
    Ok(GaussianSummary {
        mean,
        covariance,
        count: n,
    })
}

fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym
        .try_symmetric_eigen(EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::NumericalFailure("symmetric eigendecomposition did not converge".into()))?;
    Ok((eig.eigenvalues, eig.eigenvectors))
}

fn clamp_eigenvalues(values: &DVector<f64>) -> DVector<f64> {
    let max = values.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = EIGEN_CLAMP * max;
    values.map(|v| if v < cutoff { 0.0 } else { v })
}

/// Square root of a positive semi-definite matrix.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = symmetric_eigen(m)?;
    let roots = clamp_eigenvalues(&values).map(f64::sqrt);
    Ok(&vectors * DMatrix::from_diagonal(&roots) * vectors.transpose())
}

/// `|ma - mb|^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2))`, with the trace of the
/// square root taken as the sum of square roots of the eigenvalues of
/// `Sa^(1/2) Sb Sa^(1/2)`.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "summaries of dimension {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let diff = &a.mean - &b.mean;
    let sa = psd_sqrt(&a.covariance)?;
    let inner = &sa * &b.covariance * &sa;
    let (values, _) = symmetric_eigen(&inner)?;
    let trace_sqrt: f64 = clamp_eigenvalues(&values).iter().map(|v| v.sqrt()).sum();
    let d = diff.norm_squared() + a.covariance.trace() + b.covariance.trace() - 2.0 * trace_sqrt;
    if !d.is_finite() {
        return Err(Error::NumericalFailure(format!("distance is {d}")));
    }
    Ok(d)
}

/// 100 × mean cosine similarity over (synthetic foreground, source) pairs.
pub fn fidelity_score(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sum = 0.0;
    for (synth, source) in pairs {
        sum += cosine_similarity(synth, source)?;
    }
    Ok(100.0 * sum / pairs.len() as f64)
}

/// Project onto the top two principal components. Each component's sign is
/// fixed so its largest-magnitude loading is positive (first index on ties).
pub fn style_projection(descriptors: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = descriptors.len();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    let s = summarize(descriptors)?;
    let (values, vectors) = symmetric_eigen(&s.covariance)?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));

    let mut axes: Vec<DVector<f64>> = Vec::with_capacity(2);
    for &k in order.iter().take(2) {
        let mut v = vectors.column(k).into_owned();
        let mut lead = 0;
        for i in 1..v.len() {
            if v[i].abs() > v[lead].abs() {
                lead = i;
            }
        }
        if v[lead] < 0.0 {
            v = -v;
        }
        axes.push(v);
    }
    Ok(descriptors
        .iter()
        .map(|d| {
            let c = DVector::from_column_slice(d) - &s.mean;
            let coord = |k: usize| axes.get(k).map_or(0.0, |a| a.dot(&c));
            [coord(0), coord(1)]
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TailStat {
    pub count: usize,
    pub is_tail: bool,
}

/// Annotation count per category; a category is tail when its count is
/// strictly below `threshold`. Declared categories without annotations count
/// as zero.
pub fn tail_stats(dataset: &Dataset, threshold: usize) -> BTreeMap<String, TailStat> {
    let mut counts: BTreeMap<String, usize> = dataset.categories.iter().map(|c| (c.clone(), 0)).collect();
    for (cat, n) in dataset.category_counts() {
        counts.insert(cat, n);
    }
    tail_stats_from_counts(&counts, threshold)
}

pub fn tail_stats_from_counts(counts: &BTreeMap<String, usize>, threshold: usize) -> BTreeMap<String, TailStat> {
    counts
        .iter()
        .map(|(cat, &count)| {
            (
                cat.clone(),
                TailStat {
                    count,
                    is_tail: count < threshold,
                },
            )
        })
        .collect()
}

/// One row of `style_points.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylePoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub split: String,
    pub category: String,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Codec(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_style_points(path: &Path, points: &[StylePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for p in points {
        w.serialize(p).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `id,split,category,v0,v1,...` per descriptor.
pub fn write_descriptors(path: &Path, rows: &[(String, String, String, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let dim = rows.first().map_or(0, |r| r.3.len());
    let mut header = vec!["id".to_string(), "split".into(), "category".into()];
    header.extend((0..dim).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (id, split, cat, values) in rows {
        let mut rec = vec![id.clone(), split.clone(), cat.clone()];
        rec.extend(values.iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
