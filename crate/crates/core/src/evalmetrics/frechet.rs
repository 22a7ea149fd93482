//! Fréchet distance between Gaussian fits of embedding sets, and 2-D PCA.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::diffcore::Matrix;

/// Diagonal jitter added to both covariances when either is singular.
pub const COVARIANCE_JITTER: f64 = 1e-6;
/// Eigenvalues of the symmetrized product below `-NEGATIVE_EIGEN_TOL * scale`
/// are reported as an error; smaller negatives are clamped to zero.
pub const NEGATIVE_EIGEN_TOL: f64 = 1e-8;

/// `n x d` sentence embeddings tagged with the encoder that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub data: Matrix,
    pub provenance: String,
}

impl EmbeddingSet {
    pub fn new(data: Matrix, provenance: impl Into<String>) -> Result<Self, MetricsError> {
        if !data.is_finite() {
            return Err(MetricsError::NonFinite);
        }
        Ok(Self { data, provenance: provenance.into() })
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.data.rows(), self.data.cols(), self.data.data())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrechetResult {
    pub distance: f64,
    /// Whether the covariance jitter had to be added.
    pub regularized: bool,
}

fn mean_and_cov(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows();
    let mean = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n as f64));
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    (mean, (&cov + cov.transpose()) * 0.5)
}

fn is_singular(cov: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    min <= 1e-12 * max.max(1.0)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`, with the trace of
/// the square root taken from the eigenvalues of the symmetric
/// `S_a^{1/2} S_b S_a^{1/2}`.
pub fn frechet_detailed(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<FrechetResult, MetricsError> {
    if a.dim() != b.dim() {
        return Err(MetricsError::DimensionMismatch(a.dim(), b.dim()));
    }
    if a.len() < 2 || b.len() < 2 {
        return Err(MetricsError::TooFewSamples { needed: 2, got: a.len().min(b.len()) });
    }
    let (mu_a, mut cov_a) = mean_and_cov(&a.to_dmatrix());
    let (mu_b, mut cov_b) = mean_and_cov(&b.to_dmatrix());
    let regularized = is_singular(&cov_a) || is_singular(&cov_b);
    if regularized {
        let jitter = DMatrix::<f64>::identity(a.dim(), a.dim()) * COVARIANCE_JITTER;
        cov_a += &jitter;
        cov_b += &jitter;
    }
    let root_a = psd_sqrt(&cov_a);
    let prod = &root_a * &cov_b * &root_a;
    let prod = (&prod + prod.transpose()) * 0.5;
    let eig = SymmetricEigen::new(prod);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    let mut tr_sqrt = 0.0;
    for &v in eig.eigenvalues.iter() {
        if v < -NEGATIVE_EIGEN_TOL * scale {
            return Err(MetricsError::NegativeEigenvalue(v));
        }
        tr_sqrt += v.max(0.0).sqrt();
    }
    let diff = mu_a - mu_b;
    let d = diff.norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    Ok(FrechetResult { distance: d.max(0.0), regularized })
}

pub fn frechet(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64, MetricsError> {
    frechet_detailed(a, b).map(|r| r.distance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca2 {
    /// `n x 2` projected coordinates.
    pub coords: Matrix,
    pub explained: [f64; 2],
    /// Set when the data has rank below 2; the second column is then zero.
    pub rank_deficient: bool,
    pub mean: Vec<f64>,
    /// `d x 2` principal axes (a zero column when rank deficient).
    pub axes: Matrix,
}

impl Pca2 {
    /// Projects another set onto these axes.
    pub fn project(&self, e: &EmbeddingSet) -> Result<Matrix, MetricsError> {
        if e.dim() != self.mean.len() {
            return Err(MetricsError::DimensionMismatch(self.mean.len(), e.dim()));
        }
        let mut centered = e.data.clone();
        for i in 0..centered.rows() {
            for (x, m) in centered.row_mut(i).iter_mut().zip(&self.mean) {
                *x -= m;
            }
        }
        Ok(centered.matmul(&self.axes))
    }
}

/// Mean-centered projection onto the top two principal axes.
pub fn pca2(e: &EmbeddingSet) -> Result<Pca2, MetricsError> {
    if e.len() <= 2 {
        return Err(MetricsError::TooFewSamples { needed: 3, got: e.len() });
    }
    let x = e.to_dmatrix();
    let (mean, cov) = mean_and_cov(&x);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let lam = |k: usize| order.get(k).map_or(0.0, |&i| eig.eigenvalues[i].max(0.0));
    let rank_deficient = order.len() < 2 || lam(1) <= 1e-12 * lam(0).max(1e-300);
    let axis = |k: usize| -> Option<DVector<f64>> {
        if k == 1 && rank_deficient {
            return None;
        }
        let mut v = eig.eigenvectors.column(order[k]).into_owned();
        // Deterministic sign: largest-magnitude component positive.
        let (imax, _) = v.iter().enumerate().fold((0, 0.0f64), |acc, (i, &c)| if c.abs() > acc.1 { (i, c.abs()) } else { acc });
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        Some(v)
    };
    let mut axes = Matrix::zeros(e.dim(), 2);
    for (k, ax) in [axis(0), axis(1)].iter().enumerate() {
        if let Some(ax) = ax {
            for (i, &c) in ax.iter().enumerate() {
                axes[(i, k)] = c;
            }
        }
    }
    let frac = |k: usize| if total > 0.0 { lam(k) / total } else { 0.0 };
    let explained = [frac(0), if rank_deficient { 0.0 } else { frac(1) }];
    let mut fit = Pca2 { coords: Matrix::zeros(0, 2), explained, rank_deficient, mean: mean.iter().copied().collect(), axes };
    fit.coords = fit.project(e)?;
    Ok(fit)
}

/// CSV with a header line: `set,index,pc1,pc2`.
pub fn pca_csv(sets: &[(&str, &Matrix)]) -> String {
    let mut s = String::from("set,index,pc1,pc2\n");
    for (label, coords) in sets {
        for i in 0..coords.rows() {
            s.push_str(&format!("{label},{i},{},{}\n", coords[(i, 0)], coords[(i, 1)]));
        }
    }
    s
}
