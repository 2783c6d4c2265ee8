use candle_core::{DType, Device};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::backbones::Backbones;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::networks::QualityRegressor;

/// Ridge added to covariances that are numerically singular.
pub const FID_EPS: f64 = 1e-6;

fn moments(x: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = x.len();
    if n < 2 {
        return Err(Error::Validation(format!("FID needs at least 2 samples per set, got {n}")));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("FID embeddings must share a non-zero dimension".into()));
    }
    let m = DMatrix::from_fn(n, d, |i, j| x[i][j]);
    let mu = DVector::from_fn(d, |j, _| m.column(j).mean());
    let centred = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mu[j]);
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    Ok((mu, cov))
}

fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn is_singular(cov: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    min <= 1e-12 * max.max(1e-300)
}

/// `|μ₁−μ₂|² + tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})` between Gaussians fitted to two
/// embedding sets. The matrix root is taken as `(Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2}`,
/// which has the same trace and stays symmetric.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (mu1, mut s1) = moments(a)?;
    let (mu2, mut s2) = moments(b)?;
    if mu1.len() != mu2.len() {
        return Err(Error::Shape("FID sets have different embedding sizes".into()));
    }
    if is_singular(&s1) || is_singular(&s2) {
        log::warn!("singular covariance in FID; adding {FID_EPS}·I");
        let eye = DMatrix::identity(s1.nrows(), s1.ncols()) * FID_EPS;
        s1 += &eye;
        s2 += &eye;
    }
    let r1 = sym_sqrt(&s1);
    let inner = &r1 * &s2 * &r1;
    let cross = sym_sqrt(&((&inner + inner.transpose()) * 0.5)).trace();
    let diff = &mu1 - &mu2;
    let fid = diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * cross;
    Ok(fid.max(0.0))
}

/// FID between generated and reference images in the backbone's embedding
/// space.
pub fn evaluate_fid(bb: &Backbones, generated: &[ImageTensor], reference: &[ImageTensor]) -> Result<f64> {
    frechet_distance(&bb.embed_for_fid(generated)?, &bb.embed_for_fid(reference)?)
}

/// Mean predicted quality over a set of drawings.
pub fn evaluate_quality(images: &[ImageTensor], m: &QualityRegressor) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Validation("quality evaluation on an empty set".into()));
    }
    let mut sum = 0.0;
    for chunk in images.chunks(16) {
        let x = ImageTensor::stack(chunk, m.store().dtype(), &Device::Cpu)?;
        let q: Vec<f64> = m.forward(&x)?.to_dtype(DType::F64)?.to_vec1()?;
        sum += q.iter().sum::<f64>();
    }
    Ok(sum / images.len() as f64)
}
