//! xDAWN spatial filtering.
//!
//! Filters are the leading generalized eigenvectors of the evoked covariance
//! (class-mean target response) against the total covariance of all epochs.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::synthdata::Epoch;

pub const DEFAULT_FILTERS: usize = 8;

/// Ridge added to both covariances, relative to `trace / channels`.
const RIDGE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct SpatialFilterBank {
    /// `n_filters x channels`.
    pub weights: DMatrix<f64>,
    /// Generalized Rayleigh quotients, non-increasing.
    pub rayleigh_quotients: Vec<f64>,
}

impl SpatialFilterBank {
    pub fn n_filters(&self) -> usize {
        self.weights.nrows()
    }

    pub fn channels(&self) -> usize {
        self.weights.ncols()
    }

    /// Same bank with replaced weights (e.g. after quantization round trip).
    pub fn with_weights(&self, weights: DMatrix<f64>) -> Self {
        assert_eq!(weights.shape(), self.weights.shape());
        Self { weights, rayleigh_quotients: self.rayleigh_quotients.clone() }
    }
}

/// Filter-major flattened projection of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn add_ridge(cov: &mut DMatrix<f64>) {
    let n = cov.nrows();
    let eps = RIDGE * cov.trace() / n as f64;
    for i in 0..n {
        cov[(i, i)] += eps;
    }
}

/// Evoked (`P P^T / T`) and total (`mean X X^T / T`) covariances with ridge.
pub fn xdawn_covariances(train: &[&Epoch]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let first = train.first().ok_or_else(|| Error::Training("no training epochs".into()))?;
    let (channels, samples) = first.data.shape();
    if let Some(e) = train.iter().find(|e| e.data.shape() != (channels, samples)) {
        return Err(Error::Dimension { expected: channels * samples, found: e.data.len() });
    }
    let n_targets = train.iter().filter(|e| e.label.is_target()).count();
    if n_targets == 0 || n_targets == train.len() {
        return Err(Error::Training("xDAWN needs both target and non-target epochs".into()));
    }

    let mut evoked = DMatrix::<f64>::zeros(channels, samples);
    let mut total = DMatrix::<f64>::zeros(channels, channels);
    for e in train {
        if e.label.is_target() {
            evoked += &e.data;
        }
        total.gemm(1.0, &e.data, &e.data.transpose(), 1.0);
    }
    evoked /= n_targets as f64;
    let mut sig_s = &evoked * evoked.transpose() / samples as f64;
    let mut sig_n = total / (samples as f64 * train.len() as f64);
    if sig_s.iter().chain(sig_n.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite covariance".into()));
    }
    add_ridge(&mut sig_s);
    add_ridge(&mut sig_n);
    Ok((sig_s, sig_n))
}

/// Fits `n_filters` xDAWN filters, each scaled to unit norm in the total
/// covariance metric and signed so its largest-magnitude coefficient is positive.
pub fn fit_xdawn(train: &[&Epoch], n_filters: usize) -> Result<SpatialFilterBank> {
    let (sig_s, sig_n) = xdawn_covariances(train)?;
    let channels = sig_s.nrows();
    if n_filters == 0 || n_filters > channels {
        return Err(Error::Config(format!("n_filters must be in 1..={channels}, got {n_filters}")));
    }
    let eig = linalg::generalized_eigen(&sig_s, &sig_n)?;

    let mut weights = DMatrix::zeros(n_filters, channels);
    for f in 0..n_filters {
        let mut w = eig.vectors.column(f).into_owned();
        let pivot = w.iter().cloned().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
        if pivot < 0.0 {
            w.neg_mut();
        }
        weights.row_mut(f).copy_from(&w.transpose());
    }
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite spatial filter".into()));
    }
    Ok(SpatialFilterBank { weights, rayleigh_quotients: eig.values[..n_filters].to_vec() })
}

/// `values[f * samples + t] = sum_c weights[f][c] * data[c][t]`.
pub fn apply_filters(bank: &SpatialFilterBank, epoch: &Epoch) -> Result<FeatureVector> {
    if epoch.channels() != bank.channels() {
        return Err(Error::Dimension { expected: bank.channels(), found: epoch.channels() });
    }
    let projected = &bank.weights * &epoch.data;
    // nalgebra is column-major; transpose to read filter-major.
    Ok(FeatureVector(projected.transpose().as_slice().to_vec()))
}
