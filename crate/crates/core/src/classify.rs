//! Bayesian linear discriminant analysis and extreme learning machine classifiers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::quant::{CODEBOOK1_01, CODEBOOK1_PM, CODEBOOK2, CODEBOOK3};
use crate::rng;
use crate::spatial::FeatureVector;
use crate::synthdata::Label;

pub const DEFAULT_HIDDEN: usize = 200;

const BLDA_MAX_ITERS: usize = 100;
const BLDA_TOL: f64 = 1e-6;
const BLDA_INITIAL_ALPHA: f64 = 25.0;
const STD_FLOOR: f64 = 1e-12;
const PINV_REL_TOL: f64 = 1e-10;

fn class_counts(labels: &[Label]) -> (usize, usize) {
    let pos = labels.iter().filter(|l| l.is_target()).count();
    (pos, labels.len() - pos)
}

fn check_features(features: &[FeatureVector], labels: &[Label]) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(Error::Dimension { expected: features.len(), found: labels.len() });
    }
    let dim = features.first().map(|f| f.len()).ok_or_else(|| Error::Training("empty training set".into()))?;
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::Dimension { expected: dim, found: f.len() });
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::Training("training set contains a single class".into()));
    }
    Ok(dim)
}

/// Linear classifier whose last weight is the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct BldaModel {
    pub weights: Vec<f64>,
    /// Prior precision.
    pub alpha: f64,
    /// Noise precision.
    pub beta: f64,
    pub n_iters: usize,
    /// False when the evidence iterations hit the iteration cap.
    pub converged: bool,
}

impl BldaModel {
    pub fn n_features(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), self.weights.len());
        Self { weights, ..self.clone() }
    }
}

/// Augmented design matrix (features + constant row), `(d + 1) x n`.
fn augmented(features: &[FeatureVector], dim: usize) -> DMatrix<f64> {
    let mut x = DMatrix::from_element(dim + 1, features.len(), 1.0);
    for (j, f) in features.iter().enumerate() {
        x.view_mut((0, j), (dim, 1)).copy_from_slice(f.as_slice());
    }
    x
}

/// Class-balanced regression targets: `N/N+` for targets, `-N/N-` otherwise.
pub fn blda_targets(labels: &[Label]) -> DVector<f64> {
    let (pos, neg) = class_counts(labels);
    let n = labels.len() as f64;
    DVector::from_iterator(
        labels.len(),
        labels.iter().map(|l| if l.is_target() { n / pos as f64 } else { -n / neg as f64 }),
    )
}

/// Trains BLDA by evidence maximization over `(alpha, beta)`.
pub fn train_blda(features: &[FeatureVector], labels: &[Label]) -> Result<BldaModel> {
    let dim = check_features(features, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos < 2 || neg < 2 {
        return Err(Error::Training("BLDA needs at least two samples per class".into()));
    }
    let x = augmented(features, dim);
    let y = blda_targets(labels);
    let n = labels.len() as f64;

    let gram = &x * x.transpose();
    let eig = linalg::symmetric_eigen_large(&gram)?;
    let lambda: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
    let xy = &x * &y;
    let vxy = eig.vectors.transpose() * &xy;

    let weights_for = |alpha: f64, beta: f64| -> DVector<f64> {
        let scaled = DVector::from_iterator(
            lambda.len(),
            lambda.iter().zip(vxy.iter()).map(|(&l, &v)| beta * v / (beta * l + alpha)),
        );
        &eig.vectors * scaled
    };

    let mean_y = y.mean();
    let var_y = y.iter().map(|v| (v - mean_y).powi(2)).sum::<f64>() / (n - 1.0);
    let mut alpha = BLDA_INITIAL_ALPHA;
    let mut beta = 1.0 / var_y;
    let mut n_iters = 0;
    let mut converged = false;

    while n_iters < BLDA_MAX_ITERS {
        n_iters += 1;
        let w = weights_for(alpha, beta);
        let residual = &y - x.tr_mul(&w);
        let err = residual.norm_squared();
        let gamma: f64 = lambda.iter().map(|&l| beta * l / (beta * l + alpha)).sum();
        let new_alpha = gamma / w.norm_squared();
        let new_beta = (n - gamma) / err;
        if !(new_alpha.is_finite() && new_beta.is_finite() && new_alpha > 0.0 && new_beta > 0.0) {
            return Err(Error::Numeric(format!(
                "BLDA hyperparameters diverged (alpha={new_alpha}, beta={new_beta})"
            )));
        }
        let d_alpha = ((new_alpha - alpha) / alpha).abs();
        let d_beta = ((new_beta - beta) / beta).abs();
        alpha = new_alpha;
        beta = new_beta;
        if d_alpha < BLDA_TOL && d_beta < BLDA_TOL {
            converged = true;
            break;
        }
    }

    let w = weights_for(alpha, beta);
    Ok(BldaModel { weights: w.iter().copied().collect(), alpha, beta, n_iters, converged })
}

/// `sum_i w_i x_i + bias`.
pub fn predict_linear(model: &BldaModel, features: &FeatureVector) -> Result<f64> {
    if features.len() != model.n_features() {
        return Err(Error::Dimension { expected: model.n_features(), found: features.len() });
    }
    let (w, bias) = model.weights.split_at(model.n_features());
    Ok(w.iter().zip(features.as_slice()).map(|(a, b)| a * b).sum::<f64>() + bias[0])
}

/// Input-layer initialization schemes for the ELM, numbered 1 to 5.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ElmInit {
    /// Uniform on `[-1, 1]`.
    Uniform,
    /// `{-1, 1}`.
    BinaryPlusMinus,
    /// `{0, 1}`.
    BinaryZeroOne,
    /// `{-1, -0.33, 0.33, 1}`.
    TwoBit,
    /// Eight levels with a 2/7 gap.
    ThreeBit,
}

impl ElmInit {
    pub const ALL: [ElmInit; 5] =
        [ElmInit::Uniform, ElmInit::BinaryPlusMinus, ElmInit::BinaryZeroOne, ElmInit::TwoBit, ElmInit::ThreeBit];

    pub fn from_index(index: u8) -> Result<Self> {
        match index {
            1..=5 => Ok(Self::ALL[index as usize - 1]),
            _ => Err(Error::Config(format!("unknown ELM init condition {index}; expected 1..5"))),
        }
    }

    pub fn index(self) -> u8 {
        Self::ALL.iter().position(|&c| c == self).unwrap() as u8 + 1
    }

    /// Allowed values; `None` for the continuous uniform condition.
    pub fn codebook(self) -> Option<&'static [f64]> {
        match self {
            ElmInit::Uniform => None,
            ElmInit::BinaryPlusMinus => Some(&CODEBOOK1_PM),
            ElmInit::BinaryZeroOne => Some(&CODEBOOK1_01),
            ElmInit::TwoBit => Some(&CODEBOOK2),
            ElmInit::ThreeBit => Some(&CODEBOOK3),
        }
    }
}

/// Frozen random input layer: `weights` is `n_hidden x n_features`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElmInputLayer {
    pub init: ElmInit,
    pub weights: DMatrix<f64>,
    pub biases: Vec<f64>,
}

pub fn init_elm_weights(init: ElmInit, seed: u64, n_hidden: usize, n_features: usize) -> ElmInputLayer {
    let mut rng = rng::stream(seed, &[init.index() as u64]);
    let mut draw = || match init.codebook() {
        None => rng.random_range(-1.0..=1.0),
        Some(levels) => levels[rng.random_range(0..levels.len())],
    };
    let weights = DMatrix::from_fn(n_hidden, n_features, |_, _| draw());
    let biases = (0..n_hidden).map(|_| draw()).collect();
    ElmInputLayer { init, weights, biases }
}

/// Per-feature z-scoring fit on a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &[FeatureVector]) -> Result<Self> {
        let dim = features.first().map(|f| f.len()).ok_or_else(|| Error::Training("empty training set".into()))?;
        let n = features.len() as f64;
        let mut mean = vec![0.0; dim];
        for f in features {
            if f.len() != dim {
                return Err(Error::Dimension { expected: dim, found: f.len() });
            }
            mean.iter_mut().zip(f.as_slice()).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for f in features {
            var.iter_mut().zip(f.as_slice()).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m));
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Standardized rows, `n x d`.
    pub fn transform(&self, features: &[FeatureVector]) -> Result<DMatrix<f64>> {
        let d = self.dim();
        if let Some(f) = features.iter().find(|f| f.len() != d) {
            return Err(Error::Dimension { expected: d, found: f.len() });
        }
        Ok(DMatrix::from_fn(features.len(), d, |j, k| (features[j].0[k] - self.mean[k]) / self.std[k]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Logistic,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Logistic => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElmModel {
    pub input: ElmInputLayer,
    pub output_weights: Vec<f64>,
    pub activation: Activation,
    pub standardizer: Standardizer,
}

/// Hidden-layer outputs `H[j][i] = f(x_j . w_i + b_i)`, `n x n_hidden`.
pub fn hidden_outputs(input: &ElmInputLayer, activation: Activation, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.ncols() != input.weights.ncols() {
        return Err(Error::Dimension { expected: input.weights.ncols(), found: z.ncols() });
    }
    let mut h = z * input.weights.transpose();
    for (i, b) in input.biases.iter().enumerate() {
        h.column_mut(i).apply(|v| *v = activation.apply(*v + b));
    }
    Ok(h)
}

/// Least-squares output weights through the SVD pseudoinverse.
pub fn solve_output_weights(h: &DMatrix<f64>, targets: &DVector<f64>) -> Result<DVector<f64>> {
    linalg::pinv_solve(h, targets, PINV_REL_TOL)
}

/// Trains ELM output weights for a frozen input layer; targets are +/-1.
pub fn train_elm(input: &ElmInputLayer, features: &[FeatureVector], labels: &[Label]) -> Result<ElmModel> {
    check_features(features, labels)?;
    if input.weights.nrows() != input.biases.len() {
        return Err(Error::Dimension { expected: input.weights.nrows(), found: input.biases.len() });
    }
    let standardizer = Standardizer::fit(features)?;
    let z = standardizer.transform(features)?;
    let h = hidden_outputs(input, Activation::Logistic, &z)?;
    let t = DVector::from_iterator(labels.len(), labels.iter().map(|l| l.sign()));
    let beta = solve_output_weights(&h, &t)?;
    Ok(ElmModel {
        input: input.clone(),
        output_weights: beta.iter().copied().collect(),
        activation: Activation::Logistic,
        standardizer,
    })
}

impl ElmModel {
    pub fn with_output_weights(&self, output_weights: Vec<f64>) -> Self {
        assert_eq!(output_weights.len(), self.output_weights.len());
        Self { output_weights, ..self.clone() }
    }

    /// Batch scores, identical to calling [`predict_elm`] per vector.
    pub fn scores(&self, features: &[FeatureVector]) -> Result<Vec<f64>> {
        let z = self.standardizer.transform(features)?;
        let h = hidden_outputs(&self.input, self.activation, &z)?;
        Ok((h * DVector::from_column_slice(&self.output_weights)).iter().copied().collect())
    }
}

/// `sum_i beta_i f(standardize(x) . w_i + b_i)`.
pub fn predict_elm(model: &ElmModel, features: &FeatureVector) -> Result<f64> {
    Ok(model.scores(std::slice::from_ref(features))?[0])
}
