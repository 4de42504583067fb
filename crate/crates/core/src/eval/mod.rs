//! Cross-validated evaluation of quantized pipelines.

mod auc;
pub mod report;
mod stats;

pub use auc::{average_ranks, compute_auc};
pub use report::{build_report, EvalReport};
pub use stats::{pairwise_significance, wilcoxon_signed_rank, Significance, EXACT_MAX_N};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::classify::{self, ElmInit, ElmModel, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::modelfmt::{Section, SectionKind};
use crate::quant::{self, QuantScheme, QuantizedTensor, SizeBreakdown, TensorDescriptor, TensorRole};
use crate::rng;
use crate::spatial::{self, FeatureVector, SpatialFilterBank, DEFAULT_FILTERS};
use crate::synthdata::{Epoch, EpochSet, Label};

pub const DEFAULT_FOLDS: usize = 5;

const FOLD_STREAM: u64 = 0xF01D;
const ELM_STREAM: u64 = 0xE1E1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClassifierKind {
    Blda,
    Elm,
}

impl ClassifierKind {
    /// Condition labels in table column order.
    pub fn table_conditions(self) -> &'static [&'static str] {
        match self {
            ClassifierKind::Blda => &["0/0", "1/0", "2/0", "3/0", "4/0", "0/1", "0/2", "0/3", "0/4", "1/1"],
            ClassifierKind::Elm => &["1", "2", "3", "4", "5", "11", "12", "13", "14", "15"],
        }
    }

    /// Every label accepted for this classifier.
    pub fn valid_labels(self) -> Vec<String> {
        match self {
            ClassifierKind::Blda => (0..5).flat_map(|f| (0..5).map(move |c| format!("{f}/{c}"))).collect(),
            ClassifierKind::Elm => (1..=5).chain(11..=15).map(|c| c.to_string()).collect(),
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierKind::Blda => "blda",
            ClassifierKind::Elm => "elm",
        })
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "blda" => Ok(ClassifierKind::Blda),
            "elm" => Ok(ClassifierKind::Elm),
            _ => Err(Error::Config(format!("unknown classifier '{s}'; expected blda or elm"))),
        }
    }
}

/// Integer schemes numbered 1 to 4: max+int4, max+int8, min-max+int4, min-max+int8.
pub const NUMBERED_SCHEMES: [QuantScheme; 4] = [
    QuantScheme::SymMaxInt4,
    QuantScheme::SymMaxInt8,
    QuantScheme::AffineMinMaxInt4,
    QuantScheme::AffineMinMaxInt8,
];

fn numbered_scheme(n: u8) -> Option<Option<QuantScheme>> {
    match n {
        0 => Some(None),
        1..=4 => Some(Some(NUMBERED_SCHEMES[n as usize - 1])),
        _ => None,
    }
}

fn scheme_number(s: Option<QuantScheme>) -> u8 {
    s.and_then(|s| NUMBERED_SCHEMES.iter().position(|&q| q == s)).map_or(0, |i| i as u8 + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Condition {
    /// Filter / classifier quantization, `None` for float64.
    Blda { filter: Option<QuantScheme>, classifier: Option<QuantScheme> },
    /// ELM input initialization, optionally with histogram-quantized output weights.
    Elm { init: ElmInit, hist: bool },
}

impl Condition {
    pub fn parse(kind: ClassifierKind, label: &str) -> Result<Self> {
        let invalid = || {
            Error::Config(format!(
                "invalid {kind} condition '{label}'; valid labels: {}",
                kind.valid_labels().join(", ")
            ))
        };
        match kind {
            ClassifierKind::Blda => {
                let (f, c) = label.split_once('/').ok_or_else(invalid)?;
                let f = f.parse::<u8>().ok().and_then(numbered_scheme).ok_or_else(invalid)?;
                let c = c.parse::<u8>().ok().and_then(numbered_scheme).ok_or_else(invalid)?;
                Ok(Condition::Blda { filter: f, classifier: c })
            }
            ClassifierKind::Elm => {
                let n = label.parse::<u8>().map_err(|_| invalid())?;
                match n {
                    1..=5 => Ok(Condition::Elm { init: ElmInit::from_index(n)?, hist: false }),
                    11..=15 => Ok(Condition::Elm { init: ElmInit::from_index(n - 10)?, hist: true }),
                    _ => Err(invalid()),
                }
            }
        }
    }

    pub fn parse_list(kind: ClassifierKind, labels: &str) -> Result<Vec<Self>> {
        labels.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|l| Self::parse(kind, l)).collect()
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            Condition::Blda { .. } => ClassifierKind::Blda,
            Condition::Elm { .. } => ClassifierKind::Elm,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Condition::Blda { filter, classifier } => format!("{}/{}", scheme_number(filter), scheme_number(classifier)),
            Condition::Elm { init, hist } => (init.index() + if hist { 10 } else { 0 }).to_string(),
        }
    }

    /// Storage scheme of each model tensor under this condition.
    pub fn filter_scheme(&self) -> QuantScheme {
        match *self {
            Condition::Blda { filter, .. } => filter.unwrap_or(QuantScheme::Float64),
            Condition::Elm { .. } => QuantScheme::Float64,
        }
    }

    pub fn sizes(&self, dims: &ModelDims) -> SizeBreakdown {
        let filter = TensorDescriptor {
            role: TensorRole::Filter,
            count: (dims.n_filters * dims.channels) as u64,
            scheme: self.filter_scheme(),
        };
        let classifier = |count: usize, scheme| TensorDescriptor { role: TensorRole::Classifier, count: count as u64, scheme };
        let descs = match *self {
            Condition::Blda { classifier: c, .. } => {
                vec![filter, classifier(dims.n_features() + 1, c.unwrap_or(QuantScheme::Float64))]
            }
            Condition::Elm { init, hist } => {
                let input_scheme = elm_input_scheme(init);
                vec![
                    filter,
                    classifier(dims.n_hidden * dims.n_features(), input_scheme),
                    classifier(dims.n_hidden, input_scheme),
                    classifier(dims.n_hidden, if hist { QuantScheme::Hist256 } else { QuantScheme::Float64 }),
                    classifier(2 * dims.n_features(), QuantScheme::Float64),
                ]
            }
        };
        quant::model_size_bits(&descs)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Storage scheme of ELM input weights and biases.
pub fn elm_input_scheme(init: ElmInit) -> QuantScheme {
    match init {
        ElmInit::Uniform => QuantScheme::Float64,
        ElmInit::BinaryPlusMinus => QuantScheme::Codebook1Pm,
        ElmInit::BinaryZeroOne => QuantScheme::Codebook1ZeroOne,
        ElmInit::TwoBit => QuantScheme::Codebook2,
        ElmInit::ThreeBit => QuantScheme::Codebook3,
    }
}

/// Tensor geometry of a trained pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub n_filters: usize,
    pub channels: usize,
    pub samples: usize,
    pub n_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { n_filters: DEFAULT_FILTERS, channels: 32, samples: 128, n_hidden: DEFAULT_HIDDEN }
    }
}

impl ModelDims {
    pub fn n_features(&self) -> usize {
        self.n_filters * self.samples
    }
}

/// Stratified fold assignment: returns the test indices of each fold.
///
/// Each class is shuffled with a stream derived from `(seed, dataset_seed)`
/// and dealt round-robin, so fold class counts differ by at most one.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64, dataset_seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Evaluation(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = rng::stream(seed, &[dataset_seed, FOLD_STREAM]);
    let mut folds = vec![Vec::new(); k];
    for class in [Label::Target, Label::NonTarget] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::Evaluation(format!("{} {class:?} epochs cannot fill {k} folds", idx.len())));
        }
        idx.shuffle(&mut rng);
        for (i, e) in idx.into_iter().enumerate() {
            folds[i % k].push(e);
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// Cross-validation outcome for one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub conditions: Vec<Condition>,
    /// `fold_aucs[condition][fold]`.
    pub fold_aucs: Vec<Vec<f64>>,
    /// Models trained on the first fold's training split, one per condition.
    pub first_fold_models: Vec<Vec<Section>>,
}

impl CvResult {
    pub fn mean_auc(&self, condition: usize) -> f64 {
        let f = &self.fold_aucs[condition];
        f.iter().sum::<f64>() / f.len() as f64
    }
}

fn bank_section(bank: &SpatialFilterBank, scheme: QuantScheme) -> Result<(SpatialFilterBank, Section)> {
    let (rows, cols) = bank.weights.shape();
    let flat: Vec<f64> = bank.weights.transpose().as_slice().to_vec();
    let t = quant::quantize(&flat, scheme)?.with_dims(rows, cols);
    let restored = DMatrix::from_row_slice(rows, cols, &quant::dequantize(&t)?);
    Ok((bank.with_weights(restored), Section::new(SectionKind::XdawnFilters, t)))
}

fn quantized(values: &[f64], scheme: QuantScheme, rows: usize, cols: usize) -> Result<(Vec<f64>, QuantizedTensor)> {
    let t = quant::quantize(values, scheme)?.with_dims(rows, cols);
    Ok((quant::dequantize(&t)?, t))
}

fn features(bank: &SpatialFilterBank, epochs: &[&Epoch]) -> Result<Vec<FeatureVector>> {
    epochs.iter().map(|e| spatial::apply_filters(bank, e)).collect()
}

struct FoldOutput {
    aucs: Vec<f64>,
    models: Vec<Vec<Section>>,
}

fn blda_fold(train: &[&Epoch], test: &[&Epoch], conditions: &[Condition], keep_models: bool) -> Result<FoldOutput> {
    let train_labels: Vec<Label> = train.iter().map(|e| e.label).collect();
    let test_labels: Vec<Label> = test.iter().map(|e| e.label).collect();
    let bank = spatial::fit_xdawn(train, DEFAULT_FILTERS)?;

    let mut aucs = vec![f64::NAN; conditions.len()];
    let mut models = vec![Vec::new(); conditions.len()];
    let mut filter_schemes: Vec<QuantScheme> = conditions.iter().map(|c| c.filter_scheme()).collect();
    filter_schemes.dedup();
    filter_schemes.sort_by_key(|s| s.tag());
    filter_schemes.dedup();

    for fs in filter_schemes {
        let (qbank, filter_section) = bank_section(&bank, fs)?;
        let train_x = features(&qbank, train)?;
        let test_x = features(&qbank, test)?;
        let model = classify::train_blda(&train_x, &train_labels)?;
        for (ci, cond) in conditions.iter().enumerate() {
            let Condition::Blda { classifier, .. } = *cond else {
                return Err(Error::Config("mixed classifier conditions".into()));
            };
            if cond.filter_scheme() != fs {
                continue;
            }
            let scheme = classifier.unwrap_or(QuantScheme::Float64);
            let (w, tensor) = quantized(&model.weights, scheme, 1, model.weights.len())?;
            let qmodel = model.with_weights(w);
            let scores = test_x.iter().map(|x| classify::predict_linear(&qmodel, x)).collect::<Result<Vec<_>>>()?;
            aucs[ci] = compute_auc(&scores, &test_labels)?;
            if keep_models {
                models[ci] = vec![filter_section.clone(), Section::new(SectionKind::Blda, tensor)];
            }
        }
    }
    Ok(FoldOutput { aucs, models })
}

fn elm_sections(model: &ElmModel, bank: &SpatialFilterBank, output: QuantizedTensor) -> Result<Vec<Section>> {
    let (filters, _) = (bank_section(bank, QuantScheme::Float64)?.1, ());
    let scheme = elm_input_scheme(model.input.init);
    let (h, d) = model.input.weights.shape();
    let input = quant::quantize(model.input.weights.transpose().as_slice(), scheme)?.with_dims(h, d);
    let bias = quant::quantize(&model.input.biases, scheme)?;
    let mut std = model.standardizer.mean.clone();
    std.extend_from_slice(&model.standardizer.std);
    let std = QuantizedTensor::float64(std).with_dims(2, model.standardizer.dim());
    Ok(vec![
        filters,
        Section::new(SectionKind::ElmInput, input),
        Section::new(SectionKind::ElmBias, bias),
        Section::new(SectionKind::ElmOutput, output),
        Section::new(SectionKind::Standardizer, std),
    ])
}

/// Seed of the ELM input layer for one (subject, fold); shared by the
/// plain and histogram variant of each init condition.
pub fn elm_seed(cv_seed: u64, dataset_seed: u64, fold: usize) -> u64 {
    rng::derive_seed(cv_seed, &[dataset_seed, fold as u64, ELM_STREAM])
}

fn elm_fold(
    train: &[&Epoch],
    test: &[&Epoch],
    conditions: &[Condition],
    seed: u64,
    keep_models: bool,
) -> Result<FoldOutput> {
    let train_labels: Vec<Label> = train.iter().map(|e| e.label).collect();
    let test_labels: Vec<Label> = test.iter().map(|e| e.label).collect();
    let bank = spatial::fit_xdawn(train, DEFAULT_FILTERS)?;
    let train_x = features(&bank, train)?;
    let test_x = features(&bank, test)?;
    let n_features = train_x[0].len();

    let mut aucs = vec![f64::NAN; conditions.len()];
    let mut models = vec![Vec::new(); conditions.len()];
    for init in ElmInit::ALL {
        let wanted: Vec<(usize, bool)> = conditions
            .iter()
            .enumerate()
            .filter_map(|(i, c)| match *c {
                Condition::Elm { init: ci, hist } if ci == init => Some((i, hist)),
                _ => None,
            })
            .collect();
        if wanted.is_empty() {
            continue;
        }
        let input = classify::init_elm_weights(init, seed, DEFAULT_HIDDEN, n_features);
        let model = classify::train_elm(&input, &train_x, &train_labels)?;
        for (ci, hist) in wanted {
            let scheme = if hist { QuantScheme::Hist256 } else { QuantScheme::Float64 };
            let (beta, tensor) = quantized(&model.output_weights, scheme, 1, model.output_weights.len())?;
            let qmodel = model.with_output_weights(beta);
            aucs[ci] = compute_auc(&qmodel.scores(&test_x)?, &test_labels)?;
            if keep_models {
                models[ci] = elm_sections(&qmodel, &bank, tensor)?;
            }
        }
    }
    Ok(FoldOutput { aucs, models })
}

/// Stratified k-fold evaluation of several conditions of one classifier on a
/// dataset. xDAWN is refit on every training split; filter and classifier
/// quantization happen after fitting and are dequantized before scoring.
pub fn cross_validate(dataset: &EpochSet, conditions: &[Condition], k: usize, seed: u64) -> Result<CvResult> {
    let kind = conditions
        .first()
        .map(|c| c.kind())
        .ok_or_else(|| Error::Config("no conditions requested".into()))?;
    if conditions.iter().any(|c| c.kind() != kind) {
        return Err(Error::Config("all conditions must target the same classifier".into()));
    }
    let labels = dataset.labels();
    let folds = stratified_folds(&labels, k, seed, dataset.seed)?;

    let mut fold_aucs = vec![Vec::with_capacity(k); conditions.len()];
    let mut first_fold_models = Vec::new();
    for (fi, test_idx) in folds.iter().enumerate() {
        let mut in_test = vec![false; labels.len()];
        test_idx.iter().for_each(|&i| in_test[i] = true);
        let train: Vec<&Epoch> = dataset.epochs.iter().zip(&in_test).filter(|(_, t)| !**t).map(|(e, _)| e).collect();
        let test: Vec<&Epoch> = test_idx.iter().map(|&i| &dataset.epochs[i]).collect();
        let out = match kind {
            ClassifierKind::Blda => blda_fold(&train, &test, conditions, fi == 0)?,
            ClassifierKind::Elm => elm_fold(&train, &test, conditions, elm_seed(seed, dataset.seed, fi), fi == 0)?,
        };
        for (acc, auc) in fold_aucs.iter_mut().zip(out.aucs) {
            acc.push(auc);
        }
        if fi == 0 {
            first_fold_models = out.models;
        }
    }
    Ok(CvResult { conditions: conditions.to_vec(), fold_aucs, first_fold_models })
}
