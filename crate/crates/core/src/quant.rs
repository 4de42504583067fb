//! Post-training quantization codecs and logical model-size accounting.
//!
//! All codecs are storage-only: inference always runs on the dequantized
//! float64 values. Rounding is half-away-from-zero ([`f64::round`]).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// `{-1, 1}`.
pub const CODEBOOK1_PM: [f64; 2] = [-1.0, 1.0];
/// `{0, 1}`.
pub const CODEBOOK1_01: [f64; 2] = [0.0, 1.0];
/// Two-bit levels, taken literally as printed (not +/-1/3).
pub const CODEBOOK2: [f64; 4] = [-1.0, -0.33, 0.33, 1.0];
/// Eight levels spaced 2/7 apart on `[-1, 1]`.
pub const CODEBOOK3: [f64; 8] = [-1.0, -5.0 / 7.0, -3.0 / 7.0, -1.0 / 7.0, 1.0 / 7.0, 3.0 / 7.0, 5.0 / 7.0, 1.0];

pub const HIST_BINS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuantScheme {
    Float64,
    SymMaxInt4,
    SymMaxInt8,
    AffineMinMaxInt4,
    AffineMinMaxInt8,
    Hist256,
    Codebook1Pm,
    Codebook1ZeroOne,
    Codebook2,
    Codebook3,
}

impl QuantScheme {
    pub const ALL: [QuantScheme; 10] = [
        QuantScheme::Float64,
        QuantScheme::SymMaxInt4,
        QuantScheme::SymMaxInt8,
        QuantScheme::AffineMinMaxInt4,
        QuantScheme::AffineMinMaxInt8,
        QuantScheme::Hist256,
        QuantScheme::Codebook1Pm,
        QuantScheme::Codebook1ZeroOne,
        QuantScheme::Codebook2,
        QuantScheme::Codebook3,
    ];

    /// Stable on-disk tag.
    pub fn tag(self) -> u8 {
        Self::ALL.iter().position(|&s| s == self).unwrap() as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            QuantScheme::Float64 => "float64",
            QuantScheme::SymMaxInt4 => "sym_max_int4",
            QuantScheme::SymMaxInt8 => "sym_max_int8",
            QuantScheme::AffineMinMaxInt4 => "affine_minmax_int4",
            QuantScheme::AffineMinMaxInt8 => "affine_minmax_int8",
            QuantScheme::Hist256 => "hist256",
            QuantScheme::Codebook1Pm => "codebook1_pm",
            QuantScheme::Codebook1ZeroOne => "codebook1_01",
            QuantScheme::Codebook2 => "codebook2",
            QuantScheme::Codebook3 => "codebook3",
        }
    }

    pub fn bits_per_weight(self) -> u32 {
        match self {
            QuantScheme::Float64 => 64,
            QuantScheme::SymMaxInt4 | QuantScheme::AffineMinMaxInt4 => 4,
            QuantScheme::SymMaxInt8 | QuantScheme::AffineMinMaxInt8 | QuantScheme::Hist256 => 8,
            QuantScheme::Codebook1Pm | QuantScheme::Codebook1ZeroOne => 1,
            QuantScheme::Codebook2 => 2,
            QuantScheme::Codebook3 => 3,
        }
    }

    /// Number of float64 normalization parameters stored with a tensor.
    pub fn norm_param_count(self) -> usize {
        match self {
            QuantScheme::SymMaxInt4 | QuantScheme::SymMaxInt8 => 1,
            QuantScheme::AffineMinMaxInt4 | QuantScheme::AffineMinMaxInt8 => 2,
            QuantScheme::Hist256 => HIST_BINS,
            _ => 0,
        }
    }

    /// Inclusive code range.
    pub fn code_range(self) -> (i32, i32) {
        match self {
            QuantScheme::Float64 => (0, 0),
            QuantScheme::SymMaxInt4 => (-7, 7),
            QuantScheme::SymMaxInt8 => (-127, 127),
            QuantScheme::AffineMinMaxInt4 => (-8, 7),
            QuantScheme::AffineMinMaxInt8 => (-128, 127),
            QuantScheme::Hist256 => (0, HIST_BINS as i32 - 1),
            s => (0, s.codebook().unwrap().len() as i32 - 1),
        }
    }

    pub fn codebook(self) -> Option<&'static [f64]> {
        match self {
            QuantScheme::Codebook1Pm => Some(&CODEBOOK1_PM),
            QuantScheme::Codebook1ZeroOne => Some(&CODEBOOK1_01),
            QuantScheme::Codebook2 => Some(&CODEBOOK2),
            QuantScheme::Codebook3 => Some(&CODEBOOK3),
            _ => None,
        }
    }

    /// Logical size of `count` elements, normalization parameters included.
    pub fn tensor_bits(self, count: u64) -> u64 {
        count * self.bits_per_weight() as u64 + self.norm_param_count() as u64 * 64
    }
}

impl fmt::Display for QuantScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuantScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|q| q.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown quantization scheme '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Raw(Vec<f64>),
    Codes(Vec<i32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    pub scheme: QuantScheme,
    pub rows: usize,
    pub cols: usize,
    pub norm_params: Vec<f64>,
    pub payload: Payload,
}

impl QuantizedTensor {
    pub fn float64(values: Vec<f64>) -> Self {
        Self { scheme: QuantScheme::Float64, rows: 1, cols: values.len(), norm_params: vec![], payload: Payload::Raw(values) }
    }

    /// Reshapes the logical dims; `rows * cols` must equal the element count.
    pub fn with_dims(mut self, rows: usize, cols: usize) -> Self {
        assert_eq!(rows * cols, self.len(), "dims must preserve element count");
        self.rows = rows;
        self.cols = cols;
        self
    }

    pub fn len(&self) -> usize {
        match &self.payload {
            Payload::Raw(v) => v.len(),
            Payload::Codes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn codes(&self) -> Option<&[i32]> {
        match &self.payload {
            Payload::Codes(c) => Some(c),
            Payload::Raw(_) => None,
        }
    }

    pub fn size_bits(&self) -> u64 {
        self.scheme.tensor_bits(self.len() as u64)
    }

    /// Structural validity: payload kind, code range, norm-parameter count.
    pub fn validate(&self) -> Result<()> {
        if self.rows * self.cols != self.len() {
            return Err(Error::Dimension { expected: self.rows * self.cols, found: self.len() });
        }
        if self.norm_params.len() != self.scheme.norm_param_count() || self.norm_params.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(0, format!("invalid normalization parameters for {}", self.scheme)));
        }
        match (&self.payload, self.scheme) {
            (Payload::Raw(_), QuantScheme::Float64) => Ok(()),
            (Payload::Codes(codes), s) if s != QuantScheme::Float64 => {
                let (lo, hi) = s.code_range();
                match codes.iter().position(|&c| c < lo || c > hi) {
                    Some(i) => Err(Error::format(0, format!("code {} at index {i} outside [{lo}, {hi}] for {s}", codes[i]))),
                    None => Ok(()),
                }
            }
            _ => Err(Error::format(0, format!("payload kind does not match scheme {}", self.scheme))),
        }
    }
}

fn check_finite(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Config("cannot quantize an empty tensor".into()));
    }
    if let Some(i) = weights.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite weight at index {i}")));
    }
    Ok(())
}

fn min_max(weights: &[f64]) -> (f64, f64) {
    weights.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(w), hi.max(w)))
}

fn codes_tensor(scheme: QuantScheme, norm_params: Vec<f64>, codes: Vec<i32>) -> QuantizedTensor {
    QuantizedTensor { scheme, rows: 1, cols: codes.len(), norm_params, payload: Payload::Codes(codes) }
}

/// Symmetric max-abs scaling onto `[-Q, Q]`, `Q = 2^(bits-1) - 1`.
pub fn quantize_sym_max(weights: &[f64], bits: u8) -> Result<QuantizedTensor> {
    let scheme = match bits {
        4 => QuantScheme::SymMaxInt4,
        8 => QuantScheme::SymMaxInt8,
        _ => return Err(Error::Config(format!("unsupported bit width {bits}"))),
    };
    check_finite(weights)?;
    let q = scheme.code_range().1 as f64;
    let mut s = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if s == 0.0 {
        s = 1.0;
    }
    let codes = weights.iter().map(|w| (w * q / s).round().clamp(-q, q) as i32).collect();
    Ok(codes_tensor(scheme, vec![s], codes))
}

/// Affine map of `[vmin, vmax]` onto the full signed range `[-2^(b-1), 2^(b-1) - 1]`.
pub fn quantize_affine_minmax(weights: &[f64], bits: u8) -> Result<QuantizedTensor> {
    let scheme = match bits {
        4 => QuantScheme::AffineMinMaxInt4,
        8 => QuantScheme::AffineMinMaxInt8,
        _ => return Err(Error::Config(format!("unsupported bit width {bits}"))),
    };
    check_finite(weights)?;
    let (qmin, qmax) = scheme.code_range();
    let (vmin, vmax) = min_max(weights);
    let span = (qmax - qmin) as f64;
    let codes = weights
        .iter()
        .map(|&w| {
            if vmax > vmin {
                let steps = ((w - vmin) * span / (vmax - vmin)).round().clamp(0.0, span);
                qmin + steps as i32
            } else {
                qmin
            }
        })
        .collect();
    Ok(codes_tensor(scheme, vec![vmin, vmax], codes))
}

/// 256 equal-width bins over the weight range; each bin reconstructs to the
/// mean of its members (empty bins to their center).
pub fn quantize_hist256(weights: &[f64]) -> Result<QuantizedTensor> {
    check_finite(weights)?;
    let (lo, hi) = min_max(weights);
    if hi == lo {
        return Ok(codes_tensor(QuantScheme::Hist256, vec![lo; HIST_BINS], vec![0; weights.len()]));
    }
    let bins = HIST_BINS as f64;
    let codes: Vec<i32> = weights
        .iter()
        .map(|&w| ((w - lo) * bins / (hi - lo)).floor().clamp(0.0, bins - 1.0) as i32)
        .collect();
    let mut sums = vec![0.0; HIST_BINS];
    let mut counts = vec![0usize; HIST_BINS];
    for (&c, &w) in codes.iter().zip(weights) {
        sums[c as usize] += w;
        counts[c as usize] += 1;
    }
    let width = (hi - lo) / bins;
    let table = (0..HIST_BINS)
        .map(|b| if counts[b] > 0 { sums[b] / counts[b] as f64 } else { lo + (b as f64 + 0.5) * width })
        .collect();
    Ok(codes_tensor(QuantScheme::Hist256, table, codes))
}

/// Nearest-level coding against a fixed codebook.
pub fn quantize_codebook(weights: &[f64], scheme: QuantScheme) -> Result<QuantizedTensor> {
    let levels = scheme
        .codebook()
        .ok_or_else(|| Error::Config(format!("{scheme} is not a codebook scheme")))?;
    check_finite(weights)?;
    let codes = weights
        .iter()
        .map(|&w| {
            (0..levels.len())
                .min_by(|&a, &b| (levels[a] - w).abs().total_cmp(&(levels[b] - w).abs()))
                .unwrap() as i32
        })
        .collect();
    Ok(codes_tensor(scheme, vec![], codes))
}

/// Dispatches to the codec for `scheme`.
pub fn quantize(weights: &[f64], scheme: QuantScheme) -> Result<QuantizedTensor> {
    match scheme {
        QuantScheme::Float64 => {
            check_finite(weights)?;
            Ok(QuantizedTensor::float64(weights.to_vec()))
        }
        QuantScheme::SymMaxInt4 => quantize_sym_max(weights, 4),
        QuantScheme::SymMaxInt8 => quantize_sym_max(weights, 8),
        QuantScheme::AffineMinMaxInt4 => quantize_affine_minmax(weights, 4),
        QuantScheme::AffineMinMaxInt8 => quantize_affine_minmax(weights, 8),
        QuantScheme::Hist256 => quantize_hist256(weights),
        s => quantize_codebook(weights, s),
    }
}

pub fn dequantize(t: &QuantizedTensor) -> Result<Vec<f64>> {
    t.validate()?;
    let codes = match &t.payload {
        Payload::Raw(v) => return Ok(v.clone()),
        Payload::Codes(c) => c,
    };
    let (qmin, qmax) = t.scheme.code_range();
    Ok(match t.scheme {
        QuantScheme::SymMaxInt4 | QuantScheme::SymMaxInt8 => {
            let s = t.norm_params[0];
            codes.iter().map(|&c| c as f64 * s / qmax as f64).collect()
        }
        QuantScheme::AffineMinMaxInt4 | QuantScheme::AffineMinMaxInt8 => {
            let (vmin, vmax) = (t.norm_params[0], t.norm_params[1]);
            if vmax > vmin {
                let span = (qmax - qmin) as f64;
                codes.iter().map(|&c| vmin + (c - qmin) as f64 * (vmax - vmin) / span).collect()
            } else {
                vec![vmin; codes.len()]
            }
        }
        QuantScheme::Hist256 => codes.iter().map(|&c| t.norm_params[c as usize]).collect(),
        s => {
            let levels = s.codebook().expect("codebook scheme");
            codes.iter().map(|&c| levels[c as usize]).collect()
        }
    })
}

/// Quantize then dequantize.
pub fn round_trip(weights: &[f64], scheme: QuantScheme) -> Result<Vec<f64>> {
    dequantize(&quantize(weights, scheme)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorRole {
    Filter,
    Classifier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorDescriptor {
    pub role: TensorRole,
    pub count: u64,
    pub scheme: QuantScheme,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SizeBreakdown {
    pub filter_bits: u64,
    pub classifier_bits: u64,
    pub total_bits: u64,
}

pub fn model_size_bits(descriptors: &[TensorDescriptor]) -> SizeBreakdown {
    let mut out = SizeBreakdown::default();
    for d in descriptors {
        let bits = d.scheme.tensor_bits(d.count);
        match d.role {
            TensorRole::Filter => out.filter_bits += bits,
            TensorRole::Classifier => out.classifier_bits += bits,
        }
    }
    out.total_bits = out.filter_bits + out.classifier_bits;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn codes(t: &QuantizedTensor) -> Vec<i32> {
        t.codes().unwrap().to_vec()
    }

    #[test]
    fn sym_examples() {
        let t = quantize_sym_max(&[0.0; 5], 8).unwrap();
        assert_eq!(codes(&t), vec![0; 5]);
        assert_eq!(t.norm_params, vec![1.0]);
        assert_eq!(dequantize(&t).unwrap(), vec![0.0; 5]);

        let t = quantize_sym_max(&[-1.0, 0.5], 4).unwrap();
        assert_eq!(codes(&t), vec![-7, 4]);
        let t = quantize_sym_max(&[-1.0, 0.5, 0.25], 8).unwrap();
        assert_eq!(codes(&t), vec![-127, 64, 32]);

        let full = codes_tensor(QuantScheme::SymMaxInt8, vec![2.0], vec![127]);
        assert_eq!(dequantize(&full).unwrap(), vec![2.0]);
    }

    #[test]
    fn affine_examples() {
        let t = quantize_affine_minmax(&[-0.3, 1.7], 4).unwrap();
        assert_eq!(codes(&t), vec![-8, 7]);

        let t = quantize_affine_minmax(&[0.37, 0.37, 0.37], 8).unwrap();
        assert_eq!(codes(&t), vec![-128; 3]);
        assert_eq!(dequantize(&t).unwrap(), vec![0.37; 3]);

        // (1 - 0) * 255 / 2 = 127.5 -> 128 -> code 0; 0 + 128 * 2 / 255.
        let t = quantize_affine_minmax(&[0.0, 1.0, 2.0], 8).unwrap();
        assert_eq!(codes(&t), vec![-128, 0, 127]);
        let back = dequantize(&t).unwrap();
        assert!((back[1] - 256.0 / 255.0).abs() < 1e-15);
        assert_eq!(back[0], 0.0);
        assert_eq!(back[2], 2.0);
    }

    #[test]
    fn hist_examples() {
        let w = [-1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let t = quantize_hist256(&w).unwrap();
        let mut occupied = codes(&t);
        occupied.sort();
        occupied.dedup();
        assert_eq!(occupied, vec![0, 255]);
        assert_eq!(t.norm_params[0], -1.0);
        assert_eq!(t.norm_params[255], 1.0);
        assert_eq!(dequantize(&t).unwrap(), w.to_vec());

        let t = quantize_hist256(&[4.2; 7]).unwrap();
        assert_eq!(dequantize(&t).unwrap(), vec![4.2; 7]);
        assert_eq!(t.norm_params.len(), 256);

        // Uniform grid against brute-force bin means.
        let w: Vec<f64> = (0..1024).map(|i| i as f64 / 1023.0).collect();
        let t = quantize_hist256(&w).unwrap();
        let back = dequantize(&t).unwrap();
        for (i, (&x, &y)) in w.iter().zip(&back).enumerate() {
            assert!((x - y).abs() <= 1.0 / 256.0);
            let b = ((x * 256.0).floor() as usize).min(255);
            let members: Vec<f64> = w.iter().copied().filter(|&v| ((v * 256.0).floor() as usize).min(255) == b).collect();
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            assert!((y - mean).abs() < 1e-12, "index {i}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(quantize_sym_max(&[1.0, f64::NAN], 8), Err(Error::Numeric(_))));
        assert!(matches!(quantize_affine_minmax(&[f64::INFINITY], 4), Err(Error::Numeric(_))));
        assert!(matches!(quantize_hist256(&[1.0, f64::NEG_INFINITY]), Err(Error::Numeric(_))));
        assert!(quantize_sym_max(&[1.0], 5).is_err());
        let bad = codes_tensor(QuantScheme::SymMaxInt4, vec![1.0], vec![8]);
        assert!(matches!(dequantize(&bad), Err(Error::Format { .. })));
        let bad = codes_tensor(QuantScheme::Hist256, vec![0.0; 256], vec![256]);
        assert!(dequantize(&bad).is_err());
    }

    #[test]
    fn codebook_membership_round_trip() {
        for scheme in [QuantScheme::Codebook1Pm, QuantScheme::Codebook1ZeroOne, QuantScheme::Codebook2, QuantScheme::Codebook3] {
            let levels = scheme.codebook().unwrap();
            let w: Vec<f64> = (0..50).map(|i| levels[(i * 7) % levels.len()]).collect();
            let back = round_trip(&w, scheme).unwrap();
            assert!(w.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn table_one_sizes() {
        let f = |s: QuantScheme| s.tensor_bits(256);
        assert_eq!(f(QuantScheme::Float64), 16384);
        assert_eq!(f(QuantScheme::SymMaxInt4), 1088);
        assert_eq!(f(QuantScheme::SymMaxInt8), 2112);
        assert_eq!(f(QuantScheme::AffineMinMaxInt4), 1152);
        assert_eq!(f(QuantScheme::AffineMinMaxInt8), 2176);
        let both = model_size_bits(&[
            TensorDescriptor { role: TensorRole::Filter, count: 256, scheme: QuantScheme::SymMaxInt4 },
            TensorDescriptor { role: TensorRole::Classifier, count: 1025, scheme: QuantScheme::SymMaxInt4 },
        ]);
        assert_eq!(both, SizeBreakdown { filter_bits: 1088, classifier_bits: 4164, total_bits: 5252 });
        let base = model_size_bits(&[
            TensorDescriptor { role: TensorRole::Filter, count: 256, scheme: QuantScheme::Float64 },
            TensorDescriptor { role: TensorRole::Classifier, count: 1025, scheme: QuantScheme::Float64 },
        ]);
        assert_eq!((base.filter_bits, base.classifier_bits, base.total_bits), (16384, 65600, 81984));
    }

    #[test]
    fn tags_round_trip() {
        for s in QuantScheme::ALL {
            assert_eq!(QuantScheme::from_tag(s.tag()), Some(s));
            assert_eq!(s.name().parse::<QuantScheme>().unwrap(), s);
        }
        assert_eq!(QuantScheme::from_tag(10), None);
    }

    fn weights() -> impl Strategy<Value = Vec<f64>> {
        (1usize..300, -6i32..6).prop_flat_map(|(n, e)| {
            let scale = 10f64.powi(e);
            prop::collection::vec(-1.0f64..1.0, n).prop_map(move |v| v.into_iter().map(|x| x * scale).collect())
        })
    }

    proptest! {
        #[test]
        fn requantization_is_idempotent(w in weights(), scheme in prop::sample::select(vec![
            QuantScheme::SymMaxInt4, QuantScheme::SymMaxInt8, QuantScheme::AffineMinMaxInt4, QuantScheme::AffineMinMaxInt8,
        ])) {
            let t = quantize(&w, scheme).unwrap();
            let again = quantize(&dequantize(&t).unwrap(), scheme).unwrap();
            prop_assert_eq!(t.codes(), again.codes());
        }

        #[test]
        fn affine_codes_are_monotone(mut w in weights(), bits in prop::sample::select(vec![4u8, 8])) {
            w.sort_by(f64::total_cmp);
            let t = quantize_affine_minmax(&w, bits).unwrap();
            prop_assert!(t.codes().unwrap().windows(2).all(|p| p[0] <= p[1]));
        }

        #[test]
        fn sizes_are_additive(counts in prop::collection::vec((1u64..5000, 0usize..10), 1..8)) {
            let descs: Vec<TensorDescriptor> = counts
                .iter()
                .map(|&(c, s)| TensorDescriptor { role: TensorRole::Classifier, count: c, scheme: QuantScheme::ALL[s] })
                .collect();
            let total = model_size_bits(&descs).total_bits;
            let parts: u64 = descs.iter().map(|d| model_size_bits(std::slice::from_ref(d)).total_bits).sum();
            prop_assert_eq!(total, parts);
        }
    }
}
