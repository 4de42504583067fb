//! Synthetic RSVP/ERP epochs and the epoch file format.
//!
//! Each synthetic subject has 32 latent noise sources, each an AR(1) process
//! with its own gain, mixed onto the 32 sensors by a subject-specific random
//! orthogonal matrix. Target trials add a Gaussian-shaped evoked response
//! projected through a fixed spatial profile.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bytes::Reader;
use crate::error::{Error, Result};
use crate::rng::{self, SUBJECT_STREAM};

pub const CHANNELS: usize = 32;
pub const SAMPLES_PER_EPOCH: usize = 128;
pub const SAMPLE_RATE_HZ: f64 = 128.0;
pub const N_TARGETS: usize = 160;
pub const N_NONTARGETS: usize = 1440;

/// AR(1) coefficient of the latent noise sources at 128 Hz.
pub const AR_COEFFICIENT: f64 = 0.9;

/// Evoked amplitude relative to `noise_std`. Calibrated so that the
/// unquantized xDAWN+BLDA pipeline reaches a cross-validated AUC near 0.86
/// on default subjects.
pub const DEFAULT_ERP_AMPLITUDE: f64 = 1.1;

/// Latent source gains span `[1/SOURCE_GAIN_SPREAD, SOURCE_GAIN_SPREAD]`
/// geometrically before being normalized to unit mean power.
const SOURCE_GAIN_SPREAD: f64 = 2.0;

/// Seconds between stimulus onsets in synthesized continuous recordings (2 Hz RSVP).
pub const STIMULUS_INTERVAL_S: f64 = 0.5;

const EPOCH_MAGIC: &[u8; 4] = b"ERPQ";
const EPOCH_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Target,
    NonTarget,
}

impl Label {
    /// +1 for targets, -1 for non-targets.
    pub fn sign(self) -> f64 {
        match self {
            Label::Target => 1.0,
            Label::NonTarget => -1.0,
        }
    }

    pub fn is_target(self) -> bool {
        self == Label::Target
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Target => Label::NonTarget,
            Label::NonTarget => Label::Target,
        }
    }
}

/// One trial: channels x samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Epoch {
    pub data: DMatrix<f64>,
    pub label: Label,
}

impl Epoch {
    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn samples(&self) -> usize {
        self.data.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSet {
    pub subject_id: String,
    /// Seed the set was generated from (subject-specific for synthetic data).
    pub seed: u64,
    pub epochs: Vec<Epoch>,
}

impl EpochSet {
    pub fn labels(&self) -> Vec<Label> {
        self.epochs.iter().map(|e| e.label).collect()
    }

    pub fn n_targets(&self) -> usize {
        self.epochs.iter().filter(|e| e.label.is_target()).count()
    }

    pub fn n_nontargets(&self) -> usize {
        self.epochs.len() - self.n_targets()
    }

    /// `(channels, samples)` of the first epoch, `None` when empty.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.epochs.first().map(|e| (e.channels(), e.samples()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_subjects: usize,
    pub channels: usize,
    pub samples_per_epoch: usize,
    pub sample_rate_hz: f64,
    pub n_targets: usize,
    pub n_nontargets: usize,
    pub erp_amplitude: f64,
    pub noise_std: f64,
    pub erp_latency_s: f64,
    pub erp_width_s: f64,
    pub spatial_profile: Vec<f64>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_subjects: 19,
            channels: CHANNELS,
            samples_per_epoch: SAMPLES_PER_EPOCH,
            sample_rate_hz: SAMPLE_RATE_HZ,
            n_targets: N_TARGETS,
            n_nontargets: N_NONTARGETS,
            erp_amplitude: DEFAULT_ERP_AMPLITUDE,
            noise_std: 1.0,
            erp_latency_s: 0.3,
            erp_width_s: 0.1,
            spatial_profile: default_spatial_profile(CHANNELS),
            seed: 0,
        }
    }
}

/// Smooth bump over channel index peaking at three quarters of the montage.
pub fn default_spatial_profile(channels: usize) -> Vec<f64> {
    let center = 0.75 * channels as f64;
    let width = channels as f64 / 6.0;
    let raw: Vec<f64> = (0..channels)
        .map(|c| (-0.5 * ((c as f64 - center) / width).powi(2)).exp())
        .collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.into_iter().map(|v| v / norm).collect()
}

/// Unit vector along `channel`.
pub fn unit_profile(channels: usize, channel: usize) -> Vec<f64> {
    let mut p = vec![0.0; channels];
    p[channel] = 1.0;
    p
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive");
        }
        if self.channels == 0 || self.samples_per_epoch == 0 {
            return bad("channels and samples_per_epoch must be positive");
        }
        if self.channels > u16::MAX as usize || self.samples_per_epoch > u16::MAX as usize {
            return bad("channels and samples_per_epoch must fit in 16 bits");
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return bad("sample_rate_hz must be positive");
        }
        if !(self.erp_amplitude.is_finite() && self.erp_amplitude >= 0.0) {
            return bad("erp_amplitude must be finite and non-negative");
        }
        if !(self.noise_std.is_finite() && self.noise_std > 0.0) {
            return bad("noise_std must be positive");
        }
        if !(self.erp_width_s.is_finite() && self.erp_width_s > 0.0) {
            return bad("erp_width_s must be positive");
        }
        if !self.erp_latency_s.is_finite() {
            return bad("erp_latency_s must be finite");
        }
        if self.spatial_profile.len() != self.channels {
            return Err(Error::Dimension {
                expected: self.channels,
                found: self.spatial_profile.len(),
            });
        }
        let norm = self.spatial_profile.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return bad("spatial_profile must have unit Euclidean norm");
        }
        Ok(())
    }

    fn check_subject(&self, subject_index: usize) -> Result<()> {
        self.validate()?;
        if subject_index >= self.n_subjects {
            return Err(Error::Config(format!(
                "subject index {subject_index} out of range for {} subjects",
                self.n_subjects
            )));
        }
        Ok(())
    }
}

/// Per-subject latent structure: source gains, mixing matrix, trial order.
struct SubjectModel {
    gains: Vec<f64>,
    mixing: DMatrix<f64>,
    labels: Vec<Label>,
}

impl SubjectModel {
    fn new(config: &GeneratorConfig, subject_index: usize) -> Self {
        let mut rng = rng::stream(config.seed, &[subject_index as u64, SUBJECT_STREAM]);
        let n = config.channels;

        let raw: Vec<f64> = (0..n)
            .map(|j| {
                let frac = if n > 1 { j as f64 / (n - 1) as f64 } else { 0.5 };
                SOURCE_GAIN_SPREAD.powf(2.0 * frac - 1.0)
            })
            .collect();
        let mean_power = raw.iter().map(|g| g * g).sum::<f64>() / n as f64;
        let gains = raw.iter().map(|g| g / mean_power.sqrt()).collect();

        let gaussian = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = gaussian.qr();
        let mut mixing = qr.q();
        // Fix column signs so the factorization is unique.
        let r = qr.r();
        for c in 0..n {
            if r[(c, c)] < 0.0 {
                mixing.column_mut(c).neg_mut();
            }
        }

        let mut labels = vec![Label::Target; config.n_targets];
        labels.extend(std::iter::repeat_n(Label::NonTarget, config.n_nontargets));
        labels.shuffle(&mut rng);

        Self { gains, mixing, labels }
    }

    /// Mixed AR(1) noise, `channels x samples`, with per-sample coefficient `ar`.
    fn noise<R: Rng>(&self, rng: &mut R, samples: usize, ar: f64, noise_std: f64) -> DMatrix<f64> {
        let n = self.gains.len();
        let innovation = (1.0 - ar * ar).sqrt();
        let mut sources = DMatrix::zeros(n, samples);
        for j in 0..n {
            let scale = noise_std * self.gains[j];
            let mut prev: f64 = rng.sample::<f64, _>(StandardNormal);
            sources[(j, 0)] = scale * prev;
            for t in 1..samples {
                let z: f64 = rng.sample(StandardNormal);
                prev = ar * prev + innovation * z;
                sources[(j, t)] = scale * prev;
            }
        }
        &self.mixing * sources
    }
}

fn erp_waveform(config: &GeneratorConfig, rate_hz: f64, samples: usize) -> Vec<f64> {
    (0..samples)
        .map(|t| {
            let z = (t as f64 / rate_hz - config.erp_latency_s) / config.erp_width_s;
            config.erp_amplitude * (-0.5 * z * z).exp()
        })
        .collect()
}

fn add_erp(data: &mut DMatrix<f64>, offset: usize, profile: &[f64], waveform: &[f64]) {
    for (c, &p) in profile.iter().enumerate() {
        for (t, &v) in waveform.iter().enumerate() {
            data[(c, offset + t)] += p * v;
        }
    }
}

/// Subject-specific seed stored in generated sets.
pub fn subject_seed(config: &GeneratorConfig, subject_index: usize) -> u64 {
    rng::derive_seed(config.seed, &[subject_index as u64])
}

pub fn subject_id(subject_index: usize) -> String {
    format!("S{:02}", subject_index + 1)
}

/// Generates one synthetic subject directly at `config.sample_rate_hz`.
pub fn generate_subject(config: &GeneratorConfig, subject_index: usize) -> Result<EpochSet> {
    config.check_subject(subject_index)?;
    let model = SubjectModel::new(config, subject_index);
    let waveform = erp_waveform(config, config.sample_rate_hz, config.samples_per_epoch);
    let ar = AR_COEFFICIENT.powf(SAMPLE_RATE_HZ / config.sample_rate_hz);

    let epochs = model
        .labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut rng = rng::stream(config.seed, &[subject_index as u64, i as u64]);
            let mut data = model.noise(&mut rng, config.samples_per_epoch, ar, config.noise_std);
            if label.is_target() {
                add_erp(&mut data, 0, &config.spatial_profile, &waveform);
            }
            Epoch { data, label }
        })
        .collect();

    Ok(EpochSet {
        subject_id: subject_id(subject_index),
        seed: subject_seed(config, subject_index),
        epochs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub sample_index: usize,
    pub label: Label,
}

/// Continuous multichannel recording with stimulus events.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousRecording {
    pub sample_rate_hz: f64,
    pub data: DMatrix<f64>,
    pub events: Vec<Event>,
}

impl ContinuousRecording {
    pub fn new(sample_rate_hz: f64, data: DMatrix<f64>, events: Vec<Event>) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if events.windows(2).any(|w| w[1].sample_index <= w[0].sample_index) {
            return Err(Error::Config("event indices must be strictly increasing".into()));
        }
        if let Some(last) = events.last() {
            if last.sample_index >= data.ncols() {
                return Err(Error::OutOfBounds(format!(
                    "event at sample {} beyond recording of {} samples",
                    last.sample_index,
                    data.ncols()
                )));
            }
        }
        Ok(Self { sample_rate_hz, data, events })
    }

    pub fn total_samples(&self) -> usize {
        self.data.ncols()
    }
}

/// Synthesizes a continuous recording of one subject at `sample_rate_hz`,
/// with one stimulus every [`STIMULUS_INTERVAL_S`] in the subject's trial order.
pub fn synthesize_recording(
    config: &GeneratorConfig,
    subject_index: usize,
    sample_rate_hz: f64,
) -> Result<ContinuousRecording> {
    config.check_subject(subject_index)?;
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(Error::Config("sample rate must be positive".into()));
    }
    let model = SubjectModel::new(config, subject_index);
    let interval = (STIMULUS_INTERVAL_S * sample_rate_hz).round() as usize;
    let epoch_len = (config.samples_per_epoch as f64 * sample_rate_hz / config.sample_rate_hz).round() as usize;
    let n_events = model.labels.len();
    let total = interval * (n_events + 1) + epoch_len;

    let mut rng = rng::stream(config.seed, &[subject_index as u64, SUBJECT_STREAM, sample_rate_hz.to_bits()]);
    let ar = AR_COEFFICIENT.powf(SAMPLE_RATE_HZ / sample_rate_hz);
    let mut data = model.noise(&mut rng, total, ar, config.noise_std);
    let waveform = erp_waveform(config, sample_rate_hz, epoch_len);

    let events: Vec<Event> = model
        .labels
        .iter()
        .enumerate()
        .map(|(i, &label)| Event { sample_index: interval * (i + 1), label })
        .collect();
    for ev in events.iter().filter(|e| e.label.is_target()) {
        add_erp(&mut data, ev.sample_index, &config.spatial_profile, &waveform);
    }
    ContinuousRecording::new(sample_rate_hz, data, events)
}

/// Transition bandwidth floor for the band-pass design, in Hz.
const MIN_TRANSITION_HZ: f64 = 0.5;

/// Windowed-sinc (Hamming) band-pass kernel of odd length.
///
/// Both low-pass prototypes are normalized to unit DC gain, so the band-pass
/// has exactly zero DC gain whenever `low_hz > 0`. The length follows the
/// Hamming rule `N = 3.3 fs / transition` (about 53 dB stop band), with the
/// transition width set by the upper edge and the post-decimation Nyquist.
pub fn design_bandpass(fs: f64, low_hz: f64, high_hz: f64, output_nyquist_hz: f64) -> Vec<f64> {
    let mut transition = 0.25 * high_hz;
    if output_nyquist_hz > high_hz {
        transition = transition.min(output_nyquist_hz - high_hz);
    }
    let transition = transition.max(MIN_TRANSITION_HZ);
    let mut n = (3.3 * fs / transition).ceil() as usize;
    if n.is_multiple_of(2) {
        n += 1;
    }
    let half = (n / 2) as isize;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect();
    let lowpass = |cutoff: f64| -> Vec<f64> {
        let fc = cutoff / fs;
        let mut h: Vec<f64> = (0..n)
            .map(|i| {
                let k = (i as isize - half) as f64;
                let sinc = if k == 0.0 {
                    2.0 * fc
                } else {
                    (2.0 * std::f64::consts::PI * fc * k).sin() / (std::f64::consts::PI * k)
                };
                sinc * window[i]
            })
            .collect();
        let sum: f64 = h.iter().sum();
        h.iter_mut().for_each(|v| *v /= sum);
        h
    };
    let mut kernel = lowpass(high_hz);
    if low_hz > 0.0 {
        let low = lowpass(low_hz);
        kernel.iter_mut().zip(low).for_each(|(h, l)| *h -= l);
    }
    kernel
}

/// Centered ("same") convolution with a symmetric odd-length kernel; zero phase.
fn filter_zero_phase(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let half = kernel.len() / 2;
    let n = signal.len();
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(n - 1);
            (lo..=hi).map(|s| signal[s] * kernel[s + half - t]).sum()
        })
        .collect()
}

/// Zero-phase FIR band-pass followed by integer decimation.
pub fn preprocess(
    rec: &ContinuousRecording,
    low_hz: f64,
    high_hz: f64,
    target_rate_hz: f64,
) -> Result<ContinuousRecording> {
    let fs = rec.sample_rate_hz;
    if !(0.0 <= low_hz && low_hz < high_hz && high_hz < fs / 2.0) {
        return Err(Error::Config(format!(
            "band edges must satisfy 0 <= low < high < {}; got [{low_hz}, {high_hz}]",
            fs / 2.0
        )));
    }
    if !(target_rate_hz.is_finite() && target_rate_hz > 0.0) {
        return Err(Error::Config("target rate must be positive".into()));
    }
    let ratio = fs / target_rate_hz;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 * ratio {
        return Err(Error::Config(format!(
            "sample rate {fs} Hz is not an integer multiple of {target_rate_hz} Hz"
        )));
    }
    let factor = factor as usize;
    let kernel = design_bandpass(fs, low_hz, high_hz, target_rate_hz / 2.0);

    let out_len = rec.total_samples().div_ceil(factor);
    let mut out = DMatrix::zeros(rec.data.nrows(), out_len);
    for c in 0..rec.data.nrows() {
        let row: Vec<f64> = rec.data.row(c).iter().copied().collect();
        let filtered = filter_zero_phase(&row, &kernel);
        for (k, v) in filtered.into_iter().step_by(factor).enumerate() {
            out[(c, k)] = v;
        }
    }
    let events = rec
        .events
        .iter()
        .map(|e| Event { sample_index: e.sample_index / factor, label: e.label })
        .collect();
    ContinuousRecording::new(target_rate_hz, out, events)
}

/// Cuts one epoch per event, `[event, event + window)`.
pub fn extract_epochs(rec: &ContinuousRecording, window_s: f64) -> Result<EpochSet> {
    let window = window_s * rec.sample_rate_hz;
    let len = window.round();
    if len < 1.0 || (window - len).abs() > 1e-9 * window.max(1.0) {
        return Err(Error::Config(format!(
            "window of {window_s} s is not a whole number of samples at {} Hz",
            rec.sample_rate_hz
        )));
    }
    let len = len as usize;
    let epochs = rec
        .events
        .iter()
        .enumerate()
        .map(|(i, ev)| {
            if ev.sample_index + len > rec.total_samples() {
                return Err(Error::OutOfBounds(format!(
                    "event {i} at sample {} needs {len} samples but recording ends at {}",
                    ev.sample_index,
                    rec.total_samples()
                )));
            }
            Ok(Epoch {
                data: rec.data.columns(ev.sample_index, len).into_owned(),
                label: ev.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EpochSet { subject_id: String::new(), seed: 0, epochs })
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    subject_id: String,
    n_targets: usize,
    n_nontargets: usize,
}

/// Path of the JSON sidecar written next to an epoch file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn encode_epochs(set: &EpochSet) -> Result<Vec<u8>> {
    let (channels, samples) = set.shape().unwrap_or((CHANNELS, SAMPLES_PER_EPOCH));
    if set.epochs.iter().any(|e| e.channels() != channels || e.samples() != samples) {
        return Err(Error::Config("epochs in a set must share one shape".into()));
    }
    let (Ok(ch), Ok(sa), Ok(count)) = (
        u16::try_from(channels),
        u16::try_from(samples),
        u32::try_from(set.epochs.len()),
    ) else {
        return Err(Error::Config("epoch set too large for the file format".into()));
    };
    let mut buf = Vec::with_capacity(20 + set.epochs.len() * (1 + 8 * channels * samples));
    buf.extend_from_slice(EPOCH_MAGIC);
    buf.extend_from_slice(&EPOCH_VERSION.to_le_bytes());
    buf.extend_from_slice(&ch.to_le_bytes());
    buf.extend_from_slice(&sa.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&set.seed.to_le_bytes());
    for e in &set.epochs {
        buf.push(e.label.is_target() as u8);
        for c in 0..channels {
            for t in 0..samples {
                buf.extend_from_slice(&e.data[(c, t)].to_le_bytes());
            }
        }
    }
    Ok(buf)
}

pub fn decode_epochs(bytes: &[u8], subject_id: String) -> Result<EpochSet> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != EPOCH_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"ERPQ\"")));
    }
    let version = r.u16("version")?;
    if version != EPOCH_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let channels = r.u16("channels")? as usize;
    let samples = r.u16("samples")? as usize;
    let count = r.u32("epoch count")? as usize;
    let seed = r.u64("seed")?;

    let per_epoch = 1 + 8 * channels * samples;
    if r.remaining() != count * per_epoch {
        return Err(Error::truncated(
            r.offset(),
            format!(
                "header declares {count} epochs ({} bytes) but payload has {} bytes",
                count * per_epoch,
                r.remaining()
            ),
        ));
    }
    let mut epochs = Vec::with_capacity(count);
    for i in 0..count {
        let at = r.offset();
        let label = match r.u8("label")? {
            1 => Label::Target,
            0 => Label::NonTarget,
            other => return Err(Error::format(at, format!("epoch {i}: invalid label byte {other}"))),
        };
        let raw = r.take(8 * channels * samples, "samples")?;
        let data = DMatrix::from_fn(channels, samples, |c, t| {
            let k = 8 * (c * samples + t);
            f64::from_le_bytes(raw[k..k + 8].try_into().unwrap())
        });
        epochs.push(Epoch { data, label });
    }
    Ok(EpochSet { subject_id, seed, epochs })
}

/// Writes the binary epoch file plus a `<path>.json` sidecar carrying the subject id.
pub fn save_epochs(set: &EpochSet, path: &Path) -> Result<()> {
    let bytes = encode_epochs(set)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    let sidecar = Sidecar {
        subject_id: set.subject_id.clone(),
        n_targets: set.n_targets(),
        n_nontargets: set.n_nontargets(),
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes"))?;
    Ok(())
}

/// Reads an epoch file. The subject id comes from the sidecar when present,
/// otherwise from the file stem.
pub fn load_epochs(path: &Path) -> Result<EpochSet> {
    let bytes = fs::read(path)?;
    let subject_id = match fs::read(sidecar_path(path)) {
        Ok(raw) => serde_json::from_slice::<Sidecar>(&raw)
            .map_err(|e| Error::format(e.column() as u64, format!("sidecar: {e}")))?
            .subject_id,
        Err(_) => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    decode_epochs(&bytes, subject_id)
}
