//! Experiment orchestration: datasets on disk, the subject grid, and output files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, build_report, ClassifierKind, Condition, EvalReport, ModelDims};
use crate::modelfmt::{self, Section};
use crate::synthdata::{self, EpochSet, GeneratorConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EPOCH_EXTENSION: &str = "epochs";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: GeneratorConfig,
    pub subjects: Vec<String>,
    pub files: Vec<String>,
}

/// Generates every subject and writes `<id>.epochs` files plus a manifest.
pub fn write_dataset(config: &GeneratorConfig, dir: &Path) -> Result<Manifest> {
    config.validate()?;
    fs::create_dir_all(dir)?;
    let mut subjects = Vec::with_capacity(config.n_subjects);
    let mut files = Vec::with_capacity(config.n_subjects);
    for i in 0..config.n_subjects {
        let set = synthdata::generate_subject(config, i)?;
        let name = format!("{}.{EPOCH_EXTENSION}", set.subject_id);
        synthdata::save_epochs(&set, &dir.join(&name))?;
        subjects.push(set.subject_id);
        files.push(name);
    }
    let manifest = Manifest { generator: config.clone(), subjects, files };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Report(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

fn not_found(message: String) -> Error {
    Error::Io(io::Error::new(io::ErrorKind::NotFound, message))
}

/// Epoch files of a data directory, in manifest order when a manifest
/// exists, otherwise sorted by name. Fails before reading any epochs when
/// the directory or a listed file is missing.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(not_found(format!("data directory {} does not exist", dir.display())));
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    let files: Vec<PathBuf> = if manifest_path.is_file() {
        let raw = fs::read(&manifest_path)?;
        let manifest: Manifest = serde_json::from_slice(&raw)
            .map_err(|e| Error::format(e.column() as u64, format!("{}: {e}", manifest_path.display())))?;
        manifest.files.iter().map(|f| dir.join(f)).collect()
    } else {
        let mut v: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == EPOCH_EXTENSION))
            .collect();
        v.sort();
        v
    };
    if files.is_empty() {
        return Err(not_found(format!("no epoch files in {}", dir.display())));
    }
    if let Some(missing) = files.iter().find(|p| !p.is_file()) {
        return Err(not_found(format!("epoch file {} does not exist", missing.display())));
    }
    Ok(files)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<EpochSet>> {
    dataset_files(dir)?.iter().map(|p| synthdata::load_epochs(p)).collect()
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub classifier: ClassifierKind,
    pub conditions: Vec<Condition>,
    pub folds: usize,
    pub seed: u64,
    /// Worker threads; `0` uses the rayon default.
    pub jobs: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub report: EvalReport,
    /// First subject, first fold: one model per condition.
    pub models: Vec<(Condition, Vec<Section>)>,
}

/// Runs cross-validation for every subject and assembles the report.
pub fn run_experiment(datasets: &[EpochSet], cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    if datasets.is_empty() {
        return Err(Error::Config("no subjects to evaluate".into()));
    }
    if cfg.conditions.iter().any(|c| c.kind() != cfg.classifier) {
        return Err(Error::Config(format!("conditions do not match classifier {}", cfg.classifier)));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results = pool.install(|| {
        datasets
            .par_iter()
            .map(|d| eval::cross_validate(d, &cfg.conditions, cfg.folds, cfg.seed))
            .collect::<Vec<_>>()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    let (channels, samples) = datasets[0].shape().ok_or_else(|| Error::Config("empty dataset".into()))?;
    let dims = ModelDims { channels, samples, ..Default::default() };
    let sizes: Vec<_> = cfg.conditions.iter().map(|c| c.sizes(&dims)).collect();
    let subjects: Vec<String> = datasets.iter().map(|d| d.subject_id.clone()).collect();
    let grid: Vec<Vec<Option<f64>>> =
        results.iter().map(|r| (0..cfg.conditions.len()).map(|c| Some(r.mean_auc(c))).collect()).collect();
    let report = build_report(cfg.classifier, &cfg.conditions, &subjects, &grid, &sizes)?;
    let models = cfg.conditions.iter().copied().zip(results.into_iter().next().unwrap().first_fold_models).collect();
    Ok(ExperimentOutput { report, models })
}

/// File name of a condition's model: `/` becomes `_`.
pub fn model_file_name(condition: &Condition) -> String {
    format!("{}.ptqm", condition.label().replace('/', "_"))
}

/// Writes auc.csv, sizes.csv, significance.csv, report.md and `models/*.ptqm`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join("models"))?;
    let r = &out.report;
    let mut written = Vec::new();
    for (name, body) in [
        ("auc.csv", r.auc_csv()),
        ("sizes.csv", r.sizes_csv()),
        ("significance.csv", r.significance_csv()),
        ("report.md", r.markdown()),
    ] {
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
    }
    for (cond, sections) in &out.models {
        let p = dir.join("models").join(model_file_name(cond));
        modelfmt::save_model(sections, &p)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_names() {
        let c = Condition::parse(ClassifierKind::Blda, "1/1").unwrap();
        assert_eq!(model_file_name(&c), "1_1.ptqm");
        let e = Condition::parse(ClassifierKind::Elm, "12").unwrap();
        assert_eq!(model_file_name(&e), "12.ptqm");
    }

    #[test]
    fn dataset_round_trip_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GeneratorConfig { n_subjects: 3, n_targets: 10, n_nontargets: 30, seed: 5, ..Default::default() };
        let m = write_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(m.subjects, ["S01", "S02", "S03"]);
        let sets = load_dataset(dir.path()).unwrap();
        assert_eq!(sets.len(), 3);
        for (i, s) in sets.iter().enumerate() {
            assert_eq!(s, &synthdata::generate_subject(&cfg, i).unwrap());
        }
    }

    #[test]
    fn missing_data_is_reported_early() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(dataset_files(&dir.path().join("nope")), Err(Error::Io(_))));
        assert!(matches!(dataset_files(dir.path()), Err(Error::Io(_))));
        let cfg = GeneratorConfig { n_subjects: 2, n_targets: 10, n_nontargets: 30, ..Default::default() };
        write_dataset(&cfg, dir.path()).unwrap();
        fs::remove_file(dir.path().join("S02.epochs")).unwrap();
        let err = dataset_files(dir.path()).unwrap_err().to_string();
        assert!(err.contains("S02.epochs"), "{err}");
    }

    #[test]
    fn experiment_is_independent_of_thread_count() {
        let cfg = GeneratorConfig { n_subjects: 3, n_targets: 20, n_nontargets: 60, erp_amplitude: 1.0, ..Default::default() };
        let sets: Vec<EpochSet> = (0..3).map(|i| synthdata::generate_subject(&cfg, i).unwrap()).collect();
        let mut exp = ExperimentConfig {
            classifier: ClassifierKind::Blda,
            conditions: Condition::parse_list(ClassifierKind::Blda, "0/0,1/1").unwrap(),
            folds: 5,
            seed: 1,
            jobs: 1,
        };
        let a = run_experiment(&sets, &exp).unwrap();
        exp.jobs = 3;
        let b = run_experiment(&sets, &exp).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.models.len(), 2);

        let dir = tempfile::tempdir().unwrap();
        let files = write_outputs(&a, dir.path()).unwrap();
        assert_eq!(files.len(), 6);
        let loaded = modelfmt::load_model(&dir.path().join("models/1_1.ptqm")).unwrap();
        assert_eq!(modelfmt::logical_size(&loaded).total_bits, 5252);
    }
}
