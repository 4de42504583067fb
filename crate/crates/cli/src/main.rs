mod settings;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use erpq::eval::{pairwise_significance, ClassifierKind, Condition, DEFAULT_FOLDS};
use erpq::modelfmt;
use erpq::pipeline::{self, ExperimentConfig};
use erpq::synthdata::{self, GeneratorConfig};

use settings::FileConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] erpq::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use erpq::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::Config(_)) => 2,
            CliError::Core(E::Numeric(_) | E::Training(_)) => 4,
            CliError::Core(_) => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "erpq", version, about = "Post-training quantization study for single-trial ERP detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic subjects into epoch files plus a manifest.
    Gen(GenArgs),
    /// Cross-validate quantization conditions and write result tables.
    Run(RunArgs),
    /// Describe the sections and logical size of a model file.
    Inspect(InspectArgs),
    /// Recompute pairwise significance from an auc.csv table.
    Stats(StatsArgs),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Flat key=value file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    subjects: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    erp_amplitude: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    /// Target epochs per subject.
    #[arg(long)]
    targets: Option<usize>,
    /// Non-target epochs per subject.
    #[arg(long)]
    nontargets: Option<usize>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// blda or elm.
    #[arg(long)]
    classifier: Option<String>,
    /// Comma-separated condition labels; defaults to the full table.
    #[arg(long)]
    conditions: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    /// Worker threads over subjects; 0 picks automatically.
    #[arg(long)]
    jobs: Option<usize>,
    /// Directory written by `gen`; without it subjects are generated in memory.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    model: PathBuf,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// auc.csv written by `run`.
    auc: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

struct Resolved {
    file: FileConfig,
    generator: GeneratorConfig,
    out: Option<PathBuf>,
}

fn resolve_common(c: &Common) -> Result<Resolved, CliError> {
    let file = match &c.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let mut g = GeneratorConfig::default();
    if let Some(seed) = file.pick(c.seed, "seed")? {
        g.seed = seed;
    }
    if let Some(n) = file.pick(c.subjects, "subjects")? {
        if n == 0 {
            return Err(CliError::Usage("subjects must be at least 1".into()));
        }
        g.n_subjects = n as usize;
    }
    if let Some(a) = file.pick(c.erp_amplitude, "erp-amplitude")? {
        g.erp_amplitude = a;
    }
    if let Some(s) = file.pick(c.noise_std, "noise-std")? {
        g.noise_std = s;
    }
    if let Some(t) = file.pick(c.targets, "targets")? {
        g.n_targets = t;
    }
    if let Some(t) = file.pick(c.nontargets, "nontargets")? {
        g.n_nontargets = t;
    }
    g.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = file.pick(c.out.clone(), "out")?;
    Ok(Resolved { file, generator: g, out })
}

fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    let r = resolve_common(&args.common)?;
    let out = r.out.unwrap_or_else(|| PathBuf::from("data"));
    let manifest = pipeline::write_dataset(&r.generator, &out)?;
    println!("wrote {} subjects to {}", manifest.subjects.len(), out.display());
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let r = resolve_common(&args.common)?;
    let f = &r.file;
    let classifier: ClassifierKind = f
        .pick(args.classifier.clone(), "classifier")?
        .unwrap_or_else(|| "blda".into())
        .parse()
        .map_err(|e: erpq::Error| CliError::Usage(e.to_string()))?;
    let conditions = match f.pick(args.conditions.clone(), "conditions")? {
        Some(list) => Condition::parse_list(classifier, &list).map_err(|e| CliError::Usage(e.to_string()))?,
        None => Condition::parse_list(classifier, &classifier.table_conditions().join(","))?,
    };
    if conditions.is_empty() {
        return Err(CliError::Usage("no conditions given".into()));
    }
    let folds = f.pick(args.folds, "folds")?.unwrap_or(DEFAULT_FOLDS);
    if folds < 2 {
        return Err(CliError::Usage("folds must be at least 2".into()));
    }
    let jobs = f.pick(args.jobs, "jobs")?.unwrap_or(0);
    let out = r.out.unwrap_or_else(|| PathBuf::from("results"));

    let datasets = match f.pick(args.data.clone(), "data")? {
        Some(dir) => pipeline::load_dataset(&dir)?,
        None => (0..r.generator.n_subjects)
            .map(|i| synthdata::generate_subject(&r.generator, i))
            .collect::<erpq::Result<Vec<_>>>()?,
    };
    let exp = ExperimentConfig { classifier, conditions, folds, seed: r.generator.seed, jobs };
    let output = pipeline::run_experiment(&datasets, &exp)?;
    pipeline::write_outputs(&output, &out)?;

    let rep = &output.report;
    println!("{} subjects, {} conditions, results in {}", rep.subjects.len(), rep.conditions.len(), out.display());
    for ((c, m), s) in rep.conditions.iter().zip(&rep.mean).zip(&rep.sizes) {
        println!("{:>5}  mean AUC {m:.3}  total {} bits", c.label(), s.total_bits);
    }
    Ok(())
}

fn cmd_inspect(args: &InspectArgs) -> Result<(), CliError> {
    let sections = modelfmt::load_model(&args.model)?;
    println!("{}: {} sections", args.model.display(), sections.len());
    for (i, s) in sections.iter().enumerate() {
        let t = &s.tensor;
        let norm: Vec<String> = t.norm_params.iter().map(|v| format!("{v:.6e}")).collect();
        println!(
            "  [{i}] {:<14} {:<20} {}x{}  norm [{}]  {} bits",
            s.kind.to_string(),
            t.scheme.to_string(),
            t.rows,
            t.cols,
            norm.join(", "),
            s.logical_bits()
        );
    }
    let size = modelfmt::logical_size(&sections);
    println!("filter {} bits", size.filter_bits);
    println!("classifier {} bits", size.classifier_bits);
    println!("total {} bits", size.total_bits);
    Ok(())
}

/// Subject rows of an auc.csv table: header labels and per-subject values.
fn read_auc_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let text = fs::read_to_string(path).map_err(erpq::Error::from)?;
    let bad = |line: usize, msg: &str| CliError::Core(erpq::Error::Report(format!("{}:{line}: {msg}", path.display())));
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| bad(1, "empty file"))?
        .split(',')
        .skip(1)
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let mut cells = line.split(',');
        let name = cells.next().unwrap_or("");
        if ["Filter", "Classifier", "Total", "Mean", "SD"].contains(&name) {
            continue;
        }
        let row = cells.map(|c| c.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad(n + 2, "non-numeric cell"))?;
        if row.len() != header.len() {
            return Err(bad(n + 2, "row length differs from header"));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn cmd_stats(args: &StatsArgs) -> Result<(), CliError> {
    let (labels, rows) = read_auc_table(&args.auc)?;
    let sig = pairwise_significance(&rows, args.alpha)?;
    println!("{} subjects, Bonferroni threshold {:.6}", rows.len(), sig.threshold);
    println!("{:<8}{}", "", labels.iter().map(|l| format!("{l:>10}")).collect::<String>());
    for (i, label) in labels.iter().enumerate() {
        let cells: String = (0..labels.len())
            .map(|j| match sig.p_values[i][j] {
                Some(p) => format!("{:>9.2e}{}", p, if p < sig.threshold { "*" } else { " " }),
                None => format!("{:>10}", "-"),
            })
            .collect();
        println!("{label:<8}{cells}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("erpq: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
