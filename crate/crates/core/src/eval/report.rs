//! Result tables: AUC grid with Mean/SD rows, sizes, and pairwise significance.

use std::fmt::Write as _;

use super::stats::{pairwise_significance, Significance};
use super::{ClassifierKind, Condition};
use crate::error::{Error, Result};
use crate::quant::SizeBreakdown;

pub const SIGNIFICANCE_ALPHA: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub classifier: ClassifierKind,
    pub conditions: Vec<Condition>,
    pub subjects: Vec<String>,
    /// `per_subject_auc[subject][condition]`.
    pub per_subject_auc: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Population standard deviation over subjects.
    pub sd: Vec<f64>,
    pub sizes: Vec<SizeBreakdown>,
    /// `None` when fewer than two conditions or fewer than five subjects.
    pub significance: Option<Significance>,
}

fn mean_sd(column: &[f64]) -> (f64, f64) {
    let n = column.len() as f64;
    let mean = column.iter().sum::<f64>() / n;
    let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Assembles a report from a subjects x conditions grid. `None` cells are
/// reported as missing.
pub fn build_report(
    classifier: ClassifierKind,
    conditions: &[Condition],
    subjects: &[String],
    grid: &[Vec<Option<f64>>],
    sizes: &[SizeBreakdown],
) -> Result<EvalReport> {
    if conditions.is_empty() || subjects.is_empty() {
        return Err(Error::Report("report needs at least one subject and one condition".into()));
    }
    if grid.len() != subjects.len() || sizes.len() != conditions.len() {
        return Err(Error::Report(format!(
            "grid is {} rows for {} subjects, {} sizes for {} conditions",
            grid.len(),
            subjects.len(),
            sizes.len(),
            conditions.len()
        )));
    }
    let mut missing = Vec::new();
    for (s, row) in grid.iter().enumerate() {
        for (c, cond) in conditions.iter().enumerate() {
            if !matches!(row.get(c), Some(Some(v)) if v.is_finite()) {
                missing.push(format!("{}:{}", subjects[s], cond.label()));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Report(format!("missing result cells: {}", missing.join(", "))));
    }
    let per_subject_auc: Vec<Vec<f64>> =
        grid.iter().map(|row| row[..conditions.len()].iter().map(|v| v.unwrap()).collect()).collect();
    let (mean, sd) = (0..conditions.len())
        .map(|c| mean_sd(&per_subject_auc.iter().map(|r| r[c]).collect::<Vec<_>>()))
        .unzip();
    let significance = if conditions.len() >= 2 && subjects.len() >= 5 {
        Some(pairwise_significance(&per_subject_auc, SIGNIFICANCE_ALPHA)?)
    } else {
        None
    };
    Ok(EvalReport {
        classifier,
        conditions: conditions.to_vec(),
        subjects: subjects.to_vec(),
        per_subject_auc,
        mean,
        sd,
        sizes: sizes.to_vec(),
        significance,
    })
}

impl EvalReport {
    fn labels(&self) -> Vec<String> {
        self.conditions.iter().map(|c| c.label()).collect()
    }

    fn size_rows(&self) -> Vec<(&'static str, Vec<u64>)> {
        if self.classifier != ClassifierKind::Blda {
            return Vec::new();
        }
        vec![
            ("Filter", self.sizes.iter().map(|s| s.filter_bits).collect()),
            ("Classifier", self.sizes.iter().map(|s| s.classifier_bits).collect()),
            ("Total", self.sizes.iter().map(|s| s.total_bits).collect()),
        ]
    }

    fn auc_rows(&self) -> Vec<(String, Vec<String>)> {
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>();
        let mut rows: Vec<(String, Vec<String>)> =
            self.size_rows().into_iter().map(|(n, v)| (n.to_string(), v.iter().map(u64::to_string).collect())).collect();
        for (s, row) in self.subjects.iter().zip(&self.per_subject_auc) {
            rows.push((s.clone(), fmt(row)));
        }
        rows.push(("Mean".into(), fmt(&self.mean)));
        rows.push(("SD".into(), fmt(&self.sd)));
        rows
    }

    /// AUC table; BLDA tables lead with Filter/Classifier/Total size rows.
    pub fn auc_csv(&self) -> String {
        let mut out = format!("Method,{}\n", self.labels().join(","));
        for (name, cells) in self.auc_rows() {
            let _ = writeln!(out, "{name},{}", cells.join(","));
        }
        out
    }

    pub fn sizes_csv(&self) -> String {
        let mut out = String::from("Condition,Filter,Classifier,Total\n");
        for (label, s) in self.labels().iter().zip(&self.sizes) {
            let _ = writeln!(out, "{label},{},{},{}", s.filter_bits, s.classifier_bits, s.total_bits);
        }
        out
    }

    fn significance_cells(&self) -> Vec<Vec<String>> {
        let m = self.conditions.len();
        (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| match self.significance.as_ref().and_then(|s| s.is_significant(i, j)) {
                        Some(true) => "1".to_string(),
                        Some(false) => "0".to_string(),
                        None => "n/a".to_string(),
                    })
                    .collect()
            })
            .collect()
    }

    /// Symmetric 0/1 matrix at the Bonferroni threshold, `n/a` on the diagonal.
    pub fn significance_csv(&self) -> String {
        let mut out = format!("Method,{}\n", self.labels().join(","));
        for (label, row) in self.labels().iter().zip(self.significance_cells()) {
            let _ = writeln!(out, "{label},{}", row.join(","));
        }
        out
    }

    pub fn markdown(&self) -> String {
        let labels = self.labels();
        let header = |out: &mut String, first: &str| {
            let _ = writeln!(out, "| {first} | {} |", labels.join(" | "));
            let _ = writeln!(out, "|---|{}", "---:|".repeat(labels.len()));
        };
        let mut out = format!("# {} results\n\n## AUC\n\n", self.classifier.to_string().to_uppercase());
        header(&mut out, "Method");
        for (name, cells) in self.auc_rows() {
            let _ = writeln!(out, "| {name} | {} |", cells.join(" | "));
        }
        out.push_str("\n## Model size (bits)\n\n");
        header(&mut out, "");
        for (name, v) in [
            ("Filter", self.sizes.iter().map(|s| s.filter_bits).collect::<Vec<_>>()),
            ("Classifier", self.sizes.iter().map(|s| s.classifier_bits).collect()),
            ("Total", self.sizes.iter().map(|s| s.total_bits).collect()),
        ] {
            let cells: Vec<String> = v.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "| {name} | {} |", cells.join(" | "));
        }
        out.push_str("\n## Pairwise significance\n\n");
        match &self.significance {
            Some(sig) => {
                let _ = writeln!(
                    out,
                    "Wilcoxon signed-rank, Bonferroni threshold {:.6} (alpha {SIGNIFICANCE_ALPHA}); 1 = significant.\n",
                    sig.threshold
                );
                header(&mut out, "");
                for (label, row) in labels.iter().zip(self.significance_cells()) {
                    let _ = writeln!(out, "| {label} | {} |", row.join(" | "));
                }
            }
            None => out.push_str("Not computed: needs at least two conditions and five subjects.\n"),
        }
        out
    }
}
