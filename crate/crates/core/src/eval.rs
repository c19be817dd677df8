//! Label-aware evaluation. This module is the only place where test
//! labels can be read.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::datagen::Dataset;
use crate::detector::{fit_gde, EncoderParams};
use crate::error::{Error, Result};
use crate::image::batch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Anomaly,
}

impl Label {
    fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomaly => "anomaly",
        }
    }
}

static LABEL_READS: AtomicUsize = AtomicUsize::new(0);

/// Number of times any sealed label set has been opened in this process.
pub fn label_reads() -> usize {
    LABEL_READS.load(Ordering::SeqCst)
}

#[derive(Clone, Debug)]
enum Store {
    Memory(Vec<Label>),
    File { path: PathBuf, expected: usize },
}

/// Test labels that only this module can open.
#[derive(Clone, Debug)]
pub struct SealedLabels {
    store: Store,
}

impl SealedLabels {
    pub fn seal(labels: Vec<Label>) -> Self {
        Self {
            store: Store::Memory(labels),
        }
    }

    fn unseal(&self) -> Result<Vec<Label>> {
        LABEL_READS.fetch_add(1, Ordering::SeqCst);
        match &self.store {
            Store::Memory(v) => Ok(v.clone()),
            Store::File { path, expected } => parse_labels(path, *expected),
        }
    }
}

/// Labels stored at `path`, left unread until evaluation.
pub(crate) fn read_labels_deferred(path: &Path, expected: usize) -> SealedLabels {
    SealedLabels {
        store: Store::File {
            path: path.to_path_buf(),
            expected,
        },
    }
}

pub(crate) fn write_labels(labels: &SealedLabels, names: &[String], path: &Path) -> Result<()> {
    let labels = labels.unseal()?;
    if labels.len() != names.len() {
        return Err(Error::Invalid(format!(
            "{} labels for {} test images",
            labels.len(),
            names.len()
        )));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let io = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["filename", "label"]).map_err(io)?;
    for (n, l) in names.iter().zip(labels) {
        w.write_record([n.as_str(), l.as_str()]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_labels(path: &Path, expected: usize) -> Result<Vec<Label>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, format!("record {}: {e}", i + 1)))?;
        let label = match rec.get(1) {
            Some("normal") => Label::Normal,
            Some("anomaly") => Label::Anomaly,
            other => {
                return Err(Error::format(
                    path,
                    format!("record {}: bad label {other:?}", i + 1),
                ))
            }
        };
        out.push(label);
    }
    if out.len() != expected {
        return Err(Error::format(
            path,
            format!("{} labels, expected {expected}", out.len()),
        ));
    }
    Ok(out)
}

/// Whether two sealed label sets hold the same labels.
pub fn labels_equal(a: &SealedLabels, b: &SealedLabels) -> Result<bool> {
    Ok(a.unseal()? == b.unseal()?)
}

/// Count of anomalies in a sealed label set.
pub fn anomaly_count(labels: &SealedLabels) -> Result<usize> {
    Ok(labels.unseal()?.iter().filter(|l| **l == Label::Anomaly).count())
}

/// Scores aligned with test order, plus their labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTestSet {
    pub scores: Vec<f64>,
    pub labels: Vec<Label>,
}

/// Area under the ROC curve: probability that a random anomaly outscores a
/// random normal sample, ties counted ½.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auc", &[scores.len()], &[labels.len()]));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN anomaly score".into()));
    }
    let n_pos = labels.iter().filter(|l| **l == Label::Anomaly).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InsufficientData(
            "AUC needs at least one normal and one anomalous sample".into(),
        ));
    }
    // rank-sum with midranks for ties
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == Label::Anomaly {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Ranks of `|d|` with ties averaged (1-based).
fn abs_ranks(d: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()));
    let mut ranks = vec![0.0; d.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && d[order[j + 1]].abs() == d[order[i]].abs() {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    ranks
}

/// Largest sample size evaluated by exact enumeration.
pub const WILCOXON_EXACT_MAX: usize = 12;

/// One-sided paired Wilcoxon signed-rank p-value for the alternative that
/// the differences are positive (`P(W+ ≥ observed)`).
///
/// Zero differences are dropped and tied magnitudes get averaged ranks.
/// Up to [`WILCOXON_EXACT_MAX`] differences the null distribution is
/// enumerated exactly; beyond that a normal approximation with tie
/// correction is used.
pub fn wilcoxon_one_sided(diffs: &[f64]) -> Result<f64> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("paired difference".into()));
    }
    let d: Vec<f64> = diffs.iter().copied().filter(|&x| x != 0.0).collect();
    if d.is_empty() {
        return Err(Error::Degenerate(
            "all paired differences are zero".into(),
        ));
    }
    let n = d.len();
    if n < 5 {
        return Err(Error::InsufficientData(format!(
            "signed-rank test needs at least 5 nonzero differences, got {n}"
        )));
    }
    let ranks = abs_ranks(&d);
    let w: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    if n <= WILCOXON_EXACT_MAX {
        // ranks are multiples of 1/2, so compare on a doubled integer scale
        let r2: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
        let w2 = (2.0 * w).round() as u64;
        let total: u64 = r2.iter().sum();
        let mut counts = vec![0u64; total as usize + 1];
        counts[0] = 1;
        for &r in &r2 {
            for s in (r as usize..=total as usize).rev() {
                counts[s] += counts[s - r as usize];
            }
        }
        let hits: u64 = counts[w2 as usize..].iter().sum();
        return Ok(hits as f64 / (1u64 << n) as f64);
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut ties = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let z = (w - mean) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.sf(z))
}

/// AUC of a trained detector on a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEvaluation {
    pub scored: ScoredTestSet,
    pub auc: f64,
}

/// Fits a Gaussian on the training embeddings of `theta`, scores the test
/// set, opens the labels and computes the AUC.
pub fn evaluate_run(theta: &EncoderParams, dataset: &Dataset) -> Result<RunEvaluation> {
    let gde = fit_gde(&theta.embed(&batch(&dataset.train)?)?)?;
    let scores = gde.score_rows(&theta.embed(&batch(&dataset.test)?)?)?;
    let labels = dataset.test_labels.unseal()?;
    let auc = auc(&scores, &labels)?;
    Ok(RunEvaluation {
        scored: ScoredTestSet { scores, labels },
        auc,
    })
}

/// One AUC measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub method: String,
    pub seed: u64,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Outcome of one paired comparison against the reference method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method: String,
    pub pairs: usize,
    /// `None` when the test is undefined (e.g. all differences zero).
    pub p_value: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub reference: String,
    pub tasks: Vec<String>,
    pub methods: Vec<String>,
    /// `cells[task][method]`.
    pub cells: BTreeMap<String, BTreeMap<String, CellStats>>,
    pub comparisons: Vec<Comparison>,
    pub rows: Vec<ResultRow>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Means and standard deviations per task and method, plus one-sided
/// Wilcoxon tests of `reference` against every other method over all
/// task×seed pairs. The grid must be complete.
pub fn build_table(rows: &[ResultRow], reference: &str) -> Result<ComparisonTable> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("no results".into()));
    }
    let tasks: BTreeSet<&str> = rows.iter().map(|r| r.task.as_str()).collect();
    let methods: BTreeSet<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    let seeds: BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
    let mut grid: BTreeMap<(&str, &str, u64), f64> = BTreeMap::new();
    for r in rows {
        if grid.insert((&r.task, &r.method, r.seed), r.auc).is_some() {
            return Err(Error::Invalid(format!(
                "duplicate result for task {}, method {}, seed {}",
                r.task, r.method, r.seed
            )));
        }
    }
    let mut missing = Vec::new();
    for &t in &tasks {
        for &m in &methods {
            for &s in &seeds {
                if !grid.contains_key(&(t, m, s)) {
                    missing.push(format!("{t}/{m}/seed {s}"));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing));
    }
    if !methods.contains(reference) {
        return Err(Error::Invalid(format!("reference method {reference} has no results")));
    }

    let mut cells = BTreeMap::new();
    for &t in &tasks {
        let mut row = BTreeMap::new();
        for &m in &methods {
            let v: Vec<f64> = seeds.iter().map(|&s| grid[&(t, m, s)]).collect();
            let (mean, std) = mean_std(&v);
            row.insert(m.to_string(), CellStats { mean, std, n: v.len() });
        }
        cells.insert(t.to_string(), row);
    }
    let mut comparisons = Vec::new();
    for &m in methods.iter().filter(|&&m| m != reference) {
        let diffs: Vec<f64> = tasks
            .iter()
            .flat_map(|&t| seeds.iter().map(move |&s| (t, s)))
            .map(|(t, s)| grid[&(t, reference, s)] - grid[&(t, m, s)])
            .collect();
        let (p_value, note) = match wilcoxon_one_sided(&diffs) {
            Ok(p) => (Some(p), None),
            Err(e) => (None, Some(e.to_string())),
        };
        comparisons.push(Comparison {
            method: m.to_string(),
            pairs: diffs.len(),
            p_value,
            note,
        });
    }
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| (&a.task, &a.method, a.seed).cmp(&(&b.task, &b.method, b.seed)));
    Ok(ComparisonTable {
        reference: reference.to_string(),
        tasks: tasks.iter().map(|s| s.to_string()).collect(),
        methods: methods.iter().map(|s| s.to_string()).collect(),
        cells,
        comparisons,
        rows: sorted,
    })
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,method,seed,auc\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:?}", r.task, r.method, r.seed, r.auc);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Markdown table of `mean ± std` with the best mean per task in bold,
    /// followed by the p-values.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| task | {} |", self.methods.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(self.methods.len()));
        for t in &self.tasks {
            let row = &self.cells[t];
            let best = row.values().map(|c| c.mean).fold(f64::NEG_INFINITY, f64::max);
            let cells: Vec<String> = self
                .methods
                .iter()
                .map(|m| {
                    let c = &row[m];
                    let s = format!("{:.3} ± {:.3}", c.mean, c.std);
                    if c.mean == best {
                        format!("**{s}**")
                    } else {
                        s
                    }
                })
                .collect();
            let _ = writeln!(out, "| {t} | {} |", cells.join(" | "));
        }
        if !self.comparisons.is_empty() {
            let _ = writeln!(
                out,
                "\nOne-sided paired Wilcoxon signed-rank tests ({} > other):\n",
                self.reference
            );
            let _ = writeln!(out, "| method | pairs | p-value |");
            let _ = writeln!(out, "|---|---|---|");
            for c in &self.comparisons {
                let p = match (c.p_value, &c.note) {
                    (Some(p), _) => format!("{p:.4}"),
                    (None, Some(n)) => format!("n/a ({n})"),
                    (None, None) => "n/a".into(),
                };
                let _ = writeln!(out, "| {} | {} | {p} |", c.method, c.pairs);
            }
        }
        out
    }

    /// Writes `results.json`, `results.csv` and `table.md` into `dir`.
    pub fn write_reports(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("results.json"), self.to_json()?)?;
        fs::write(dir.join("results.csv"), self.to_csv())?;
        fs::write(dir.join("table.md"), self.to_markdown())?;
        Ok(())
    }
}
