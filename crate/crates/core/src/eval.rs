//! Accuracy, multi-seed aggregation, flip analysis and result tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CategorySet, DatasetManifest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub dataset: String,
    pub correct: usize,
    pub total: usize,
    /// Percentage, `100 * correct / total`.
    pub accuracy: f64,
}

impl AccuracyReport {
    pub fn for_dataset(mut self, dataset: impl Into<String>) -> Self {
        self.dataset = dataset.into();
        self
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

fn pct(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

/// Top-1 accuracy in percent.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<AccuracyReport> {
    check_lengths(predictions.len(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::invalid("accuracy of an empty prediction set"));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(AccuracyReport {
        dataset: String::new(),
        correct,
        total: labels.len(),
        accuracy: pct(correct, labels.len()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    /// (seed, accuracy), sorted by seed.
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl SeedAggregate {
    pub fn from_values(mut per_seed: Vec<(u64, f64)>) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::invalid("need at least one seed"));
        }
        per_seed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let n = per_seed.len() as f64;
        let lo = per_seed.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = per_seed.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let mean = (per_seed.iter().map(|p| p.1).sum::<f64>() / n).clamp(lo, hi);
        let var = per_seed.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            per_seed,
            mean,
            std: var.sqrt(),
        })
    }

    /// `"55.00 ±5.00"`.
    pub fn display(&self) -> String {
        format!("{:.2} ±{:.2}", self.mean, self.std)
    }
}

/// Runs `run` once per seed (in parallel) and aggregates the accuracies.
pub fn seed_aggregate<F>(run: F, seeds: &[u64]) -> Result<SeedAggregate>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    let per_seed = seeds
        .par_iter()
        .map(|&s| run(s).map(|acc| (s, acc)))
        .collect::<Result<Vec<_>>>()?;
    SeedAggregate::from_values(per_seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    /// Wrong under the base classifier, right under the new one.
    pub positive_count: usize,
    /// Right under the base classifier, wrong under the new one.
    pub negative_count: usize,
    pub total: usize,
    pub positive_pct: f64,
    pub negative_pct: f64,
}

pub fn flip_report(base: &[usize], new: &[usize], labels: &[usize]) -> Result<FlipReport> {
    check_lengths(base.len(), labels.len())?;
    check_lengths(new.len(), labels.len())?;
    let (mut positive, mut negative) = (0, 0);
    for ((b, n), l) in base.iter().zip(new).zip(labels) {
        match (b == l, n == l) {
            (false, true) => positive += 1,
            (true, false) => negative += 1,
            _ => {}
        }
    }
    let total = labels.len();
    let (positive_pct, negative_pct) = if total == 0 {
        (0.0, 0.0)
    } else {
        (pct(positive, total), pct(negative, total))
    };
    Ok(FlipReport {
        positive_count: positive,
        negative_count: negative,
        total,
        positive_pct,
        negative_pct,
    })
}

/// Accuracy change per (dataset, concept) relative to the dataset's
/// concept-free run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptMatrix {
    pub datasets: Vec<String>,
    pub concepts: Vec<String>,
    pub deltas: Vec<Vec<f64>>,
}

impl ConceptMatrix {
    pub fn render(&self) -> String {
        let mut header = vec![String::new()];
        header.extend(self.concepts.iter().cloned());
        let mut rows = vec![header];
        for (name, deltas) in self.datasets.iter().zip(&self.deltas) {
            let mut row = vec![name.clone()];
            row.extend(deltas.iter().map(|d| format!("{d:+.2}")));
            rows.push(row);
        }
        align(&rows)
    }
}

/// `runner(manifest, categories, concept)` returns accuracy in percent;
/// `concept = None` is the plain baseline.
pub fn concept_matrix<F>(
    datasets: &[(DatasetManifest, CategorySet)],
    concepts: &[String],
    runner: F,
) -> Result<ConceptMatrix>
where
    F: Fn(&DatasetManifest, &CategorySet, Option<&str>) -> Result<f64> + Sync,
{
    let deltas = datasets
        .par_iter()
        .map(|(manifest, cats)| {
            let plain = runner(manifest, cats, None)?;
            concepts
                .iter()
                .map(|c| runner(manifest, cats, Some(c)).map(|acc| acc - plain))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConceptMatrix {
        datasets: datasets.iter().map(|(m, _)| m.name.clone()).collect(),
        concepts: concepts.to_vec(),
        deltas,
    })
}

/// One run's outcome, keyed by (dataset, method, backbone, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub dataset: String,
    pub method: String,
    pub backbone: String,
    pub seed: u64,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

impl ResultRecord {
    fn key(&self) -> (&str, &str, &str, u64) {
        (&self.dataset, &self.method, &self.backbone, self.seed)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub records: Vec<ResultRecord>,
}

impl ResultsDocument {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("results serialize");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Adds records, replacing any with the same key.
    pub fn merge(&mut self, records: impl IntoIterator<Item = ResultRecord>) {
        for r in records {
            match self.records.iter_mut().find(|x| x.key() == r.key()) {
                Some(slot) => *slot = r,
                None => self.records.push(r),
            }
        }
    }

    /// Plain-text tables, one per backbone: methods as rows, datasets as
    /// columns, then an "Avg" column. The average's spread is the root mean
    /// square of the per-dataset standard deviations.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        for backbone in first_seen(self.records.iter().map(|r| r.backbone.as_str())) {
            let recs: Vec<&ResultRecord> = self.records.iter().filter(|r| r.backbone == backbone).collect();
            let datasets = first_seen(recs.iter().map(|r| r.dataset.as_str()));
            let methods = first_seen(recs.iter().map(|r| r.method.as_str()));

            let mut header = vec![backbone.to_owned()];
            header.extend(datasets.iter().map(|d| d.to_string()));
            header.push("Avg".into());
            let mut rows = vec![header];
            for method in &methods {
                let mut row = vec![method.to_string()];
                let mut cells = Vec::new();
                for dataset in &datasets {
                    let values: Vec<(u64, f64)> = recs
                        .iter()
                        .filter(|r| r.method == *method && r.dataset == *dataset)
                        .map(|r| (r.seed, r.accuracy))
                        .collect();
                    match SeedAggregate::from_values(values) {
                        Ok(agg) => {
                            row.push(agg.display());
                            cells.push(agg);
                        }
                        Err(_) => row.push("-".into()),
                    }
                }
                if cells.len() == datasets.len() {
                    let n = cells.len() as f64;
                    let mean = cells.iter().map(|a| a.mean).sum::<f64>() / n;
                    let rms = (cells.iter().map(|a| a.std * a.std).sum::<f64>() / n).sqrt();
                    row.push(format!("{mean:.2} ±{rms:.2}"));
                } else {
                    row.push("-".into());
                }
                rows.push(row);
            }
            out.push_str(&align(&rows));
            out.push('\n');
        }
        out
    }
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

/// Left-aligned first column, right-aligned others, " | " after the first.
fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            match c {
                0 => write!(out, "{cell:<w$} |", w = widths[0]).unwrap(),
                _ => write!(out, " {cell:>w$}", w = widths[c]).unwrap(),
            }
        }
        out.push('\n');
        if i == 0 {
            let len = widths.iter().sum::<usize>() + 2 + widths.len().saturating_sub(1);
            out.push_str(&"-".repeat(len));
            out.push('\n');
        }
    }
    out
}
