//! Confusion matrices, per-class metrics and the real/fake rollup.

mod predictions;
mod render;

pub use predictions::{report_from_predictions, PredictionEntry, PredictionFile};
pub use render::{parse_report_csv, render_report, render_reports, ReportFormat};

use crate::error::{Error, Result};
use crate::registry::{Registry, Verdict};

/// Rows are ground truth, columns are predictions, both in registry order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::Evaluation(format!(
                "confusion row of length {} in a {k}-class matrix",
                r.len()
            )));
        }
        Ok(Self {
            k,
            counts: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn increment(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.k + pred] += 1;
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.k..(truth + 1) * self.k]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.k).map(|t| self.row(t).to_vec()).collect()
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        self.row(truth).iter().sum()
    }

    pub fn column_total(&self, pred: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, pred)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// Relabels classes: new class `i` is old class `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.k];
        if perm.len() != self.k
            || perm
                .iter()
                .any(|&p| p >= self.k || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Evaluation("not a permutation of the class indices".into()));
        }
        let rows: Vec<Vec<u64>> = perm
            .iter()
            .map(|&t| perm.iter().map(|&p| self.get(t, p)).collect())
            .collect();
        Self::from_rows(&rows)
    }
}

pub fn build_confusion(truths: &[usize], preds: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truths.len() != preds.len() {
        return Err(Error::Evaluation(format!(
            "{} ground-truth labels but {} predictions",
            truths.len(),
            preds.len()
        )));
    }
    let mut m = ConfusionMatrix::zeros(k);
    for (&t, &p) in truths.iter().zip(preds) {
        if t >= k || p >= k {
            return Err(Error::UnknownClassId(t.max(p)));
        }
        m.increment(t, p);
    }
    Ok(m)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Undefined entries (zero denominators) are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl ClassMetrics {
    fn from_counts(hits: u64, predicted: u64, actual: u64) -> Self {
        let precision = ratio(hits, predicted);
        let recall = ratio(hits, actual);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        Self { precision, recall, f1 }
    }
}

pub fn per_class_metrics(matrix: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..matrix.classes())
        .map(|k| ClassMetrics::from_counts(matrix.get(k, k), matrix.column_total(k), matrix.row_total(k)))
        .collect()
}

/// Diagonal over row totals; `None` for classes with no samples.
pub fn accuracy_by_class(matrix: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..matrix.classes())
        .map(|k| ratio(matrix.get(k, k), matrix.row_total(k)))
        .collect()
}

/// Real/fake confusion. Index 0 is real, 1 is fake; rows are truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryRollup {
    pub counts: [[u64; 2]; 2],
}

impl BinaryRollup {
    fn index(v: Verdict) -> usize {
        match v {
            Verdict::Real => 0,
            Verdict::Fake => 1,
        }
    }

    pub fn from_verdicts(truths: &[Verdict], preds: &[Verdict]) -> Result<Self> {
        if truths.len() != preds.len() {
            return Err(Error::Evaluation(format!(
                "{} ground-truth labels but {} predictions",
                truths.len(),
                preds.len()
            )));
        }
        let mut counts = [[0u64; 2]; 2];
        for (&t, &p) in truths.iter().zip(preds) {
            counts[Self::index(t)][Self::index(p)] += 1;
        }
        Ok(Self { counts })
    }

    pub fn get(&self, truth: Verdict, pred: Verdict) -> u64 {
        self.counts[Self::index(truth)][Self::index(pred)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.counts[0][0] + self.counts[1][1], self.total())
    }

    pub fn metrics(&self, side: Verdict) -> ClassMetrics {
        let i = Self::index(side);
        let predicted = self.counts[0][i] + self.counts[1][i];
        let actual = self.counts[i][0] + self.counts[i][1];
        ClassMetrics::from_counts(self.counts[i][i], predicted, actual)
    }
}

fn verdict_flags(matrix: &ConfusionMatrix, registry: &Registry) -> Result<Vec<bool>> {
    if matrix.classes() != registry.len() {
        return Err(Error::Evaluation(format!(
            "{}-class matrix for a {}-class registry",
            matrix.classes(),
            registry.len()
        )));
    }
    Ok(registry.classes().iter().map(|c| c.is_fake()).collect())
}

fn rollup_with(matrix: &ConfusionMatrix, fake: &[bool]) -> BinaryRollup {
    let mut counts = [[0u64; 2]; 2];
    for t in 0..matrix.classes() {
        for p in 0..matrix.classes() {
            counts[fake[t] as usize][fake[p] as usize] += matrix.get(t, p);
        }
    }
    BinaryRollup { counts }
}

fn detection_with(matrix: &ConfusionMatrix, fake: &[bool]) -> Vec<u64> {
    (0..matrix.classes())
        .map(|t| {
            (0..matrix.classes())
                .filter(|&p| fake[p] == fake[t])
                .map(|p| matrix.get(t, p))
                .sum()
        })
        .collect()
}

/// Merges classes by their real/fake verdict.
pub fn binary_rollup(matrix: &ConfusionMatrix, registry: &Registry) -> Result<BinaryRollup> {
    Ok(rollup_with(matrix, &verdict_flags(matrix, registry)?))
}

/// Per-class number of images whose real/fake verdict was right.
pub fn detection_counts(matrix: &ConfusionMatrix, registry: &Registry) -> Result<Vec<u64>> {
    Ok(detection_with(matrix, &verdict_flags(matrix, registry)?))
}

/// Multi-class part of a report; absent for methods that only emit a
/// real/fake verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiClassReport {
    pub confusion: ConfusionMatrix,
    pub metrics: Vec<ClassMetrics>,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub correct_counts: Vec<u64>,
    pub overall_accuracy: Option<f64>,
}

impl MultiClassReport {
    pub fn new(confusion: ConfusionMatrix) -> Self {
        let k = confusion.classes();
        Self {
            metrics: per_class_metrics(&confusion),
            per_class_accuracy: accuracy_by_class(&confusion),
            correct_counts: (0..k).map(|i| confusion.get(i, i)).collect(),
            overall_accuracy: ratio(confusion.trace(), confusion.total()),
            confusion,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    /// Class abbreviations in registry order.
    pub labels: Vec<String>,
    pub fake: Vec<bool>,
    pub totals: Vec<u64>,
    /// Images per class with the correct real/fake verdict.
    pub detection_correct: Vec<u64>,
    pub binary: BinaryRollup,
    pub multiclass: Option<MultiClassReport>,
}

impl EvalReport {
    fn labels(registry: &Registry) -> (Vec<String>, Vec<bool>) {
        registry
            .classes()
            .iter()
            .map(|c| (c.abbreviation.clone(), c.is_fake()))
            .unzip()
    }

    pub fn from_confusion(method: &str, registry: &Registry, confusion: ConfusionMatrix) -> Result<Self> {
        verdict_flags(&confusion, registry)?;
        let (labels, fake) = Self::labels(registry);
        Self::from_labeled_confusion(method, labels, fake, confusion)
    }

    /// Same as [`EvalReport::from_confusion`] with explicit class labels and
    /// fake flags instead of a registry.
    pub fn from_labeled_confusion(
        method: &str,
        labels: Vec<String>,
        fake: Vec<bool>,
        confusion: ConfusionMatrix,
    ) -> Result<Self> {
        if labels.len() != confusion.classes() || fake.len() != confusion.classes() {
            return Err(Error::Evaluation("labels do not match the confusion matrix".into()));
        }
        Ok(Self {
            method: method.to_string(),
            totals: (0..confusion.classes()).map(|k| confusion.row_total(k)).collect(),
            detection_correct: detection_with(&confusion, &fake),
            binary: rollup_with(&confusion, &fake),
            labels,
            fake,
            multiclass: Some(MultiClassReport::new(confusion)),
        })
    }

    pub fn from_predictions(method: &str, registry: &Registry, truths: &[usize], preds: &[usize]) -> Result<Self> {
        Self::from_confusion(method, registry, build_confusion(truths, preds, registry.len())?)
    }

    /// Report for a detector that only says real or fake.
    pub fn from_verdicts(method: &str, registry: &Registry, truths: &[usize], preds: &[Verdict]) -> Result<Self> {
        if truths.len() != preds.len() {
            return Err(Error::Evaluation(format!(
                "{} ground-truth labels but {} predictions",
                truths.len(),
                preds.len()
            )));
        }
        let mut totals = vec![0u64; registry.len()];
        let mut detection_correct = vec![0u64; registry.len()];
        let mut truth_verdicts = Vec::with_capacity(truths.len());
        for (&t, &p) in truths.iter().zip(preds) {
            let v = registry.verdict(t)?;
            totals[t] += 1;
            detection_correct[t] += (v == p) as u64;
            truth_verdicts.push(v);
        }
        let (labels, fake) = Self::labels(registry);
        Ok(Self {
            method: method.to_string(),
            labels,
            fake,
            totals,
            detection_correct,
            binary: BinaryRollup::from_verdicts(&truth_verdicts, preds)?,
            multiclass: None,
        })
    }

    /// Rebuilds a verdict-only report from per-class counts.
    pub fn from_detection_counts(
        method: &str,
        labels: Vec<String>,
        fake: Vec<bool>,
        totals: Vec<u64>,
        detection_correct: Vec<u64>,
    ) -> Result<Self> {
        if labels.len() != fake.len() || labels.len() != totals.len() || labels.len() != detection_correct.len() {
            return Err(Error::Evaluation("per-class columns differ in length".into()));
        }
        let mut counts = [[0u64; 2]; 2];
        for ((&f, &n), &c) in fake.iter().zip(&totals).zip(&detection_correct) {
            if c > n {
                return Err(Error::Evaluation(format!("{c} correct out of {n}")));
            }
            let i = f as usize;
            counts[i][i] += c;
            counts[i][1 - i] += n - c;
        }
        Ok(Self {
            method: method.to_string(),
            labels,
            fake,
            totals,
            detection_correct,
            binary: BinaryRollup { counts },
            multiclass: None,
        })
    }

    /// Per-class share of correct real/fake verdicts.
    pub fn detection_accuracy(&self) -> Vec<Option<f64>> {
        self.detection_correct
            .iter()
            .zip(&self.totals)
            .map(|(&c, &n)| ratio(c, n))
            .collect()
    }
}
