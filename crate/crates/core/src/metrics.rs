//! Evaluation statistics: explained variance, confusion matrices, accuracy,
//! support-weighted F1, mode ratio and homogeneity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// `1 − Var(y − ŷ) / Var(y)` with population variances.
pub fn explained_variance(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            found: y_hat.len(),
        });
    }
    if y.len() < 2 {
        return Err(Error::Data("explained variance needs at least 2 samples".into()));
    }
    let var_y = population_variance(y);
    if var_y == 0.0 {
        return Err(Error::Data("explained variance undefined: Var(y) = 0".into()));
    }
    let resid: Vec<f64> = y.iter().zip(y_hat).map(|(a, b)| a - b).collect();
    Ok(1.0 - population_variance(&resid) / var_y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionScore {
    pub n: usize,
    pub ev: f64,
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = classes.len();
        if counts.len() != c || counts.iter().any(|r| r.len() != c) {
            return Err(Error::Data(format!("confusion matrix must be {c}×{c}")));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.len()).map(|i| self.counts[i][i]).sum()
    }

    /// True-class supports.
    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Predicted-class totals.
    pub fn column_totals(&self) -> Vec<u64> {
        (0..self.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    /// Reorders classes: new position `k` holds old class `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        ConfusionMatrix {
            classes: perm.iter().map(|&i| self.classes[i].clone()).collect(),
            counts: perm
                .iter()
                .map(|&i| perm.iter().map(|&j| self.counts[i][j]).collect())
                .collect(),
        }
    }

    /// Per-class (precision, recall, F1); zero denominators give 0.
    pub fn per_class(&self) -> Vec<ClassScore> {
        let rows = self.row_totals();
        let cols = self.column_totals();
        (0..self.len())
            .map(|k| {
                let tp = self.counts[k][k] as f64;
                let precision = if cols[k] > 0 { tp / cols[k] as f64 } else { 0.0 };
                let recall = if rows[k] > 0 { tp / rows[k] as f64 } else { 0.0 };
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassScore {
                    class: self.classes[k].clone(),
                    support: rows[k],
                    predicted: cols[k],
                    precision,
                    recall,
                    f1,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub support: u64,
    pub predicted: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn confusion_matrix<S: AsRef<str>, T: AsRef<str>>(
    truth: &[S],
    predicted: &[T],
    classes: &[String],
) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let find = |label: &str| {
        index
            .get(label)
            .copied()
            .ok_or_else(|| Error::Data(format!("label {label:?} is not one of the classes")))
    };
    let mut counts = vec![vec![0u64; classes.len()]; classes.len()];
    for (t, p) in truth.iter().zip(predicted) {
        counts[find(t.as_ref())?][find(p.as_ref())?] += 1;
    }
    ConfusionMatrix::new(classes.to_vec(), counts)
}

/// `trace / total`; 0 for an empty matrix.
pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    if total == 0 {
        return 0.0;
    }
    cm.trace() as f64 / total as f64
}

/// Per-class F1 averaged with weights `support_c / total`.
pub fn weighted_f1(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    if total == 0 {
        return 0.0;
    }
    cm.per_class()
        .iter()
        .map(|s| s.support as f64 / total as f64 * s.f1)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    /// Share of the most common class.
    pub mode_ratio: f64,
    /// `Σ p_c²`: chance that two draws (with replacement) share a class.
    pub homogeneity: f64,
}

pub fn class_stats_from_counts(counts: &[u64]) -> Result<ClassStats> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Data("class statistics of an empty label set".into()));
    }
    let t = total as f64;
    Ok(ClassStats {
        mode_ratio: counts.iter().copied().max().unwrap_or(0) as f64 / t,
        homogeneity: counts.iter().map(|&c| (c as f64 / t).powi(2)).sum(),
    })
}

pub fn class_stats<S: AsRef<str>>(labels: &[S]) -> Result<ClassStats> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for l in labels {
        *counts.entry(l.as_ref()).or_default() += 1;
    }
    class_stats_from_counts(&counts.into_values().collect::<Vec<_>>())
}

/// Same statistics from class proportions that sum to 1.
pub fn class_stats_from_proportions(p: &[f64]) -> ClassStats {
    ClassStats {
        mode_ratio: p.iter().copied().fold(0.0, f64::max),
        homogeneity: p.iter().map(|v| v * v).sum(),
    }
}
