//! ±1 ridge classification and one-vs-one majority voting.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmodel::{
    default_grid, fit_ridge, predict, select_lambda, CvOptions, CvPolicy, CvReport, LinearModel, RidgeOptions,
};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Each class carries equal total sample weight.
    #[default]
    InverseClass,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaPolicy {
    Fixed(f64),
    Cv {
        /// `None` uses [`default_grid`] on the training rows.
        #[serde(default)]
        grid: Option<Vec<f64>>,
        #[serde(default)]
        policy: CvPolicy,
        #[serde(default)]
        seed: u64,
    },
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        LambdaPolicy::Cv {
            grid: None,
            policy: CvPolicy::Auto,
            seed: 0,
        }
    }
}

/// Fits ridge at the policy's λ; returns the model and the CV report when
/// λ was selected.
pub fn fit_with_policy(
    x: &CsrMatrix,
    y: &[f64],
    weights: Option<&[f64]>,
    strata: Option<&[usize]>,
    policy: &LambdaPolicy,
) -> Result<(LinearModel, Option<CvReport>)> {
    match policy {
        LambdaPolicy::Fixed(lambda) => Ok((fit_ridge(x, y, *lambda, &RidgeOptions::weighted(weights))?, None)),
        LambdaPolicy::Cv { grid, policy, seed } => {
            let grid = grid.clone().unwrap_or_else(|| default_grid(x, weights));
            let opts = CvOptions {
                policy: *policy,
                seed: *seed,
                strata,
                sample_weights: weights,
                fit_intercept: true,
            };
            let report = select_lambda(x, y, &grid, &opts)?;
            let model = fit_ridge(x, y, report.chosen, &RidgeOptions::weighted(weights))?;
            Ok((model, Some(report)))
        }
    }
}

/// Per-sample weights for class indices in `0..n_classes`:
/// `n / (n_classes · n_class(i))` for inverse-class, 1 for uniform.
pub fn class_weights(class_of: &[usize], n_classes: usize, weighting: Weighting) -> Vec<f64> {
    match weighting {
        Weighting::Uniform => vec![1.0; class_of.len()],
        Weighting::InverseClass => {
            let mut counts = vec![0usize; n_classes];
            for &c in class_of {
                counts[c] += 1;
            }
            let n = class_of.len() as f64;
            class_of
                .iter()
                .map(|&c| n / (n_classes as f64 * counts[c] as f64))
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryClassifier {
    /// Encoded +1; the lexicographically smaller class when fitted here.
    pub positive: String,
    /// Encoded −1.
    pub negative: String,
    pub model: LinearModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvReport>,
}

impl BinaryClassifier {
    pub fn decision_values(&self, x: &CsrMatrix) -> Result<Vec<f64>> {
        predict(&self.model, x)
    }
}

fn fit_two_classes(
    x: &CsrMatrix,
    is_positive: &[bool],
    positive: &str,
    negative: &str,
    policy: &LambdaPolicy,
    weighting: Weighting,
) -> Result<BinaryClassifier> {
    for (class, flag) in [(positive, true), (negative, false)] {
        if !is_positive.contains(&flag) {
            return Err(Error::Data(format!("class {class:?} has no training samples")));
        }
    }
    let class_of: Vec<usize> = is_positive.iter().map(|&p| usize::from(!p)).collect();
    let y: Vec<f64> = is_positive.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
    let weights = class_weights(&class_of, 2, weighting);
    let (model, cv) = fit_with_policy(x, &y, Some(&weights), Some(&class_of), policy)?;
    Ok(BinaryClassifier {
        positive: positive.to_string(),
        negative: negative.to_string(),
        model,
        cv,
    })
}

/// Fits a ±1 ridge classifier on exactly two categories.
pub fn fit_binary<S: AsRef<str>>(
    x: &CsrMatrix,
    labels: &[S],
    policy: &LambdaPolicy,
    weighting: Weighting,
) -> Result<BinaryClassifier> {
    if labels.len() != x.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: x.n_rows(),
            found: labels.len(),
        });
    }
    let classes = sorted_classes(labels);
    match classes.as_slice() {
        [a, b] => {
            let is_pos: Vec<bool> = labels.iter().map(|l| l.as_ref() == a).collect();
            fit_two_classes(x, &is_pos, a, b, policy, weighting)
        }
        [only] => Err(Error::Data(format!(
            "binary task needs two classes; only {only:?} has samples"
        ))),
        other => Err(Error::Data(format!("binary task needs two classes, found {}", other.len()))),
    }
}

/// Decision value at or above `threshold` selects the positive class.
pub fn predict_binary(clf: &BinaryClassifier, x: &CsrMatrix, threshold: f64) -> Result<Vec<String>> {
    Ok(clf
        .decision_values(x)?
        .into_iter()
        .map(|v| {
            if v >= threshold {
                clf.positive.clone()
            } else {
                clf.negative.clone()
            }
        })
        .collect())
}

fn sorted_classes<S: AsRef<str>>(labels: &[S]) -> Vec<String> {
    let mut classes: Vec<String> = labels.iter().map(|l| l.as_ref().to_string()).collect();
    classes.sort();
    classes.dedup();
    classes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    /// Favoured by positive decision values.
    pub a: String,
    pub b: String,
    pub model: LinearModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvReport>,
}

impl PairModel {
    /// The same classifier with the class orientation reversed.
    pub fn flipped(&self) -> Self {
        PairModel {
            a: self.b.clone(),
            b: self.a.clone(),
            model: self.model.negated(),
            cv: self.cv.clone(),
        }
    }

    /// Decision value re-oriented so that positive favours `class`.
    pub fn favouring(&self, class: &str, value: f64) -> f64 {
        if class == self.a {
            value
        } else {
            -value
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvOClassifier {
    pub classes: Vec<String>,
    pub weighting: Weighting,
    pub pairs: Vec<PairModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTally {
    /// Indexed like `OvOClassifier::classes`.
    pub votes: Vec<usize>,
    /// Sum of decision values oriented towards each class.
    pub margins: Vec<f64>,
}

/// Trains one classifier per unordered class pair on that pair's rows only,
/// each with its own λ selection and class weighting.
pub fn fit_ovo<S: AsRef<str> + Sync>(
    x: &CsrMatrix,
    labels: &[S],
    policy: &LambdaPolicy,
    weighting: Weighting,
) -> Result<OvOClassifier> {
    if labels.len() != x.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: x.n_rows(),
            found: labels.len(),
        });
    }
    let classes = sorted_classes(labels);
    if classes.len() < 2 {
        return Err(Error::Data(format!("one-vs-one needs at least 2 classes, found {}", classes.len())));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l.as_ref()).or_default() += 1;
    }
    if let Some((class, n)) = counts.iter().find(|(_, n)| **n < 2) {
        return Err(Error::Data(format!("class {class:?} has {n} training sample(s); need at least 2")));
    }

    let mut pair_index = Vec::new();
    for i in 0..classes.len() {
        for j in i + 1..classes.len() {
            pair_index.push((i, j));
        }
    }
    let pairs = pair_index
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (&classes[i], &classes[j]);
            let rows: Vec<usize> = (0..labels.len())
                .filter(|&r| labels[r].as_ref() == a || labels[r].as_ref() == b)
                .collect();
            let is_pos: Vec<bool> = rows.iter().map(|&r| labels[r].as_ref() == a).collect();
            let sub = x.select_rows(&rows);
            let clf = fit_two_classes(&sub, &is_pos, a, b, policy, weighting)?;
            Ok(PairModel {
                a: clf.positive,
                b: clf.negative,
                model: clf.model,
                cv: clf.cv,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OvOClassifier {
        classes,
        weighting,
        pairs,
    })
}

/// Majority vote over pair models. A pair votes for `a` when its decision
/// value is positive, for `b` when negative, and for the lexicographically
/// smaller class at exactly zero. Ties in votes go to the larger summed
/// margin, then to the lexicographically smaller class.
pub fn predict_ovo(clf: &OvOClassifier, x: &CsrMatrix) -> Result<(Vec<String>, Vec<VoteTally>)> {
    let c = clf.classes.len();
    let index: BTreeMap<&str, usize> = clf.classes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let lookup = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Data(format!("pair model references unknown class {name:?}")))
    };
    let mut tallies = vec![
        VoteTally {
            votes: vec![0; c],
            margins: vec![0.0; c],
        };
        x.n_rows()
    ];
    for pair in &clf.pairs {
        let (ia, ib) = (lookup(&pair.a)?, lookup(&pair.b)?);
        let values = predict(&pair.model, x)?;
        for (tally, v) in tallies.iter_mut().zip(values) {
            let winner = if v > 0.0 {
                ia
            } else if v < 0.0 {
                ib
            } else {
                ia.min(ib)
            };
            tally.votes[winner] += 1;
            tally.margins[ia] += v;
            tally.margins[ib] -= v;
        }
    }
    let labels = tallies
        .iter()
        .map(|t| {
            let mut best = 0;
            for k in 1..c {
                let better = t.votes[k] > t.votes[best]
                    || (t.votes[k] == t.votes[best] && t.margins[k] > t.margins[best]);
                if better {
                    best = k;
                }
            }
            clf.classes[best].clone()
        })
        .collect();
    Ok((labels, tallies))
}
