//! Disparate-mistreatment audits across protected groups, and the
//! protected-attribute encoding used to debias training: the attribute is
//! an explicit feature (−1 male, 0 unknown, +1 female) while fitting and is
//! set to unknown for every row at prediction time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Protected;
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::sparse::CsrMatrix;

pub const DEFAULT_DISPARITY_THRESHOLD: f64 = 1.25;

/// One confusion matrix per group, all over the same ordered classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupedConfusion {
    pub groups: BTreeMap<String, ConfusionMatrix>,
}

impl GroupedConfusion {
    pub fn new(groups: BTreeMap<String, ConfusionMatrix>) -> Result<Self> {
        let mut iter = groups.values();
        if let Some(first) = iter.next() {
            if iter.any(|cm| cm.classes != first.classes) {
                return Err(Error::Data("groups disagree on class ordering".into()));
            }
        }
        Ok(GroupedConfusion { groups })
    }

    /// Builds per-group matrices from aligned truth/prediction/group lists.
    pub fn from_predictions<S: AsRef<str>, T: AsRef<str>, G: AsRef<str>>(
        truth: &[S],
        predicted: &[T],
        group: &[G],
        classes: &[String],
    ) -> Result<Self> {
        if truth.len() != group.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                found: group.len(),
            });
        }
        let mut rows: BTreeMap<&str, (Vec<&str>, Vec<&str>)> = BTreeMap::new();
        for ((t, p), g) in truth.iter().zip(predicted).zip(group) {
            let e = rows.entry(g.as_ref()).or_default();
            e.0.push(t.as_ref());
            e.1.push(p.as_ref());
        }
        let groups = rows
            .into_iter()
            .map(|(g, (t, p))| Ok((g.to_string(), crate::metrics::confusion_matrix(&t, &p, classes)?)))
            .collect::<Result<_>>()?;
        Self::new(groups)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: GroupedConfusion = serde_json::from_str(s)?;
        for cm in raw.groups.values() {
            ConfusionMatrix::new(cm.classes.clone(), cm.counts.clone())?;
        }
        Self::new(raw.groups)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRatio {
    pub class: String,
    pub true_count: u64,
    pub predicted_count: u64,
    /// `None` when the group has no true samples of the class.
    pub predicted_to_true: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAudit {
    pub group: String,
    pub per_class: Vec<ClassRatio>,
    /// Predicted positive, truly negative.
    pub false_positives: u64,
    /// Predicted negative, truly positive.
    pub false_negatives: u64,
    pub false_positive_rate: Option<f64>,
    pub false_negative_rate: Option<f64>,
    pub misclassification_rate: Option<f64>,
    /// `false_positives / false_negatives`
    pub false_error_ratio: Option<f64>,
}

impl GroupAudit {
    fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "false_error_ratio" => self.false_error_ratio,
            "false_positive_rate" => self.false_positive_rate,
            "false_negative_rate" => self.false_negative_rate,
            "misclassification_rate" => self.misclassification_rate,
            _ => None,
        }
    }
}

pub const AUDITED_METRICS: [&str; 4] = [
    "false_error_ratio",
    "false_positive_rate",
    "false_negative_rate",
    "misclassification_rate",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disparity {
    pub metric: String,
    pub group_a: String,
    pub group_b: String,
    /// `metric(a) / metric(b)`
    pub ratio: Option<f64>,
    /// `max(ratio, 1/ratio)`
    pub disparity: Option<f64>,
    /// Group with the larger metric value.
    pub larger_group: Option<String>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub positive_class: String,
    pub negative_class: String,
    pub threshold: f64,
    pub groups: Vec<GroupAudit>,
    pub disparities: Vec<Disparity>,
}

impl FairnessReport {
    pub fn disparity(&self, metric: &str, a: &str, b: &str) -> Option<&Disparity> {
        self.disparities.iter().find(|d| {
            d.metric == metric && ((d.group_a == a && d.group_b == b) || (d.group_a == b && d.group_b == a))
        })
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

fn audit_group(group: &str, cm: &ConfusionMatrix, pos: usize, neg: usize) -> GroupAudit {
    let rows = cm.row_totals();
    let cols = cm.column_totals();
    let per_class = cm
        .classes
        .iter()
        .enumerate()
        .map(|(k, class)| ClassRatio {
            class: class.clone(),
            true_count: rows[k],
            predicted_count: cols[k],
            predicted_to_true: ratio(cols[k] as f64, rows[k] as f64),
        })
        .collect();
    let fp = cm.counts[neg][pos];
    let fn_ = cm.counts[pos][neg];
    let total = cm.total() as f64;
    GroupAudit {
        group: group.to_string(),
        per_class,
        false_positives: fp,
        false_negatives: fn_,
        false_positive_rate: ratio(fp as f64, rows[neg] as f64),
        false_negative_rate: ratio(fn_ as f64, rows[pos] as f64),
        misclassification_rate: ratio(total - cm.trace() as f64, total),
        false_error_ratio: ratio(fp as f64, fn_ as f64),
    }
}

/// Audits a binary task across groups. Every pair of groups is compared on
/// each of [`AUDITED_METRICS`]; a pair is flagged when its disparity
/// exceeds `threshold`.
pub fn audit(grouped: &GroupedConfusion, positive_class: &str, threshold: f64) -> Result<FairnessReport> {
    if grouped.groups.len() < 2 {
        return Err(Error::Data(format!("audit needs at least 2 groups, found {}", grouped.groups.len())));
    }
    let first = grouped.groups.values().next().unwrap();
    if first.len() != 2 {
        return Err(Error::Data(format!("audit expects 2 classes, found {}", first.len())));
    }
    let pos = first
        .class_index(positive_class)
        .ok_or_else(|| Error::Data(format!("positive class {positive_class:?} not among {:?}", first.classes)))?;
    let neg = 1 - pos;
    let groups: Vec<GroupAudit> = grouped
        .groups
        .iter()
        .map(|(g, cm)| audit_group(g, cm, pos, neg))
        .collect();

    let mut disparities = Vec::new();
    for metric in AUDITED_METRICS {
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                let (a, b) = (&groups[i], &groups[j]);
                let r = match (a.metric(metric), b.metric(metric)) {
                    (Some(x), Some(y)) if y > 0.0 => Some(x / y),
                    _ => None,
                };
                let disparity = r.filter(|r| *r > 0.0).map(|r| r.max(1.0 / r));
                let larger_group = r.map(|r| if r >= 1.0 { a.group.clone() } else { b.group.clone() });
                disparities.push(Disparity {
                    metric: metric.to_string(),
                    group_a: a.group.clone(),
                    group_b: b.group.clone(),
                    ratio: r,
                    disparity,
                    larger_group,
                    flagged: disparity.is_some_and(|d| d > threshold),
                });
            }
        }
    }
    Ok(FairnessReport {
        positive_class: first.classes[pos].clone(),
        negative_class: first.classes[neg].clone(),
        threshold,
        groups,
        disparities,
    })
}

pub fn protected_code(p: Protected) -> f64 {
    match p {
        Protected::Male => -1.0,
        Protected::Unknown => 0.0,
        Protected::Female => 1.0,
    }
}

/// Appends the protected attribute as a trailing feature column.
pub fn encode_protected_train(x: &CsrMatrix, protected: &[Protected]) -> Result<CsrMatrix> {
    let codes: Vec<f64> = protected.iter().map(|&p| protected_code(p)).collect();
    x.append_column(&codes)
}

/// Appends the protected column with every row set to unknown (0).
pub fn encode_protected_test(x: &CsrMatrix) -> CsrMatrix {
    x.append_column(&vec![0.0; x.n_rows()])
        .expect("length matches by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(counts: [[u64; 2]; 2]) -> ConfusionMatrix {
        ConfusionMatrix::new(
            vec!["agnostic".into(), "atheist".into()],
            counts.iter().map(|r| r.to_vec()).collect(),
        )
        .unwrap()
    }

    fn grouped(men: [[u64; 2]; 2], women: [[u64; 2]; 2]) -> GroupedConfusion {
        let mut g = BTreeMap::new();
        g.insert("men".to_string(), cm(men));
        g.insert("women".to_string(), cm(women));
        GroupedConfusion::new(g).unwrap()
    }

    #[test]
    fn identical_groups_have_unit_disparity() {
        let g = grouped([[10, 3], [4, 12]], [[10, 3], [4, 12]]);
        let r = audit(&g, "atheist", DEFAULT_DISPARITY_THRESHOLD).unwrap();
        for d in &r.disparities {
            assert_eq!(d.disparity, Some(1.0), "{}", d.metric);
            assert!(!d.flagged);
        }
    }

    #[test]
    fn false_error_counts_follow_orientation() {
        let g = grouped([[36, 33], [28, 58]], [[86, 21], [34, 16]]);
        let r = audit(&g, "atheist", DEFAULT_DISPARITY_THRESHOLD).unwrap();
        let men = &r.groups[0];
        assert_eq!((men.false_positives, men.false_negatives), (33, 28));
        assert_eq!(men.per_class[0].predicted_to_true, Some(64.0 / 69.0));
        let d = r.disparity("false_error_ratio", "women", "men").unwrap();
        assert_eq!(d.larger_group.as_deref(), Some("men"));
        assert!(d.flagged);
    }

    #[test]
    fn undefined_ratios() {
        let g = grouped([[5, 0], [0, 0]], [[3, 1], [1, 3]]);
        let r = audit(&g, "atheist", DEFAULT_DISPARITY_THRESHOLD).unwrap();
        let men = &r.groups[0];
        assert_eq!(men.per_class[1].predicted_to_true, None);
        assert_eq!(men.false_negative_rate, None);
        assert_eq!(men.false_error_ratio, None);
        assert_eq!(r.disparity("false_error_ratio", "men", "women").unwrap().disparity, None);
    }

    #[test]
    fn audit_preconditions() {
        let mut one = BTreeMap::new();
        one.insert("men".to_string(), cm([[1, 0], [0, 1]]));
        let g = GroupedConfusion::new(one).unwrap();
        assert!(audit(&g, "atheist", 1.25).is_err());
        let g = grouped([[1, 0], [0, 1]], [[1, 0], [0, 1]]);
        assert!(audit(&g, "catholic", 1.25).is_err());
    }

    #[test]
    fn protected_encoding() {
        let x = CsrMatrix::from_dense(&[vec![0.5, 0.0], vec![0.0, 1.0], vec![0.3, 0.3]]);
        let train = encode_protected_train(&x, &[Protected::Male, Protected::Unknown, Protected::Female]).unwrap();
        assert_eq!(train.get(0, 2), -1.0);
        assert_eq!(train.get(1, 2), 0.0);
        assert_eq!(train.get(2, 2), 1.0);
        assert_eq!(train.drop_last_column(), x);
        let test = encode_protected_test(&x);
        assert!((0..3).all(|i| test.get(i, 2) == 0.0));
        assert_eq!(test.drop_last_column(), x);
    }

    #[test]
    fn grouped_json() {
        let g = grouped([[36, 33], [28, 58]], [[86, 21], [34, 16]]);
        let back = GroupedConfusion::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
        let bad = r#"{"groups":{"a":{"classes":["x","y"],"counts":[[1,2]]}}}"#;
        assert!(GroupedConfusion::from_json(bad).is_err());
    }
}
