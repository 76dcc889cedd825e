//! User records, tokenization, filtering, label pooling and train/test splits.
//!
//! The on-disk corpus is JSON lines, one user per line:
//!
//! ```text
//! {"user_id":"u1","statuses":["hi there","bye"],"labels":{"gender":"female","iq":112},"protected":"female"}
//! ```
//!
//! `statuses` (joined with single spaces) or `text` supplies the user's text.
//! Label values are either numbers (continuous traits) or strings (categories).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercased maximal runs of ASCII letters and digits. Everything else,
/// including apostrophes and non-ASCII letters, separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .collect()
}

/// Token count without allocating the tokens.
pub fn count_tokens(text: &str) -> usize {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelValue {
    Real(f64),
    Category(String),
}

impl LabelValue {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            LabelValue::Real(v) => Some(*v),
            LabelValue::Category(_) => None,
        }
    }

    /// Category name; numeric labels are rendered with their shortest
    /// round-tripping decimal form.
    pub fn as_category(&self) -> String {
        match self {
            LabelValue::Real(v) => v.to_string(),
            LabelValue::Category(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protected {
    Male,
    Female,
    Unknown,
}

impl Protected {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Some(Protected::Male),
            "female" | "f" => Some(Protected::Female),
            "unknown" | "" => Some(Protected::Unknown),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Protected::Male => "male",
            Protected::Female => "female",
            Protected::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Protected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub user_id: String,
    pub text: String,
    pub word_count: usize,
    pub labels: BTreeMap<String, LabelValue>,
    pub protected: Option<Protected>,
}

impl UserRecord {
    pub fn new(
        user_id: impl Into<String>,
        text: impl Into<String>,
        labels: BTreeMap<String, LabelValue>,
        protected: Option<Protected>,
    ) -> Self {
        let text = text.into();
        UserRecord {
            user_id: user_id.into(),
            word_count: count_tokens(&text),
            text,
            labels,
            protected,
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.text)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    user_id: String,
    #[serde(default)]
    statuses: Option<Vec<String>>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    labels: BTreeMap<String, LabelValue>,
    #[serde(default)]
    protected: Option<String>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    user_id: &'a str,
    text: &'a str,
    labels: &'a BTreeMap<String, LabelValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    protected: Option<Protected>,
}

fn parse_line(line: &str, line_no: usize) -> Result<UserRecord> {
    let parse_err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    let text = match (raw.statuses, raw.text) {
        (Some(statuses), None) => statuses.join(" "),
        (None, Some(text)) => text,
        (Some(_), Some(_)) => return Err(parse_err("both `statuses` and `text` given".into())),
        (None, None) => return Err(parse_err("missing `statuses` or `text`".into())),
    };
    let protected = match raw.protected {
        None => None,
        Some(p) => Some(
            Protected::parse(&p)
                .ok_or_else(|| parse_err(format!("unknown protected value {p:?}")))?,
        ),
    };
    Ok(UserRecord::new(raw.user_id, text, raw.labels, protected))
}

/// Reads a JSON-lines corpus. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<UserRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_line(&line, line_no)?;
        if !seen.insert(record.user_id.clone()) {
            return Err(Error::DuplicateUser(record.user_id));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn ingest_corpus(path: &Path) -> Result<Vec<UserRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file))
}

/// Writes records in the corpus format (using the `text` field).
pub fn write_corpus<W: Write>(mut writer: W, records: &[UserRecord]) -> Result<()> {
    for r in records {
        let out = RecordOut {
            user_id: &r.user_id,
            text: &r.text,
            labels: &r.labels,
            protected: r.protected,
        };
        serde_json::to_writer(&mut writer, &out)?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::io("<corpus writer>", e))?;
    }
    Ok(())
}

/// Keeps users with strictly more than `min_words` tokens.
pub fn filter_min_words(records: Vec<UserRecord>, min_words: usize) -> Vec<UserRecord> {
    records
        .into_iter()
        .filter(|r| r.word_count > min_words)
        .collect()
}

/// Maps each record's `label` category through `mapping`. Records without
/// the label, or whose category has no mapping, are dropped.
pub fn pool_labels(
    records: Vec<UserRecord>,
    label: &str,
    mapping: &BTreeMap<String, String>,
) -> Vec<UserRecord> {
    records
        .into_iter()
        .filter_map(|mut r| {
            let category = r.labels.get(label)?.as_category();
            let pooled = mapping.get(&category)?.clone();
            r.labels
                .insert(label.to_string(), LabelValue::Category(pooled));
            Some(r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

impl SplitAssignment {
    /// Splits records into (train, test), each in original record order.
    pub fn partition<'a>(
        &self,
        records: &'a [UserRecord],
    ) -> Result<(Vec<&'a UserRecord>, Vec<&'a UserRecord>)> {
        let by_id: HashMap<&str, &UserRecord> =
            records.iter().map(|r| (r.user_id.as_str(), r)).collect();
        let lookup = |ids: &[String]| -> Result<Vec<&'a UserRecord>> {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::Data(format!("split references unknown user {id:?}")))
                })
                .collect()
        };
        Ok((lookup(&self.train_ids)?, lookup(&self.test_ids)?))
    }
}

/// Training set size for `n` users: `round(ratio * n)`, kept inside `[1, n-1]`.
pub fn train_size(n: usize, ratio: f64) -> usize {
    let raw = (ratio * n as f64).round() as usize;
    raw.clamp(1, n - 1)
}

/// Seeded random user-level split. Both id lists keep record order.
pub fn split_train_test(records: &[UserRecord], ratio: f64, seed: u64) -> Result<SplitAssignment> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("train ratio {ratio} outside (0, 1)")));
    }
    let n = records.len();
    if n < 2 {
        return Err(Error::Data(format!("cannot split {n} record(s); need at least 2")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut in_train = vec![false; n];
    for &i in &order[..train_size(n, ratio)] {
        in_train[i] = true;
    }
    let (mut train_ids, mut test_ids) = (Vec::new(), Vec::new());
    for (r, &train) in records.iter().zip(&in_train) {
        if train {
            train_ids.push(r.user_id.clone());
        } else {
            test_ids.push(r.user_id.clone());
        }
    }
    Ok(SplitAssignment {
        train_ids,
        test_ids,
        seed,
    })
}
