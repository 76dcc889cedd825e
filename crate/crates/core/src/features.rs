//! Vocabulary construction and the tf-idf transform.
//!
//! For a user with in-vocabulary counts `N_i·`, the weight of token `j` is
//!
//! ```text
//! W_ij = (1 + ln(N_ij / Σ_j' N_ij')) / d_j      (N_ij > 0)
//! ```
//!
//! where `d_j` is the fraction of training users whose text contains token
//! `j`. Rows are then scaled to unit Euclidean norm.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, UserRecord};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocabParams {
    pub k: usize,
    pub min_users: usize,
    pub max_frac: f64,
}

impl Default for VocabParams {
    fn default() -> Self {
        VocabParams {
            k: 40_000,
            min_users: 10,
            max_frac: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub tokens: Vec<String>,
    pub doc_freq: Vec<f64>,
    #[serde(default)]
    pub user_counts: Vec<usize>,
    pub params: VocabParams,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(
        tokens: Vec<String>,
        doc_freq: Vec<f64>,
        user_counts: Vec<usize>,
        params: VocabParams,
    ) -> Result<Self> {
        if tokens.len() != doc_freq.len() {
            return Err(Error::DimensionMismatch {
                expected: tokens.len(),
                found: doc_freq.len(),
            });
        }
        if let Some(d) = doc_freq.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
            return Err(Error::Data(format!("document frequency {d} outside (0, 1]")));
        }
        let mut v = Vocabulary {
            tokens,
            doc_freq,
            user_counts,
            params,
            index: HashMap::new(),
        };
        v.rebuild_index()?;
        Ok(v)
    }

    fn rebuild_index(&mut self) -> Result<()> {
        self.index = HashMap::with_capacity(self.tokens.len());
        for (i, t) in self.tokens.iter().enumerate() {
            if self.index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// SHA-256 over the ordered tokens and their document frequencies.
    pub fn hash(&self) -> String {
        let mut bytes = Vec::new();
        for (t, d) in self.tokens.iter().zip(&self.doc_freq) {
            bytes.extend_from_slice(t.as_bytes());
            bytes.push(0);
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        crate::sha256_hex(&bytes)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut v: Vocabulary = serde_json::from_str(s)?;
        if v.tokens.len() != v.doc_freq.len() {
            return Err(Error::Data("vocabulary tokens/doc_freq length mismatch".into()));
        }
        v.rebuild_index()?;
        Ok(v)
    }
}

#[derive(Default)]
struct TokenStats {
    users: usize,
    total: u64,
}

fn merge_stats(mut a: HashMap<String, TokenStats>, b: HashMap<String, TokenStats>) -> HashMap<String, TokenStats> {
    for (tok, s) in b {
        let e = a.entry(tok).or_default();
        e.users += s.users;
        e.total += s.total;
    }
    a
}

/// Keeps tokens used by at least `min_users` training users and by no more
/// than `max_frac` of them, ranked by distinct users, then total count,
/// then lexicographically, truncated to `k`.
pub fn build_vocabulary(train: &[&UserRecord], params: VocabParams) -> Result<Vocabulary> {
    if train.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from zero users".into()));
    }
    let n = train.len();
    let stats = train
        .par_iter()
        .map(|r| {
            let mut local: HashMap<String, u64> = HashMap::new();
            for t in tokenize(&r.text) {
                *local.entry(t).or_default() += 1;
            }
            local
                .into_iter()
                .map(|(t, c)| (t, TokenStats { users: 1, total: c }))
                .collect::<HashMap<_, _>>()
        })
        .reduce(HashMap::new, merge_stats);

    let mut kept: Vec<(String, TokenStats)> = stats
        .into_iter()
        .filter(|(_, s)| {
            s.users >= params.min_users && s.users as f64 / n as f64 <= params.max_frac + 1e-12
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary {
            min_users: params.min_users,
            max_frac: params.max_frac,
        });
    }
    kept.sort_by(|(ta, a), (tb, b)| {
        b.users
            .cmp(&a.users)
            .then(b.total.cmp(&a.total))
            .then_with(|| ta.cmp(tb))
    });
    kept.truncate(params.k);

    let doc_freq = kept.iter().map(|(_, s)| s.users as f64 / n as f64).collect();
    let user_counts = kept.iter().map(|(_, s)| s.users).collect();
    let tokens = kept.into_iter().map(|(t, _)| t).collect();
    Vocabulary::new(tokens, doc_freq, user_counts, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub matrix: CsrMatrix,
    pub row_ids: Vec<String>,
    pub normalized: bool,
    /// Rows with no nonzero entry after the transform.
    #[serde(default)]
    pub zero_rows: Vec<usize>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.n_cols()
    }
}

/// Raw in-vocabulary token counts; out-of-vocabulary tokens are ignored.
pub fn count_matrix(records: &[&UserRecord], vocab: &Vocabulary) -> FeatureMatrix {
    let rows: Vec<Vec<(usize, f64)>> = records
        .par_iter()
        .map(|r| {
            let mut counts: HashMap<usize, f64> = HashMap::new();
            for t in tokenize(&r.text) {
                if let Some(j) = vocab.index_of(&t) {
                    *counts.entry(j).or_default() += 1.0;
                }
            }
            counts.into_iter().collect()
        })
        .collect();
    let matrix = CsrMatrix::from_rows(vocab.len(), rows).expect("vocabulary indices in range");
    let zero_rows = (0..matrix.n_rows()).filter(|&i| matrix.row(i).0.is_empty()).collect();
    FeatureMatrix {
        matrix,
        row_ids: records.iter().map(|r| r.user_id.clone()).collect(),
        normalized: false,
        zero_rows,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TfMode {
    /// `(1 + ln(N_ij / Σ N_i·)) / d_j`
    #[default]
    AsPrinted,
    /// `(1 + ln N_ij) / d_j`
    SublinearCount,
    /// `ln(1 + N_ij) / d_j`
    Log1p,
}

/// Applies the tf-idf weighting to raw counts and scales each row to unit
/// norm. `vocab.doc_freq` must come from the training users; it is reused
/// unchanged for test rows.
pub fn tfidf_transform(counts: &FeatureMatrix, vocab: &Vocabulary, mode: TfMode) -> Result<FeatureMatrix> {
    if counts.normalized {
        return Err(Error::Data("tfidf_transform expects raw counts".into()));
    }
    if counts.n_cols() != vocab.len() {
        return Err(Error::DimensionMismatch {
            expected: vocab.len(),
            found: counts.n_cols(),
        });
    }
    let mut matrix = counts.matrix.clone();
    let n = matrix.n_rows();
    let transformed: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (idx, vals) = counts.matrix.row(i);
            let total: f64 = vals.iter().sum();
            let mut row: Vec<f64> = idx
                .iter()
                .zip(vals)
                .map(|(&j, &c)| {
                    let tf = match mode {
                        TfMode::AsPrinted => 1.0 + (c / total).ln(),
                        TfMode::SublinearCount => 1.0 + c.ln(),
                        TfMode::Log1p => c.ln_1p(),
                    };
                    tf / vocab.doc_freq[j]
                })
                .collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            row
        })
        .collect();
    let mut zero_rows = Vec::new();
    for (i, row) in transformed.into_iter().enumerate() {
        if row.iter().all(|v| *v == 0.0) {
            zero_rows.push(i);
        }
        matrix.row_values_mut(i).copy_from_slice(&row);
    }
    Ok(FeatureMatrix {
        matrix,
        row_ids: counts.row_ids.clone(),
        normalized: true,
        zero_rows,
    })
}

/// Counts then tf-idf in one step.
pub fn featurize(records: &[&UserRecord], vocab: &Vocabulary, mode: TfMode) -> Result<FeatureMatrix> {
    tfidf_transform(&count_matrix(records, vocab), vocab, mode)
}
