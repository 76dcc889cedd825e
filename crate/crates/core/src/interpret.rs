//! Ranked word lists from linear model weights.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classify::OvOClassifier;
use crate::error::{Error, Result};
use crate::features::Vocabulary;
use crate::linmodel::LinearModel;
use crate::sparse::CsrMatrix;

pub const DEFAULT_LIST_LEN: usize = 55;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordWeight {
    pub token: String,
    /// Magnitude for the negative list.
    pub weight: f64,
    /// Training document frequency of the token.
    pub doc_freq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordList {
    pub task: String,
    pub k: usize,
    pub positive: Vec<WordWeight>,
    pub negative: Vec<WordWeight>,
    /// Set when either list is shorter than `k` (too few nonzero weights).
    pub truncated: bool,
    /// Weights were multiplied by each column's presence orientation.
    #[serde(default)]
    pub presence_oriented: bool,
}

fn check_space(model: &LinearModel, vocab: &Vocabulary) -> Result<()> {
    // a trailing protected-attribute column is allowed and never listed
    if model.dim() != vocab.len() && model.dim() != vocab.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: vocab.len(),
            found: model.dim(),
        });
    }
    Ok(())
}

/// Sign of each column's summed nonzero entries (+1 for empty columns).
///
/// As-printed tf-idf values are negative for almost every present token
/// (`1 + ln tf < 0` once `tf < 1/e`), so a positive weight then pushes the
/// score *down* when the token is used. Multiplying weights by this sign
/// turns them into the direction a token's presence moves the prediction.
pub fn presence_orientation(x: &CsrMatrix) -> Vec<f64> {
    x.tr_mul_vec(&vec![1.0; x.n_rows()])
        .into_iter()
        .map(|s| if s < 0.0 { -1.0 } else { 1.0 })
        .collect()
}

fn oriented(weights: &[f64], vocab: &Vocabulary, orientation: Option<&[f64]>) -> Result<Vec<f64>> {
    let w = &weights[..vocab.len()];
    match orientation {
        None => Ok(w.to_vec()),
        Some(o) if o.len() == vocab.len() => Ok(w.iter().zip(o).map(|(w, o)| w * o).collect()),
        Some(o) => Err(Error::DimensionMismatch {
            expected: vocab.len(),
            found: o.len(),
        }),
    }
}

/// Token indices with `sign · weight > 0`, largest first, ties by token.
fn ranked(weights: &[f64], vocab: &Vocabulary, sign: f64, k: usize) -> Vec<WordWeight> {
    let mut idx: Vec<usize> = (0..vocab.len()).filter(|&j| sign * weights[j] > 0.0).collect();
    idx.sort_by(|&a, &b| {
        (sign * weights[b])
            .partial_cmp(&(sign * weights[a]))
            .unwrap_or(Ordering::Equal)
            .then_with(|| vocab.tokens[a].cmp(&vocab.tokens[b]))
    });
    idx.truncate(k);
    idx.into_iter()
        .map(|j| WordWeight {
            token: vocab.tokens[j].clone(),
            weight: sign * weights[j],
            doc_freq: vocab.doc_freq[j],
        })
        .collect()
}

fn word_list(model: &LinearModel, vocab: &Vocabulary, k: usize, orientation: Option<&[f64]>) -> Result<WordList> {
    check_space(model, vocab)?;
    let weights = oriented(&model.weights, vocab, orientation)?;
    let positive = ranked(&weights, vocab, 1.0, k);
    let negative = ranked(&weights, vocab, -1.0, k);
    Ok(WordList {
        task: model.task.clone(),
        k,
        truncated: positive.len() < k || negative.len() < k,
        positive,
        negative,
        presence_oriented: orientation.is_some(),
    })
}

/// Top `k` tokens by signed weight in each direction.
pub fn top_words(model: &LinearModel, vocab: &Vocabulary, k: usize) -> Result<WordList> {
    word_list(model, vocab, k, None)
}

/// Like [`top_words`], ranking `weight · orientation` (see
/// [`presence_orientation`]).
pub fn top_words_oriented(model: &LinearModel, vocab: &Vocabulary, k: usize, orientation: &[f64]) -> Result<WordList> {
    word_list(model, vocab, k, Some(orientation))
}

/// Aligned plain-text columns: rank, token, weight, document frequency.
pub fn format_word_column(words: &[WordWeight]) -> String {
    let width = words.iter().map(|w| w.token.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:>4}  {:<width$}  {:>12}  {:>8}", "rank", "token", "weight", "doc_freq");
    for (i, w) in words.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:>4}  {:<width$}  {:>12.6}  {:>8.4}",
            i + 1,
            w.token,
            w.weight,
            w.doc_freq
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseWords {
    pub classes: Vec<String>,
    /// `cells[a][b]`: tokens most indicative of class `a` against class `b`.
    pub cells: Vec<Vec<Vec<String>>>,
}

/// For each pair model, the `top_n` tokens most favouring each side.
pub fn pairwise_word_matrix(ovo: &OvOClassifier, vocab: &Vocabulary, top_n: usize) -> Result<PairwiseWords> {
    pairwise(ovo, vocab, top_n, None)
}

/// Like [`pairwise_word_matrix`] with presence-oriented weights.
pub fn pairwise_word_matrix_oriented(
    ovo: &OvOClassifier,
    vocab: &Vocabulary,
    top_n: usize,
    orientation: &[f64],
) -> Result<PairwiseWords> {
    pairwise(ovo, vocab, top_n, Some(orientation))
}

fn pairwise(ovo: &OvOClassifier, vocab: &Vocabulary, top_n: usize, orientation: Option<&[f64]>) -> Result<PairwiseWords> {
    let c = ovo.classes.len();
    let mut cells = vec![vec![Vec::new(); c]; c];
    let index = |name: &str| {
        ovo.classes
            .iter()
            .position(|x| x == name)
            .ok_or_else(|| Error::Data(format!("pair references unknown class {name:?}")))
    };
    for pair in &ovo.pairs {
        check_space(&pair.model, vocab)?;
        let (ia, ib) = (index(&pair.a)?, index(&pair.b)?);
        let weights = oriented(&pair.model.weights, vocab, orientation)?;
        let toks = |list: Vec<WordWeight>| list.into_iter().map(|w| w.token).collect::<Vec<_>>();
        cells[ia][ib] = toks(ranked(&weights, vocab, 1.0, top_n));
        cells[ib][ia] = toks(ranked(&weights, vocab, -1.0, top_n));
    }
    Ok(PairwiseWords {
        classes: ovo.classes.clone(),
        cells,
    })
}
