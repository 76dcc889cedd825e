//! Staged experiment driver.
//!
//! Each stage reads the previous stage's files from the output directory
//! and writes its own, so `run` is exactly the stages executed in order.
//! Reports embed the resolved config and the corpus/vocabulary hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::classify::{
    fit_binary, fit_ovo, fit_with_policy, predict_binary, predict_ovo, BinaryClassifier, LambdaPolicy,
    OvOClassifier, VoteTally, Weighting,
};
use crate::corpus::{
    filter_min_words, pool_labels, read_corpus, split_train_test, write_corpus, LabelValue, Protected,
    SplitAssignment, UserRecord,
};
use crate::error::{Error, Result};
use crate::fairness::{audit, encode_protected_test, encode_protected_train, FairnessReport, GroupedConfusion, DEFAULT_DISPARITY_THRESHOLD};
use crate::features::{build_vocabulary, featurize, FeatureMatrix, TfMode, VocabParams, Vocabulary};
use crate::interpret::{
    format_word_column, pairwise_word_matrix_oriented, presence_orientation, top_words_oriented, PairwiseWords, WordList,
};
use crate::linmodel::{predict, CvReport, LinearModel};
use crate::metrics::{accuracy, class_stats, confusion_matrix, explained_variance, weighted_f1, ClassScore, ClassStats, ConfusionMatrix};
use crate::sha256_hex;

pub const SEED_ENV: &str = "TRAITLENS_SEED";

pub const RECORDS_FILE: &str = "records.jsonl";
pub const INGEST_FILE: &str = "ingest.json";
pub const SPLIT_FILE: &str = "split.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const FEATURES_FILE: &str = "features.json";
pub const MODEL_FILE: &str = "model.json";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFUSION_FILE: &str = "confusion.json";
pub const WORDS_POS_FILE: &str = "words_pos.txt";
pub const WORDS_NEG_FILE: &str = "words_neg.txt";
pub const WORDS_FILE: &str = "words.json";
pub const PAIRWISE_FILE: &str = "pairwise_words.json";
pub const FAIRNESS_FILE: &str = "fairness.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Binary,
    Multiclass,
}

/// What to do with the protected attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtectedMode {
    #[default]
    None,
    /// Report per-group error statistics.
    Audit,
    /// Append the attribute as a feature for training, zero it for
    /// prediction, and audit.
    Debias,
}

fn default_vocab_k() -> usize {
    VocabParams::default().k
}
fn default_min_users() -> usize {
    VocabParams::default().min_users
}
fn default_max_frac() -> f64 {
    VocabParams::default().max_frac
}
fn default_min_words() -> usize {
    500
}
fn default_train_ratio() -> f64 {
    0.8
}
fn default_top_k() -> usize {
    crate::interpret::DEFAULT_LIST_LEN
}
fn default_top_n() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: String,
    /// Label used for training.
    pub label: String,
    /// Label used as ground truth for evaluation; defaults to `label`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_label: Option<String>,
    pub kind: TaskKind,
    /// Category renaming applied to `label` (and `eval_label`); unmapped
    /// users are dropped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<BTreeMap<String, String>>,
    #[serde(default = "default_vocab_k")]
    pub vocab_k: usize,
    #[serde(default = "default_min_users")]
    pub min_users: usize,
    #[serde(default = "default_max_frac")]
    pub max_frac: f64,
    #[serde(default = "default_min_words")]
    pub min_words: usize,
    #[serde(default = "default_train_ratio")]
    pub train_ratio: f64,
    #[serde(default)]
    pub tf_mode: TfMode,
    /// For cross-validated policies the fold seed is always `seed`.
    #[serde(default)]
    pub lambda: LambdaPolicy,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default)]
    pub protected: ProtectedMode,
    /// Class treated as positive in the fairness audit; defaults to the
    /// classifier's positive class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_class: Option<String>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_top_n")]
    pub pairwise_top_n: usize,
    /// Unset means `TRAITLENS_SEED`, then 0.
    #[serde(default)]
    pub seed: Option<u64>,
    pub input: PathBuf,
    pub out: PathBuf,
}

impl ExperimentConfig {
    /// Parses a config document; any problem is a configuration error.
    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Fills the seed and checks value ranges.
    pub fn resolve(mut self) -> Result<Self> {
        let seed = match self.seed {
            Some(s) => s,
            None => match std::env::var(SEED_ENV) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?,
                Err(_) => 0,
            },
        };
        self.seed = Some(seed);
        if let LambdaPolicy::Cv { seed: cv_seed, .. } = &mut self.lambda {
            *cv_seed = seed;
        }
        let bad = |m: String| Err(Error::Config(m));
        if self.task.is_empty() || self.label.is_empty() {
            return bad("task and label must be non-empty".into());
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return bad(format!("train_ratio {} outside (0, 1)", self.train_ratio));
        }
        if self.vocab_k == 0 || !(self.max_frac > 0.0 && self.max_frac <= 1.0) {
            return bad("vocab_k must be positive and max_frac in (0, 1]".into());
        }
        if self.top_k == 0 || self.pairwise_top_n == 0 {
            return bad("top_k and pairwise_top_n must be positive".into());
        }
        match &self.lambda {
            LambdaPolicy::Fixed(l) if !(*l >= 0.0 && l.is_finite()) => return bad(format!("lambda {l} must be finite and >= 0")),
            LambdaPolicy::Cv { grid: Some(g), .. } if g.is_empty() || g.iter().any(|l| !(*l > 0.0 && l.is_finite())) => {
                return bad("lambda grid must be non-empty and positive".into())
            }
            _ => {}
        }
        if self.protected != ProtectedMode::None && self.kind != TaskKind::Binary {
            return bad("protected-attribute auditing requires a binary task".into());
        }
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn truth_label(&self) -> &str {
        self.eval_label.as_deref().unwrap_or(&self.label)
    }

    pub fn vocab_params(&self) -> VocabParams {
        VocabParams {
            k: self.vocab_k,
            min_users: self.min_users,
            max_frac: self.max_frac,
        }
    }
}

/// Files written by one invocation; removed again if it fails.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if !self.written.contains(&path) {
            self.written.push(path.clone());
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn discard(self) {
        for p in self.written {
            let _ = fs::remove_file(p);
        }
    }
}

/// Runs `f` against a fresh [`Outputs`] for `dir`, deleting whatever it
/// wrote when it fails.
pub fn with_outputs<T>(dir: &Path, f: impl FnOnce(&mut Outputs) -> Result<T>) -> Result<T> {
    let mut out = Outputs::new(dir)?;
    match f(&mut out) {
        Ok(v) => Ok(v),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

fn read_json<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn load_records(dir: &Path) -> Result<Vec<UserRecord>> {
    let path = dir.join(RECORDS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    read_corpus(&bytes[..])
}

/// Envelope shared by every JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub config: ExperimentConfig,
    pub corpus_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_sha256: Option<String>,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub corpus_sha256: String,
    pub n_input: usize,
    pub n_after_word_filter: usize,
    pub n_labeled: usize,
    pub n_train: usize,
    pub n_test: usize,
}

fn label_ok(r: &UserRecord, label: &str, kind: TaskKind) -> bool {
    matches!(
        (r.labels.get(label), kind),
        (Some(LabelValue::Real(_)), TaskKind::Regression) | (Some(_), TaskKind::Binary | TaskKind::Multiclass)
    )
}

/// Reads the corpus, applies the word filter and pooling, keeps users that
/// carry the label(s), and splits.
pub fn stage_ingest(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<IngestSummary> {
    let bytes = fs::read(&cfg.input).map_err(|e| Error::io(&cfg.input, e))?;
    let corpus_sha256 = sha256_hex(&bytes);
    let records = read_corpus(&bytes[..])?;
    let n_input = records.len();
    let mut records = filter_min_words(records, cfg.min_words);
    let n_after_word_filter = records.len();
    if let Some(map) = &cfg.pooling {
        records = pool_labels(records, &cfg.label, map);
        if cfg.truth_label() != cfg.label {
            records = pool_labels(records, cfg.truth_label(), map);
        }
    }
    for label in [cfg.label.as_str(), cfg.truth_label()] {
        if records.iter().any(|r| r.labels.contains_key(label) && !label_ok(r, label, cfg.kind)) {
            return Err(Error::Data(format!("label {label:?} must be numeric for a regression task")));
        }
        records.retain(|r| label_ok(r, label, cfg.kind));
    }
    if records.len() < 2 {
        return Err(Error::Data(format!(
            "{} user(s) with label {:?} after filtering; need at least 2",
            records.len(),
            cfg.label
        )));
    }
    let split = split_train_test(&records, cfg.train_ratio, cfg.seed())?;

    let mut buf = Vec::new();
    write_corpus(&mut buf, &records)?;
    out.write(RECORDS_FILE, &buf)?;
    out.write_json(SPLIT_FILE, &split)?;
    let summary = IngestSummary {
        corpus_sha256,
        n_input,
        n_after_word_filter,
        n_labeled: records.len(),
        n_train: split.train_ids.len(),
        n_test: split.test_ids.len(),
    };
    out.write_json(INGEST_FILE, &summary)?;
    Ok(summary)
}

pub fn stage_vocab(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Vocabulary> {
    let records = load_records(out.dir())?;
    let split: SplitAssignment = read_json(out.dir(), SPLIT_FILE)?;
    let (train, _) = split.partition(&records)?;
    let vocab = build_vocabulary(&train, cfg.vocab_params())?;
    out.write(VOCAB_FILE, format!("{}\n", vocab.to_json()?).as_bytes())?;
    Ok(vocab)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub vocab_sha256: String,
    pub train: FeatureMatrix,
    pub test: FeatureMatrix,
}

fn load_vocab(dir: &Path) -> Result<Vocabulary> {
    let path = dir.join(VOCAB_FILE);
    Vocabulary::from_json(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)
}

pub fn stage_featurize(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<FeatureSet> {
    let records = load_records(out.dir())?;
    let split: SplitAssignment = read_json(out.dir(), SPLIT_FILE)?;
    let vocab = load_vocab(out.dir())?;
    let (train, test) = split.partition(&records)?;
    let set = FeatureSet {
        vocab_sha256: vocab.hash(),
        train: featurize(&train, &vocab, cfg.tf_mode)?,
        test: featurize(&test, &vocab, cfg.tf_mode)?,
    };
    out.write_json(FEATURES_FILE, &set)?;
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Predictor {
    Regression {
        model: LinearModel,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cv: Option<CvReport>,
    },
    Binary(BinaryClassifier),
    Multiclass(OvOClassifier),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub vocab_sha256: String,
    /// A trailing protected-attribute column was used in training.
    pub protected_column: bool,
    pub predictor: Predictor,
}

fn by_id(records: &[UserRecord]) -> BTreeMap<&str, &UserRecord> {
    records.iter().map(|r| (r.user_id.as_str(), r)).collect()
}

fn rows_for<'a>(ids: &[String], index: &BTreeMap<&str, &'a UserRecord>) -> Result<Vec<&'a UserRecord>> {
    ids.iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Data(format!("feature row {id:?} has no record")))
        })
        .collect()
}

fn categories(rows: &[&UserRecord], label: &str) -> Vec<String> {
    rows.iter().map(|r| r.labels[label].as_category()).collect()
}

fn reals(rows: &[&UserRecord], label: &str) -> Vec<f64> {
    rows.iter()
        .map(|r| r.labels[label].as_real().expect("checked at ingest"))
        .collect()
}

fn protected_of(rows: &[&UserRecord]) -> Vec<Protected> {
    rows.iter().map(|r| r.protected.unwrap_or(Protected::Unknown)).collect()
}

pub fn stage_train(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<TrainedModel> {
    let records = load_records(out.dir())?;
    let set: FeatureSet = read_json(out.dir(), FEATURES_FILE)?;
    let rows = rows_for(&set.train.row_ids, &by_id(&records))?;
    let debias = cfg.protected == ProtectedMode::Debias;
    let x = if debias {
        encode_protected_train(&set.train.matrix, &protected_of(&rows))?
    } else {
        set.train.matrix.clone()
    };
    let space = set.vocab_sha256.clone();
    let predictor = match cfg.kind {
        TaskKind::Regression => {
            let y = reals(&rows, &cfg.label);
            let (model, cv) = fit_with_policy(&x, &y, None, None, &cfg.lambda)?;
            Predictor::Regression {
                model: model.with_space(space.clone(), cfg.task.clone()),
                cv,
            }
        }
        TaskKind::Binary => {
            let mut clf = fit_binary(&x, &categories(&rows, &cfg.label), &cfg.lambda, cfg.weighting)?;
            clf.model = clf.model.with_space(space.clone(), cfg.task.clone());
            Predictor::Binary(clf)
        }
        TaskKind::Multiclass => {
            let mut ovo = fit_ovo(&x, &categories(&rows, &cfg.label), &cfg.lambda, cfg.weighting)?;
            for p in &mut ovo.pairs {
                p.model = p.model.clone().with_space(space.clone(), cfg.task.clone());
            }
            Predictor::Multiclass(ovo)
        }
    };
    let trained = TrainedModel {
        vocab_sha256: space,
        protected_column: debias,
        predictor,
    };
    out.write_json(MODEL_FILE, &trained)?;
    Ok(trained)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub user_ids: Vec<String>,
    /// Ground truth (`eval_label`), rendered as category strings for
    /// classification tasks.
    pub truth: Vec<LabelValue>,
    pub predicted: Vec<LabelValue>,
    /// Raw decision values (regression and binary tasks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Vec<f64>>,
    /// Per-sample vote tallies (multiclass tasks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tallies: Option<Vec<VoteTally>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskMetrics {
    Regression {
        explained_variance: f64,
        mse: f64,
        lambda: f64,
    },
    Classification {
        accuracy: f64,
        weighted_f1: f64,
        /// Majority share and Σp² of the test ground truth.
        test_class_stats: ClassStats,
        /// The same over every labeled user, train and test.
        all_class_stats: ClassStats,
        per_class: Vec<ClassScore>,
        /// Chosen λ per classifier, keyed `a|b` for pair models.
        lambda: BTreeMap<String, f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBody {
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: TaskMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionBody {
    /// Rows are true classes, columns predicted.
    pub confusion: ConfusionMatrix,
}

fn ingest_summary(dir: &Path) -> Result<IngestSummary> {
    read_json(dir, INGEST_FILE)
}

fn report<T>(cfg: &ExperimentConfig, dir: &Path, vocab_sha256: Option<String>, body: T) -> Result<Report<T>> {
    Ok(Report {
        config: cfg.clone(),
        corpus_sha256: ingest_summary(dir)?.corpus_sha256,
        vocab_sha256,
        body,
    })
}

fn check_space(model: &TrainedModel, set: &FeatureSet) -> Result<()> {
    if model.vocab_sha256 != set.vocab_sha256 {
        return Err(Error::FeatureSpaceMismatch {
            expected: model.vocab_sha256.clone(),
            found: set.vocab_sha256.clone(),
        });
    }
    Ok(())
}

pub fn stage_eval(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Report<MetricsBody>> {
    let records = load_records(out.dir())?;
    let set: FeatureSet = read_json(out.dir(), FEATURES_FILE)?;
    let model: TrainedModel = read_json(out.dir(), MODEL_FILE)?;
    check_space(&model, &set)?;
    let index = by_id(&records);
    let rows = rows_for(&set.test.row_ids, &index)?;
    let train_rows = rows_for(&set.train.row_ids, &index)?;
    let x = if model.protected_column {
        encode_protected_test(&set.test.matrix)
    } else {
        set.test.matrix.clone()
    };
    let truth_label = cfg.truth_label();

    let (predictions, metrics) = match &model.predictor {
        Predictor::Regression { model: m, .. } => {
            let y = reals(&rows, truth_label);
            let y_hat = predict(m, &x)?;
            let mse = y.iter().zip(&y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
            let metrics = TaskMetrics::Regression {
                explained_variance: explained_variance(&y, &y_hat)?,
                mse,
                lambda: m.lambda,
            };
            let p = Predictions {
                user_ids: set.test.row_ids.clone(),
                truth: y.into_iter().map(LabelValue::Real).collect(),
                predicted: y_hat.iter().copied().map(LabelValue::Real).collect(),
                decision: Some(y_hat),
                tallies: None,
            };
            (p, metrics)
        }
        Predictor::Binary(clf) => {
            let decision = clf.decision_values(&x)?;
            let predicted = predict_binary(clf, &x, 0.0)?;
            let lambda = BTreeMap::from([(clf.positive.clone(), clf.model.lambda)]);
            let classes = vec![clf.positive.clone(), clf.negative.clone()];
            classification(cfg, &set, &rows, &train_rows, classes, predicted, Some(decision), None, lambda, out)?
        }
        Predictor::Multiclass(ovo) => {
            let (predicted, tallies) = predict_ovo(ovo, &x)?;
            let lambda = ovo
                .pairs
                .iter()
                .map(|p| (format!("{}|{}", p.a, p.b), p.model.lambda))
                .collect();
            classification(cfg, &set, &rows, &train_rows, ovo.classes.clone(), predicted, None, Some(tallies), lambda, out)?
        }
    };
    out.write_json(PREDICTIONS_FILE, &predictions)?;
    let body = MetricsBody {
        n_train: set.train.n_rows(),
        n_test: set.test.n_rows(),
        metrics,
    };
    let rep = report(cfg, out.dir(), Some(set.vocab_sha256.clone()), body)?;
    out.write_json(METRICS_FILE, &rep)?;
    Ok(rep)
}

#[allow(clippy::too_many_arguments)]
fn classification(
    cfg: &ExperimentConfig,
    set: &FeatureSet,
    rows: &[&UserRecord],
    train_rows: &[&UserRecord],
    mut classes: Vec<String>,
    predicted: Vec<String>,
    decision: Option<Vec<f64>>,
    tallies: Option<Vec<VoteTally>>,
    lambda: BTreeMap<String, f64>,
    out: &mut Outputs,
) -> Result<(Predictions, TaskMetrics)> {
    let truth = categories(rows, cfg.truth_label());
    // ground-truth classes unseen in training still get a confusion row
    for t in &truth {
        if !classes.contains(t) {
            classes.push(t.clone());
        }
    }
    classes.sort();
    let cm = confusion_matrix(&truth, &predicted, &classes)?;
    let metrics = TaskMetrics::Classification {
        accuracy: accuracy(&cm),
        weighted_f1: weighted_f1(&cm),
        test_class_stats: class_stats(&truth)?,
        all_class_stats: class_stats(&[categories(train_rows, cfg.truth_label()), truth.clone()].concat())?,
        per_class: cm.per_class(),
        lambda,
    };
    let rep = report(cfg, out.dir(), Some(set.vocab_sha256.clone()), ConfusionBody { confusion: cm })?;
    out.write_json(CONFUSION_FILE, &rep)?;
    let p = Predictions {
        user_ids: set.test.row_ids.clone(),
        truth: truth.into_iter().map(LabelValue::Category).collect(),
        predicted: predicted.into_iter().map(LabelValue::Category).collect(),
        decision,
        tallies,
    };
    Ok((p, metrics))
}

/// Word rankings follow the direction a token's presence moves the
/// prediction, taken from the sign of its training feature values.
fn train_orientation(dir: &Path, vocab: &Vocabulary) -> Result<Vec<f64>> {
    let set: FeatureSet = read_json(dir, FEATURES_FILE)?;
    if set.vocab_sha256 != vocab.hash() {
        return Err(Error::FeatureSpaceMismatch {
            expected: vocab.hash(),
            found: set.vocab_sha256,
        });
    }
    Ok(presence_orientation(&set.train.matrix))
}

/// Word lists for a single linear model (regression or binary tasks).
pub fn stage_top_words(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<WordList> {
    let vocab = load_vocab(out.dir())?;
    let model: TrainedModel = read_json(out.dir(), MODEL_FILE)?;
    let linear = match &model.predictor {
        Predictor::Regression { model, .. } => model,
        Predictor::Binary(clf) => &clf.model,
        Predictor::Multiclass(_) => {
            return Err(Error::Config("top-words needs a regression or binary model; use pairwise-words".into()))
        }
    };
    let list = top_words_oriented(linear, &vocab, cfg.top_k, &train_orientation(out.dir(), &vocab)?)?;
    out.write(WORDS_POS_FILE, format_word_column(&list.positive).as_bytes())?;
    out.write(WORDS_NEG_FILE, format_word_column(&list.negative).as_bytes())?;
    let rep = report(cfg, out.dir(), Some(vocab.hash()), list.clone())?;
    out.write_json(WORDS_FILE, &rep)?;
    Ok(list)
}

pub fn stage_pairwise_words(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<PairwiseWords> {
    let vocab = load_vocab(out.dir())?;
    let model: TrainedModel = read_json(out.dir(), MODEL_FILE)?;
    let Predictor::Multiclass(ovo) = &model.predictor else {
        return Err(Error::Config("pairwise-words needs a multiclass model".into()));
    };
    let orientation = train_orientation(out.dir(), &vocab)?;
    let grid = pairwise_word_matrix_oriented(ovo, &vocab, cfg.pairwise_top_n, &orientation)?;
    let rep = report(cfg, out.dir(), Some(vocab.hash()), grid.clone())?;
    out.write_json(PAIRWISE_FILE, &rep)?;
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessBody {
    pub grouped: GroupedConfusion,
    pub audit: FairnessReport,
}

/// Per-group audit of the saved test predictions.
pub fn stage_fairness(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<FairnessReport> {
    let records = load_records(out.dir())?;
    let preds: Predictions = read_json(out.dir(), PREDICTIONS_FILE)?;
    let model: TrainedModel = read_json(out.dir(), MODEL_FILE)?;
    let Predictor::Binary(clf) = &model.predictor else {
        return Err(Error::Config("fairness audit needs a binary model".into()));
    };
    let rows = rows_for(&preds.user_ids, &by_id(&records))?;
    let groups: Vec<&str> = protected_of(&rows).iter().map(|p| p.as_str()).collect();
    let truth: Vec<String> = preds.truth.iter().map(LabelValue::as_category).collect();
    let predicted: Vec<String> = preds.predicted.iter().map(LabelValue::as_category).collect();
    let mut classes = vec![clf.positive.clone(), clf.negative.clone()];
    classes.sort();
    let grouped = GroupedConfusion::from_predictions(&truth, &predicted, &groups, &classes)?;
    let positive = cfg.positive_class.clone().unwrap_or_else(|| clf.positive.clone());
    let result = audit(&grouped, &positive, DEFAULT_DISPARITY_THRESHOLD)?;
    let rep = report(
        cfg,
        out.dir(),
        Some(model.vocab_sha256.clone()),
        FairnessBody {
            grouped,
            audit: result.clone(),
        },
    )?;
    out.write_json(FAIRNESS_FILE, &rep)?;
    Ok(result)
}

/// Every stage in order, each reading the previous stage's files.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<Report<MetricsBody>> {
    with_outputs(&cfg.out, |out| {
        stage_ingest(cfg, out).map_err(|e| e.in_stage("ingest"))?;
        stage_vocab(cfg, out).map_err(|e| e.in_stage("vocab"))?;
        stage_featurize(cfg, out).map_err(|e| e.in_stage("featurize"))?;
        stage_train(cfg, out).map_err(|e| e.in_stage("train"))?;
        let metrics = stage_eval(cfg, out).map_err(|e| e.in_stage("eval"))?;
        match cfg.kind {
            TaskKind::Multiclass => {
                stage_pairwise_words(cfg, out).map_err(|e| e.in_stage("pairwise-words"))?;
            }
            _ => {
                stage_top_words(cfg, out).map_err(|e| e.in_stage("top-words"))?;
            }
        }
        if cfg.protected != ProtectedMode::None {
            stage_fairness(cfg, out).map_err(|e| e.in_stage("fairness-audit"))?;
        }
        Ok(metrics)
    })
}

/// Audits externally supplied grouped confusion matrices.
pub fn audit_external(grouped_json: &str, positive_class: &str, threshold: f64) -> Result<FairnessBody> {
    let grouped = GroupedConfusion::from_json(grouped_json)?;
    let audit = audit(&grouped, positive_class, threshold)?;
    Ok(FairnessBody { grouped, audit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> serde_json::Value {
        json!({"task": "t", "label": "y", "kind": "regression", "input": "in.jsonl", "out": "out"})
    }

    #[test]
    fn defaults_and_seed_resolution() {
        let cfg = ExperimentConfig::from_value(minimal()).unwrap();
        assert_eq!(cfg.vocab_params(), VocabParams::default());
        assert_eq!(cfg.min_words, 500);
        assert_eq!(cfg.train_ratio, 0.8);
        assert_eq!(cfg.top_k, 55);
        let mut v = minimal();
        v["seed"] = json!(9);
        let cfg = ExperimentConfig::from_value(v).unwrap().resolve().unwrap();
        assert_eq!(cfg.seed, Some(9));
        assert!(matches!(cfg.lambda, LambdaPolicy::Cv { seed: 9, .. }));
    }

    #[test]
    fn config_errors_are_config_errors() {
        let mut v = minimal();
        v["bogus"] = json!(1);
        assert_eq!(ExperimentConfig::from_value(v).unwrap_err().exit_code(), 2);
        let mut v = minimal();
        v["train_ratio"] = json!(1.5);
        assert_eq!(ExperimentConfig::from_value(v).unwrap().resolve().unwrap_err().exit_code(), 2);
        let mut v = minimal();
        v["protected"] = json!("debias");
        assert!(ExperimentConfig::from_value(v).unwrap().resolve().is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut v = minimal();
        v["seed"] = json!(3);
        v["lambda"] = json!({"fixed": 0.5});
        let cfg = ExperimentConfig::from_value(v).unwrap().resolve().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn failed_stage_removes_its_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let err = with_outputs(dir.path(), |out| {
            out.write("a.txt", b"x")?;
            Err::<(), _>(Error::Data("boom".into()))
        })
        .unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(!dir.path().join("a.txt").exists());
    }
}
