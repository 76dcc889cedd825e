//! Shared fixtures and independent reference implementations for the
//! integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use traitlens::corpus::{read_corpus, split_train_test, write_corpus, Protected, UserRecord};
use traitlens::fairness::GroupedConfusion;
use traitlens::features::{build_vocabulary, featurize, FeatureMatrix, TfMode, VocabParams, Vocabulary};
use traitlens::metrics::ConfusionMatrix;
use traitlens::sparse::CsrMatrix;
use traitlens::pipeline::{
    self, run_pipeline, stage_eval, with_outputs, ExperimentConfig, FairnessBody, ProtectedMode, Report,
};
use traitlens::synth::{generate_corpus, ProtectedConfound, SynthSpec, Thresholded};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random dense design with roughly `density` nonzero Gaussian entries.
pub fn random_design(rng: &mut ChaCha8Rng, n: usize, p: usize, density: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..p)
                .map(|_| {
                    if rng.gen::<f64>() < density {
                        rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn positive_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.2..3.0)).collect()
}

pub fn csr(rows: &[Vec<f64>]) -> CsrMatrix {
    CsrMatrix::from_dense(rows)
}

/// Weighted ridge with an unpenalized intercept, solved directly from the
/// augmented normal equations `(AᵀWA + Λ)θ = AᵀWy` with `A = [X 1]`.
pub fn ridge_reference(x: &[Vec<f64>], y: &[f64], w: Option<&[f64]>, lambda: f64) -> (Vec<f64>, f64) {
    let (n, p) = (x.len(), x[0].len());
    let a = DMatrix::from_fn(n, p + 1, |i, j| if j < p { x[i][j] } else { 1.0 });
    let wv = DVector::from_fn(n, |i, _| w.map_or(1.0, |w| w[i]));
    let aw = DMatrix::from_fn(n, p + 1, |i, j| a[(i, j)] * wv[i]);
    let mut lhs = a.transpose() * &aw;
    for j in 0..p {
        lhs[(j, j)] += lambda;
    }
    let rhs = aw.transpose() * DVector::from_column_slice(y);
    let theta = lhs.full_piv_lu().solve(&rhs).expect("reference system is singular");
    (theta.as_slice()[..p].to_vec(), theta[p])
}

/// Leave-one-out residuals by refitting without each row.
pub fn brute_force_loo(x: &[Vec<f64>], y: &[f64], w: Option<&[f64]>, lambda: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let keep: Vec<usize> = (0..x.len()).filter(|&k| k != i).collect();
            let xs: Vec<Vec<f64>> = keep.iter().map(|&k| x[k].clone()).collect();
            let ys: Vec<f64> = keep.iter().map(|&k| y[k]).collect();
            let ws: Option<Vec<f64>> = w.map(|w| keep.iter().map(|&k| w[k]).collect());
            let (beta, b) = ridge_reference(&xs, &ys, ws.as_deref(), lambda);
            let pred: f64 = x[i].iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + b;
            y[i] - pred
        })
        .collect()
}

/// Lasso with intercept, `½‖y − Xβ − b‖² + λ‖β‖₁`, solved by enumerating
/// every (support, sign pattern) and keeping the one whose stationarity
/// solution has the assumed signs and satisfies the inactive-set
/// subgradient bound. Returns `(β, b)`.
pub fn lasso_reference(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let (n, p) = (x.len(), x[0].len());
    let nf = n as f64;
    let xm: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let ym = y.iter().sum::<f64>() / nf;
    let xc = DMatrix::from_fn(n, p, |i, j| x[i][j] - xm[j]);
    let yc = DVector::from_fn(n, |i, _| y[i] - ym);
    let g = xc.transpose() * &xc;
    let c = xc.transpose() * &yc;
    let slack = 1e-9 * (1.0 + lambda);

    let mut found: Option<Vec<f64>> = None;
    for mask in 0u32..(1 << p) {
        let support: Vec<usize> = (0..p).filter(|j| mask >> j & 1 == 1).collect();
        let s = support.len();
        for signs in 0u32..(1 << s) {
            let sign: Vec<f64> = (0..s).map(|k| if signs >> k & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let beta_s = if s == 0 {
                DVector::zeros(0)
            } else {
                let gs = DMatrix::from_fn(s, s, |a, b| g[(support[a], support[b])]);
                let rhs = DVector::from_fn(s, |a, _| c[support[a]] - lambda * sign[a]);
                match gs.lu().solve(&rhs) {
                    Some(v) => v,
                    None => continue,
                }
            };
            if (0..s).any(|a| beta_s[a] * sign[a] <= 0.0) {
                continue;
            }
            let mut beta = vec![0.0; p];
            for (a, &j) in support.iter().enumerate() {
                beta[j] = beta_s[a];
            }
            let bv = DVector::from_column_slice(&beta);
            let grad = &c - &g * &bv;
            if (0..p).filter(|j| mask >> j & 1 == 0).all(|j| grad[j].abs() <= lambda + slack) {
                assert!(found.is_none(), "reference lasso solution is not unique");
                found = Some(beta);
            }
        }
    }
    let beta = found.expect("no active set satisfies the optimality conditions");
    let b = ym - xm.iter().zip(&beta).map(|(m, b)| m * b).sum::<f64>();
    (beta, b)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

pub fn matrix(classes: &[&str], counts: Vec<Vec<u64>>) -> ConfusionMatrix {
    ConfusionMatrix::new(labels(classes), counts).unwrap()
}

/// Agnostic/atheist confusion matrices for men and women before and after
/// the protected-attribute intervention. Rows are true classes.
pub fn religion_biased() -> GroupedConfusion {
    let classes = ["Agnostic", "Atheist"];
    GroupedConfusion::new(BTreeMap::from([
        ("men".to_string(), matrix(&classes, vec![vec![36, 33], vec![28, 58]])),
        ("women".to_string(), matrix(&classes, vec![vec![86, 21], vec![34, 16]])),
    ]))
    .unwrap()
}

pub fn religion_fair() -> GroupedConfusion {
    let classes = ["Agnostic", "Atheist"];
    GroupedConfusion::new(BTreeMap::from([
        ("men".to_string(), matrix(&classes, vec![vec![40, 29], vec![31, 55]])),
        ("women".to_string(), matrix(&classes, vec![vec![85, 22], vec![31, 19]])),
    ]))
    .unwrap()
}

pub const POLITICS_CLASSES: [&str; 12] = [
    "IPA",
    "anarchist",
    "centrist",
    "conservative",
    "democrat",
    "doesn't care",
    "hates politics",
    "independent",
    "liberal",
    "libertarian",
    "republican",
    "very liberal",
];

pub fn politics_confusion() -> ConfusionMatrix {
    let counts = vec![
        vec![0, 2, 3, 3, 11, 18, 2, 1, 3, 1, 16, 1],
        vec![0, 24, 4, 3, 5, 21, 1, 3, 15, 5, 4, 3],
        vec![2, 9, 74, 40, 52, 66, 3, 6, 95, 7, 43, 4],
        vec![2, 5, 29, 113, 26, 31, 0, 7, 53, 5, 62, 0],
        vec![5, 17, 53, 36, 321, 101, 4, 18, 80, 9, 89, 3],
        vec![3, 39, 51, 29, 122, 373, 12, 12, 105, 12, 102, 9],
        vec![0, 4, 6, 1, 6, 30, 5, 3, 6, 0, 2, 0],
        vec![0, 8, 16, 13, 35, 22, 1, 8, 29, 4, 25, 1],
        vec![1, 18, 51, 27, 74, 51, 6, 6, 223, 15, 24, 13],
        vec![0, 12, 17, 9, 17, 28, 0, 6, 32, 11, 12, 4],
        vec![1, 8, 19, 57, 67, 64, 1, 8, 29, 3, 179, 3],
        vec![0, 4, 25, 2, 11, 22, 2, 2, 67, 1, 6, 3],
    ];
    matrix(&POLITICS_CLASSES, counts)
}

pub fn religion_confusion() -> ConfusionMatrix {
    let counts = vec![
        vec![68, 29, 17, 16, 21],
        vec![54, 69, 27, 55, 11],
        vec![27, 37, 172, 130, 9],
        vec![35, 48, 126, 560, 26],
        vec![22, 11, 19, 50, 39],
    ];
    matrix(&["Atheist", "Agnostic", "Catholic", "Christian", "None"], counts)
}

/// Ten planted tokens with alternating-sign effects.
pub const RECOVERY_EFFECTS: [f64; 10] = [1.0, -1.0, 0.9, -0.9, 0.8, -0.8, 0.7, -0.7, 0.6, -0.6];
/// Lowest test EV accepted on the recovery corpus. Reference runs on seeds
/// 11 and 12 gave 0.585 and 0.615.
pub const RECOVERY_MIN_EV: f64 = 0.5;

pub fn recovery_spec(seed: u64) -> SynthSpec {
    SynthSpec::regression(2000, 5000, &RECOVERY_EFFECTS, 0.25, seed)
}

pub fn null_spec(seed: u64) -> SynthSpec {
    SynthSpec::regression(2000, 5000, &[], 1.0, seed)
}

/// Binary "side" label whose training copy (`side_reported`) is shifted by
/// gender, with twenty gender-marker tokens used only by women.
pub fn biased_label_spec(seed: u64) -> SynthSpec {
    let mut spec = SynthSpec::regression(2000, 3000, &RECOVERY_EFFECTS, 0.5, seed);
    spec.thresholded.push(Thresholded {
        name: "side".into(),
        source: "score".into(),
        cutpoints: vec![0.0],
        classes: labels(&["neg", "pos"]),
    });
    spec.protected_confound = Some(ProtectedConfound {
        tokens: (0..20).map(|i| format!("gen{i}")).collect(),
        female_fraction: 0.5,
        unknown_fraction: 0.0,
        token_rate_female: 0.3,
        token_rate_male: 0.0,
        prevalence_shift: 0.0,
        trait_shift: 0.0,
        label_bias: 1.0,
    });
    spec
}

pub struct Prepared {
    pub train: Vec<UserRecord>,
    pub test: Vec<UserRecord>,
    pub vocab: Vocabulary,
    pub x_train: FeatureMatrix,
    pub x_test: FeatureMatrix,
}

/// Default split, vocabulary and as-printed tf-idf.
pub fn prepare(records: &[UserRecord], seed: u64) -> Prepared {
    let split = split_train_test(records, 0.8, seed).unwrap();
    let (tr, te) = split.partition(records).unwrap();
    let vocab = build_vocabulary(&tr, VocabParams::default()).unwrap();
    let x_train = featurize(&tr, &vocab, TfMode::AsPrinted).unwrap();
    let x_test = featurize(&te, &vocab, TfMode::AsPrinted).unwrap();
    Prepared {
        train: tr.into_iter().cloned().collect(),
        test: te.into_iter().cloned().collect(),
        vocab,
        x_train,
        x_test,
    }
}

pub fn real_labels(records: &[UserRecord], label: &str) -> Vec<f64> {
    records.iter().map(|r| r.labels[label].as_real().unwrap()).collect()
}

pub fn category_labels(records: &[UserRecord], label: &str) -> Vec<String> {
    records.iter().map(|r| r.labels[label].as_category()).collect()
}

pub fn protected(records: &[UserRecord]) -> Vec<Protected> {
    records.iter().map(|r| r.protected.unwrap_or(Protected::Unknown)).collect()
}

pub struct DebiasOutcome {
    pub baseline: Option<f64>,
    pub debiased: Option<f64>,
    /// Debiased predictions were byte-identical after flipping every
    /// user's protected attribute and re-running evaluation.
    pub flip_invariant: bool,
}

pub fn write_corpus_file(path: &Path, records: &[UserRecord]) {
    let mut buf = Vec::new();
    write_corpus(&mut buf, records).unwrap();
    fs::write(path, buf).unwrap();
}

/// Config for training on `side_reported` and evaluating on `side`.
pub fn biased_label_config(input: &Path, out: &Path, mode: ProtectedMode, seed: u64) -> ExperimentConfig {
    ExperimentConfig::from_value(serde_json::json!({
        "task": "side",
        "label": "side_reported",
        "eval_label": "side",
        "kind": "binary",
        "protected": mode,
        "positive_class": "neg",
        "seed": seed,
        "input": input,
        "out": out,
    }))
    .unwrap()
    .resolve()
    .unwrap()
}

fn female_male_disparity(dir: &Path) -> Option<f64> {
    let text = fs::read_to_string(dir.join(pipeline::FAIRNESS_FILE)).unwrap();
    let rep: Report<FairnessBody> = serde_json::from_str(&text).unwrap();
    rep.body
        .audit
        .disparity("false_error_ratio", "female", "male")
        .unwrap()
        .disparity
}

/// Female/male false-error-ratio disparity of the audited baseline and of
/// the encode-then-zero intervention, both through the full pipeline.
pub fn debias_experiment(seed: u64) -> DebiasOutcome {
    let (records, _) = generate_corpus(&biased_label_spec(seed)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("corpus.jsonl");
    write_corpus_file(&input, &records);

    let base_dir = dir.path().join("baseline");
    run_pipeline(&biased_label_config(&input, &base_dir, ProtectedMode::Audit, seed)).unwrap();
    let fair_dir = dir.path().join("debiased");
    let fair_cfg = biased_label_config(&input, &fair_dir, ProtectedMode::Debias, seed);
    run_pipeline(&fair_cfg).unwrap();

    let predictions = fair_dir.join(pipeline::PREDICTIONS_FILE);
    let before = fs::read(&predictions).unwrap();
    let recs_path = fair_dir.join(pipeline::RECORDS_FILE);
    let mut flipped = read_corpus(&fs::read(&recs_path).unwrap()[..]).unwrap();
    for r in &mut flipped {
        r.protected = Some(match r.protected {
            Some(Protected::Male) => Protected::Female,
            _ => Protected::Male,
        });
    }
    write_corpus_file(&recs_path, &flipped);
    with_outputs(&fair_dir, |out| stage_eval(&fair_cfg, out)).unwrap();
    let after = fs::read(&predictions).unwrap();

    DebiasOutcome {
        baseline: female_male_disparity(&base_dir),
        debiased: female_male_disparity(&fair_dir),
        flip_invariant: before == after,
    }
}
