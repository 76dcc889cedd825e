use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::predict;
use super::ridge::{RidgeOptions, RidgePath, SolveForm};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Training sets at or above this size use k-fold instead of LOOCV.
pub const LOOCV_MAX_ROWS: usize = 10_000;
pub const DEFAULT_FOLDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvPolicy {
    /// LOOCV below [`LOOCV_MAX_ROWS`] rows, 3-fold otherwise.
    #[default]
    Auto,
    Loocv,
    Kfold(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolvedPolicy {
    Loocv,
    Kfold(usize),
}

impl CvPolicy {
    pub fn resolve(self, n: usize) -> ResolvedPolicy {
        match self {
            CvPolicy::Auto if n < LOOCV_MAX_ROWS => ResolvedPolicy::Loocv,
            CvPolicy::Auto => ResolvedPolicy::Kfold(DEFAULT_FOLDS),
            CvPolicy::Loocv => ResolvedPolicy::Loocv,
            CvPolicy::Kfold(k) => ResolvedPolicy::Kfold(k),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CvOptions<'a> {
    pub policy: CvPolicy,
    pub seed: u64,
    /// Class index per row; k-fold assignment is stratified when present.
    pub strata: Option<&'a [usize]>,
    pub sample_weights: Option<&'a [f64]>,
    pub fit_intercept: bool,
}

impl Default for CvOptions<'_> {
    fn default() -> Self {
        CvOptions {
            policy: CvPolicy::Auto,
            seed: 0,
            strata: None,
            sample_weights: None,
            fit_intercept: true,
        }
    }
}

impl<'a> CvOptions<'a> {
    fn ridge(&self, weights: Option<&'a [f64]>) -> RidgeOptions<'a> {
        RidgeOptions {
            sample_weights: weights,
            fit_intercept: self.fit_intercept,
            form: SolveForm::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub grid: Vec<f64>,
    /// Mean squared held-out error per grid point (sample-weighted when
    /// weights are given).
    pub cv_error: Vec<f64>,
    pub chosen: f64,
    pub policy: ResolvedPolicy,
}

/// 25 log-spaced points on `[1e-4, 1e4]`, scaled by `tr(ZᵀZ)/n` of the
/// weighted, centered design.
pub fn default_grid(x: &CsrMatrix, sample_weights: Option<&[f64]>) -> Vec<f64> {
    let n = x.n_rows().max(1);
    let w = |i: usize| sample_weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..x.n_rows()).map(w).sum();
    let mut mean = vec![0.0; x.n_cols()];
    for i in 0..x.n_rows() {
        let (idx, vals) = x.row(i);
        for (&j, v) in idx.iter().zip(vals) {
            mean[j] += w(i) * v / total;
        }
    }
    // Σ w_i ‖x_i − μ‖² = Σ w_i ‖x_i‖² − s ‖μ‖²
    let raw: f64 = (0..x.n_rows())
        .map(|i| w(i) * x.row(i).1.iter().map(|v| v * v).sum::<f64>())
        .sum();
    let trace = raw - total * mean.iter().map(|m| m * m).sum::<f64>();
    let scale = if trace > 0.0 { trace / n as f64 } else { 1.0 };
    (0..25)
        .map(|i| scale * 10f64.powf(-4.0 + 8.0 * i as f64 / 24.0))
        .collect()
}

/// Fold index per row. Rows are visited in a seeded permutation; within
/// each stratum the r-th visited row goes to fold `r mod k`. Depends only
/// on which rows share a stratum, never on stratum names.
pub fn fold_assignment(n: usize, k: usize, seed: u64, strata: Option<&[usize]>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n];
    match strata {
        Some(s) => {
            let mut seen = std::collections::HashMap::new();
            for &i in &order {
                let r = seen.entry(s[i]).or_insert(0usize);
                folds[i] = *r % k;
                *r += 1;
            }
        }
        None => {
            for (r, &i) in order.iter().enumerate() {
                folds[i] = r % k;
            }
        }
    }
    folds
}

fn weighted_mse(errors: &[f64], weights: Option<&[f64]>) -> f64 {
    match weights {
        Some(w) => {
            let total: f64 = w.iter().sum();
            errors.iter().zip(w).map(|(e, w)| w * e * e).sum::<f64>() / total
        }
        None => errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64,
    }
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Picks the grid point with the smallest cross-validated squared error
/// (first one on ties).
pub fn select_lambda(x: &CsrMatrix, y: &[f64], grid: &[f64], opts: &CvOptions) -> Result<CvReport> {
    if grid.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    if let Some(bad) = grid.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(Error::Config(format!("lambda grid value {bad} is not > 0")));
    }
    let n = x.n_rows();
    let policy = opts.policy.resolve(n);
    let cv_error = match policy {
        ResolvedPolicy::Loocv => {
            if n < 2 {
                return Err(Error::Data("leave-one-out needs at least 2 rows".into()));
            }
            let path = RidgePath::new(x, y, &opts.ridge(opts.sample_weights))?;
            grid.iter()
                .map(|&l| Ok(weighted_mse(&path.loo_residuals(y, l)?, opts.sample_weights)))
                .collect::<Result<Vec<_>>>()?
        }
        ResolvedPolicy::Kfold(k) => kfold_errors(x, y, grid, k, opts)?,
    };
    if let Some(bad) = cv_error.iter().find(|e| !e.is_finite()) {
        return Err(Error::RankDeficient(format!("cross-validation error {bad} is not finite")));
    }
    let chosen = grid[argmin(&cv_error)];
    Ok(CvReport {
        grid: grid.to_vec(),
        cv_error,
        chosen,
        policy,
    })
}

fn kfold_errors(x: &CsrMatrix, y: &[f64], grid: &[f64], k: usize, opts: &CvOptions) -> Result<Vec<f64>> {
    let n = x.n_rows();
    if k < 2 || n < k {
        return Err(Error::Config(format!("{k}-fold cross-validation on {n} rows")));
    }
    let folds = fold_assignment(n, k, opts.seed, opts.strata);
    let mut errors = vec![vec![0.0; n]; grid.len()];
    for fold in 0..k {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != fold).collect();
        let held: Vec<usize> = (0..n).filter(|&i| folds[i] == fold).collect();
        if held.is_empty() {
            continue;
        }
        let xt = x.select_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let wt: Option<Vec<f64>> = opts.sample_weights.map(|w| train.iter().map(|&i| w[i]).collect());
        let path = RidgePath::new(&xt, &yt, &opts.ridge(wt.as_deref()))?;
        let xh = x.select_rows(&held);
        for (g, &lambda) in grid.iter().enumerate() {
            let pred = predict(&path.model(lambda)?, &xh)?;
            for (&i, p) in held.iter().zip(pred) {
                errors[g][i] = y[i] - p;
            }
        }
    }
    Ok(errors
        .iter()
        .map(|e| weighted_mse(e, opts.sample_weights))
        .collect())
}
