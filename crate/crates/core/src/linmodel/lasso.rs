//! ℓ1-penalized least squares by cyclic coordinate descent.
//!
//! Objective: `½ Σ (y_i − x_i·β − b)² + λ‖β‖₁`, intercept by centering.
//! Updates use the covariance form: with `c_j = x̃_jᵀ ỹ` and Gram columns
//! `G_k = X̃ᵀ x̃_k` (cached once a coordinate first moves), the partial
//! residual correlation of column `j` is `c_j − Σ_k G_kj β_k`.

use serde::{Deserialize, Serialize};

use super::{LinearModel, Penalty};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    pub max_sweeps: usize,
    /// Converged when no coordinate moves by more than this in a full sweep.
    pub tol: f64,
    pub fit_intercept: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            max_sweeps: 100_000,
            tol: 1e-8,
            fit_intercept: true,
        }
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Centered design summaries shared by every λ on one dataset.
struct Design {
    n: usize,
    columns: Vec<Vec<(usize, f64)>>,
    x_mean: Vec<f64>,
    y_mean: f64,
    /// `‖x̃_j‖²`
    sq_norm: Vec<f64>,
    /// `x̃_jᵀ ỹ`
    corr: Vec<f64>,
    /// `‖ỹ‖²`
    y_sq: f64,
    gram_cache: Vec<Option<Vec<f64>>>,
}

impl Design {
    fn new(x: &CsrMatrix, y: &[f64], fit_intercept: bool) -> Result<Self> {
        let (n, p) = (x.n_rows(), x.n_cols());
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: y.len(),
            });
        }
        if n == 0 {
            return Err(Error::Data("lasso fit on zero rows".into()));
        }
        let columns = x.to_columns();
        let nf = n as f64;
        let x_mean: Vec<f64> = if fit_intercept {
            columns.iter().map(|c| c.iter().map(|(_, v)| v).sum::<f64>() / nf).collect()
        } else {
            vec![0.0; p]
        };
        let y_mean = if fit_intercept { y.iter().sum::<f64>() / nf } else { 0.0 };
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let yc_sum: f64 = yc.iter().sum();
        let sq_norm = columns
            .iter()
            .zip(&x_mean)
            .map(|(c, m)| (c.iter().map(|(_, v)| v * v).sum::<f64>() - nf * m * m).max(0.0))
            .collect();
        let corr = columns
            .iter()
            .zip(&x_mean)
            .map(|(c, m)| c.iter().map(|&(i, v)| v * yc[i]).sum::<f64>() - m * yc_sum)
            .collect();
        Ok(Design {
            n,
            columns,
            x_mean,
            y_mean,
            sq_norm,
            corr,
            y_sq: yc.iter().map(|v| v * v).sum(),
            gram_cache: vec![None; p],
        })
    }

    fn p(&self) -> usize {
        self.columns.len()
    }

    fn lambda_max(&self) -> f64 {
        self.corr.iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }

    /// `G_k[j] = x_jᵀx_k − n μ_j μ_k`
    fn gram_column(&mut self, k: usize, row_major: &CsrMatrix) -> &[f64] {
        if self.gram_cache[k].is_none() {
            let mut g = vec![0.0; self.p()];
            for &(i, v) in &self.columns[k] {
                let (idx, vals) = row_major.row(i);
                for (&j, &u) in idx.iter().zip(vals) {
                    g[j] += u * v;
                }
            }
            let nf = self.n as f64;
            let mk = self.x_mean[k];
            if mk != 0.0 {
                for (gj, mj) in g.iter_mut().zip(&self.x_mean) {
                    *gj -= nf * mj * mk;
                }
            }
            self.gram_cache[k] = Some(g);
        }
        self.gram_cache[k].as_deref().unwrap()
    }
}

struct Solver<'a> {
    design: Design,
    x: &'a CsrMatrix,
    beta: Vec<f64>,
    /// `q_j = Σ_k G_kj β_k`
    q: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(x: &'a CsrMatrix, design: Design) -> Self {
        let p = design.p();
        Solver {
            design,
            x,
            beta: vec![0.0; p],
            q: vec![0.0; p],
        }
    }

    fn warm_start(&mut self, beta: &[f64]) {
        for (k, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                self.shift(k, b);
            }
        }
    }

    fn reset(&mut self, beta: &[f64]) {
        self.beta.iter_mut().for_each(|b| *b = 0.0);
        self.q.iter_mut().for_each(|q| *q = 0.0);
        self.warm_start(beta);
    }

    fn nonzero(&self) -> usize {
        self.beta.iter().filter(|b| **b != 0.0).count()
    }

    fn shift(&mut self, k: usize, delta: f64) {
        self.beta[k] += delta;
        let g = self.design.gram_column(k, self.x);
        for (qj, gj) in self.q.iter_mut().zip(g) {
            *qj += delta * gj;
        }
    }

    fn update(&mut self, j: usize, lambda: f64) -> f64 {
        let nrm = self.design.sq_norm[j];
        let old = self.beta[j];
        let new = if nrm > 0.0 {
            let z = self.design.corr[j] - self.q[j] + nrm * old;
            soft_threshold(z, lambda) / nrm
        } else {
            0.0
        };
        let delta = new - old;
        if delta != 0.0 {
            self.shift(j, delta);
        }
        delta.abs()
    }

    fn sweep(&mut self, lambda: f64, active_only: bool) -> f64 {
        let mut max_change = 0.0f64;
        for j in 0..self.beta.len() {
            if active_only && self.beta[j] == 0.0 {
                continue;
            }
            max_change = max_change.max(self.update(j, lambda));
        }
        max_change
    }

    fn run(&mut self, lambda: f64, opts: &LassoOptions) -> Result<()> {
        let mut sweeps = 0;
        loop {
            let change = self.sweep(lambda, false);
            sweeps += 1;
            if change < opts.tol {
                return Ok(());
            }
            loop {
                if sweeps >= opts.max_sweeps {
                    return Err(Error::NoConvergence {
                        sweeps,
                        duality_gap: self.duality_gap(lambda),
                    });
                }
                let change = self.sweep(lambda, true);
                sweeps += 1;
                if change < opts.tol {
                    break;
                }
            }
            if sweeps >= opts.max_sweeps {
                return Err(Error::NoConvergence {
                    sweeps,
                    duality_gap: self.duality_gap(lambda),
                });
            }
        }
    }

    /// Primal minus dual objective at the rescaled residual.
    fn duality_gap(&self, lambda: f64) -> f64 {
        // ‖r‖² = ‖ỹ‖² − 2βᵀc + βᵀGβ, with Gβ = q
        let bc: f64 = self.beta.iter().zip(&self.design.corr).map(|(b, c)| b * c).sum();
        let bq: f64 = self.beta.iter().zip(&self.q).map(|(b, q)| b * q).sum();
        let r_sq = (self.design.y_sq - 2.0 * bc + bq).max(0.0);
        let l1: f64 = self.beta.iter().map(|b| b.abs()).sum();
        let primal = 0.5 * r_sq + lambda * l1;
        let max_grad = self
            .design
            .corr
            .iter()
            .zip(&self.q)
            .fold(0.0f64, |m, (c, q)| m.max((c - q).abs()));
        let s = if max_grad > lambda { lambda / max_grad } else { 1.0 };
        // dual at θ = s r: ½‖ỹ‖² − ½‖ỹ − θ‖², with ỹᵀr = ‖ỹ‖² − βᵀc
        let yr = self.design.y_sq - bc;
        let dual = s * yr - 0.5 * s * s * r_sq;
        primal - dual
    }

    fn model(&self, lambda: f64) -> LinearModel {
        let intercept = self.design.y_mean
            - self
                .beta
                .iter()
                .zip(&self.design.x_mean)
                .map(|(b, m)| b * m)
                .sum::<f64>();
        LinearModel {
            weights: self.beta.clone(),
            intercept,
            lambda,
            penalty: Penalty::L1,
            feature_space_id: String::new(),
            task: String::new(),
            n_train: self.design.n,
        }
    }
}

pub fn fit_lasso(x: &CsrMatrix, y: &[f64], lambda: f64) -> Result<LinearModel> {
    fit_lasso_with(x, y, lambda, &LassoOptions::default(), None)
}

pub fn fit_lasso_with(
    x: &CsrMatrix,
    y: &[f64],
    lambda: f64,
    opts: &LassoOptions,
    warm: Option<&[f64]>,
) -> Result<LinearModel> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Config(format!("lasso lambda must be > 0, got {lambda}")));
    }
    let design = Design::new(x, y, opts.fit_intercept)?;
    let mut solver = Solver::new(x, design);
    if let Some(w) = warm {
        solver.warm_start(w);
    }
    solver.run(lambda, opts)?;
    Ok(solver.model(lambda))
}

/// Largest KKT violation of an ℓ1 model, using gradients `g_j = −x̃_jᵀ r`
/// recomputed from scratch: `|g_j| − λ` for zero weights and
/// `|g_j + λ sign(β_j)|` for nonzero ones.
pub fn kkt_violation(x: &CsrMatrix, y: &[f64], model: &LinearModel) -> f64 {
    let n = x.n_rows();
    let fitted = x.mul_vec(&model.weights);
    let r: Vec<f64> = (0..n).map(|i| y[i] - fitted[i] - model.intercept).collect();
    let r_sum: f64 = r.iter().sum();
    let nf = n as f64;
    let xr = x.tr_mul_vec(&r);
    let col_sum = x.tr_mul_vec(&vec![1.0; n]);
    model
        .weights
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            let g = -(xr[j] - col_sum[j] / nf * r_sum);
            if b == 0.0 {
                (g.abs() - model.lambda).max(0.0)
            } else {
                (g + model.lambda * b.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoSelection {
    pub model: LinearModel,
    pub lambda: f64,
    pub requested: usize,
    pub nonzero: usize,
    /// Present when no λ produced exactly `requested` nonzero weights.
    pub warning: Option<String>,
}

const PATH_RATIO: f64 = 0.9;
const PATH_FLOOR: f64 = 1e-8;
const BISECTION_STEPS: usize = 60;

/// Finds a λ whose ℓ1 solution has exactly `k` nonzero weights: walk the
/// path down from `λ_max` with warm starts until the support reaches `k`,
/// then bisect (geometrically) between the last two path points. If the
/// path jumps over `k`, returns the smallest support above `k` that was
/// seen and sets `warning`.
pub fn lasso_select_k(x: &CsrMatrix, y: &[f64], k: usize) -> Result<LassoSelection> {
    let p = x.n_cols();
    if k == 0 || k > p {
        return Err(Error::Config(format!("requested {k} nonzero weights from {p} columns")));
    }
    let opts = LassoOptions::default();
    let mut solver = Solver::new(x, Design::new(x, y, opts.fit_intercept)?);
    let lambda_max = solver.design.lambda_max();
    if lambda_max == 0.0 {
        return Err(Error::Data("no column correlates with the target".into()));
    }

    let mut best_above: Option<(usize, f64, LinearModel)> = None;
    let mut record = |count: usize, lambda: f64, model: LinearModel| {
        if best_above.as_ref().is_none_or(|(c, _, _)| count < *c) {
            best_above = Some((count, lambda, model));
        }
    };

    let mut hi = lambda_max;
    let mut hi_beta = vec![0.0; p];
    let mut lambda = lambda_max;
    let floor = lambda_max * PATH_FLOOR;
    let mut lo = None;
    while lambda > floor {
        lambda *= PATH_RATIO;
        solver.run(lambda, &opts)?;
        let count = solver.nonzero();
        if count == k {
            return Ok(LassoSelection {
                model: solver.model(lambda),
                lambda,
                requested: k,
                nonzero: k,
                warning: None,
            });
        }
        if count > k {
            record(count, lambda, solver.model(lambda));
            lo = Some(lambda);
            break;
        }
        hi = lambda;
        hi_beta.clone_from(&solver.beta);
    }
    let Some(mut lo) = lo else {
        let count = solver.nonzero();
        return Ok(LassoSelection {
            model: solver.model(lambda),
            lambda,
            requested: k,
            nonzero: count,
            warning: Some(format!("support never reached {k}; largest support {count}")),
        });
    };

    for _ in 0..BISECTION_STEPS {
        let mid = (hi * lo).sqrt();
        solver.reset(&hi_beta);
        solver.run(mid, &opts)?;
        let count = solver.nonzero();
        if count == k {
            return Ok(LassoSelection {
                model: solver.model(mid),
                lambda: mid,
                requested: k,
                nonzero: k,
                warning: None,
            });
        }
        if count > k {
            record(count, mid, solver.model(mid));
            lo = mid;
        } else {
            hi = mid;
            hi_beta.clone_from(&solver.beta);
        }
    }
    let (count, lambda, model) = best_above.expect("lower bracket has support above k");
    Ok(LassoSelection {
        model,
        lambda,
        requested: k,
        nonzero: count,
        warning: Some(format!("no lambda gives exactly {k} nonzero weights; returning {count}")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Orthonormal centered columns.
    fn orthonormal() -> CsrMatrix {
        let h = 0.5;
        CsrMatrix::from_dense(&[vec![h, h], vec![h, -h], vec![-h, h], vec![-h, -h]])
    }

    #[test]
    fn soft_thresholding_on_orthonormal_design() {
        let x = orthonormal();
        // Xᵀy = (3, 0.5)
        let y = [1.75, 1.25, -1.25, -1.75];
        let m = fit_lasso(&x, &y, 1.0).unwrap();
        assert!((m.weights[0] - 2.0).abs() < 1e-10, "{:?}", m.weights);
        assert_eq!(m.weights[1], 0.0);
        assert!(kkt_violation(&x, &y, &m) < 1e-9);
    }

    #[test]
    fn null_model_above_lambda_max() {
        let x = orthonormal();
        let y = [1.75, 1.25, -1.25, -1.75];
        let m = fit_lasso(&x, &y, 3.0).unwrap();
        assert!(m.weights.iter().all(|w| *w == 0.0));
        assert!((m.intercept - 0.0).abs() < 1e-15);
    }

    #[test]
    fn select_k_one_takes_top_correlation() {
        let x = orthonormal();
        let y = [1.75, 1.25, -1.25, -1.75];
        let s = lasso_select_k(&x, &y, 1).unwrap();
        assert_eq!(s.nonzero, 1);
        assert!(s.model.weights[0] != 0.0 && s.model.weights[1] == 0.0);
        let s = lasso_select_k(&x, &y, 2).unwrap();
        assert_eq!(s.nonzero, 2);
        assert!(s.warning.is_none());
        assert!(lasso_select_k(&x, &y, 3).is_err());
    }

    #[test]
    fn non_convergence_reports_gap() {
        let x = CsrMatrix::from_dense(&[vec![1.0, 0.9], vec![0.9, 1.0], vec![0.2, 0.1], vec![0.0, 0.3]]);
        let y = [1.0, 0.8, 0.1, 0.4];
        let opts = LassoOptions {
            max_sweeps: 1,
            ..Default::default()
        };
        match fit_lasso_with(&x, &y, 1e-3, &opts, None) {
            Err(Error::NoConvergence { sweeps, duality_gap }) => {
                assert_eq!(sweeps, 1);
                assert!(duality_gap >= 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
