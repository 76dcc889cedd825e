//! Weighted ridge regression.
//!
//! Minimizes `Σ w_i (y_i − x_i·β − b)² + λ‖β‖²` with `b` unpenalized. The
//! intercept is removed by weighted centering: with `s = Σ w_i`,
//! `μ = Σ w_i x_i / s` and `ȳ = Σ w_i y_i / s`, the rows
//! `z_i = √w_i (x_i − μ)` and targets `t_i = √w_i (y_i − ȳ)` reduce the
//! problem to plain ridge, `β = (ZᵀZ + λI)⁻¹ Zᵀt = Zᵀ(ZZᵀ + λI)⁻¹ t`, and
//! `b = ȳ − μ·β`. The second (dual) form is used when `n < p`.
//!
//! The hat matrix diagonal is `h_i = w_i/s + z_iᵀ(ZᵀZ + λI)⁻¹z_i`, so the
//! leave-one-out residual is `(y_i − ŷ_i) / (1 − h_i)` without refitting.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{LinearModel, Penalty};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

const LEVERAGE_LIMIT: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveForm {
    /// Dual when `n < p`, primal otherwise.
    #[default]
    Auto,
    /// `p × p` normal equations.
    Primal,
    /// `n × n` Gram system.
    Dual,
}

#[derive(Debug, Clone, Copy)]
pub struct RidgeOptions<'a> {
    pub sample_weights: Option<&'a [f64]>,
    pub fit_intercept: bool,
    pub form: SolveForm,
}

impl Default for RidgeOptions<'_> {
    fn default() -> Self {
        RidgeOptions {
            sample_weights: None,
            fit_intercept: true,
            form: SolveForm::Auto,
        }
    }
}

impl<'a> RidgeOptions<'a> {
    pub fn weighted(sample_weights: Option<&'a [f64]>) -> Self {
        RidgeOptions {
            sample_weights,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
struct Centering {
    weights: Vec<f64>,
    sqrt_w: Vec<f64>,
    total: f64,
    fit_intercept: bool,
    x_mean: Vec<f64>,
    y_mean: f64,
}

impl Centering {
    fn new(x: &CsrMatrix, y: &[f64], opts: &RidgeOptions) -> Result<Self> {
        let n = x.n_rows();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: y.len(),
            });
        }
        if n == 0 {
            return Err(Error::Data("ridge fit on zero rows".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite target value".into()));
        }
        let weights = match opts.sample_weights {
            Some(w) if w.len() != n => {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: w.len(),
                })
            }
            Some(w) => {
                if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                    return Err(Error::Data(format!("sample weight {bad} is not strictly positive")));
                }
                w.to_vec()
            }
            None => vec![1.0; n],
        };
        let total: f64 = weights.iter().sum();
        let (x_mean, y_mean) = if opts.fit_intercept {
            let mut m = x.tr_mul_vec(&weights);
            m.iter_mut().for_each(|v| *v /= total);
            let ym = weights.iter().zip(y).map(|(w, v)| w * v).sum::<f64>() / total;
            (m, ym)
        } else {
            (vec![0.0; x.n_cols()], 0.0)
        };
        Ok(Centering {
            sqrt_w: weights.iter().map(|w| w.sqrt()).collect(),
            weights,
            total,
            fit_intercept: opts.fit_intercept,
            x_mean,
            y_mean,
        })
    }

    /// `t_i = √w_i (y_i − ȳ)`
    fn targets(&self, y: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            y.len(),
            y.iter().zip(&self.sqrt_w).map(|(v, s)| s * (v - self.y_mean)),
        )
    }

    /// Dense `Z`, only used when `p ≤ n`.
    fn dense_z(&self, x: &CsrMatrix) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(x.n_rows(), x.n_cols());
        for i in 0..x.n_rows() {
            for j in 0..x.n_cols() {
                z[(i, j)] = -self.x_mean[j];
            }
            let (idx, vals) = x.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                z[(i, j)] += v;
            }
            let s = self.sqrt_w[i];
            z.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        z
    }

    /// `ZᵀZ = Xᵀ W X − s μμᵀ`
    fn primal_gram(&self, x: &CsrMatrix) -> DMatrix<f64> {
        let mut c = x.gram_cols(&self.weights);
        if self.fit_intercept {
            let mu = DVector::from_column_slice(&self.x_mean);
            c -= (&mu * mu.transpose()) * self.total;
        }
        c
    }

    /// `ZZᵀ` from row inner products: `√w_i √w_k (G_ik − a_i − a_k + μ·μ)`
    /// with `a = Xμ`.
    fn dual_gram(&self, x: &CsrMatrix) -> DMatrix<f64> {
        let mut k = x.gram_rows();
        let n = x.n_rows();
        if self.fit_intercept {
            let a = x.mul_vec(&self.x_mean);
            let c: f64 = self.x_mean.iter().map(|m| m * m).sum();
            for i in 0..n {
                for j in 0..n {
                    k[(i, j)] += c - a[i] - a[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] *= self.sqrt_w[i] * self.sqrt_w[j];
            }
        }
        k
    }

    /// `Zᵀ t` for `t` given in the scaled row space.
    fn z_tr_mul(&self, x: &CsrMatrix, t: &DVector<f64>) -> Vec<f64> {
        let scaled: Vec<f64> = t.iter().zip(&self.sqrt_w).map(|(v, s)| v * s).collect();
        let mut out = x.tr_mul_vec(&scaled);
        if self.fit_intercept {
            let sum: f64 = scaled.iter().sum();
            for (o, m) in out.iter_mut().zip(&self.x_mean) {
                *o -= m * sum;
            }
        }
        out
    }

    fn intercept(&self, beta: &[f64]) -> f64 {
        if !self.fit_intercept {
            return 0.0;
        }
        self.y_mean - beta.iter().zip(&self.x_mean).map(|(b, m)| b * m).sum::<f64>()
    }

    fn intercept_leverage(&self, i: usize) -> f64 {
        if self.fit_intercept {
            self.weights[i] / self.total
        } else {
            0.0
        }
    }
}

fn resolve_form(form: SolveForm, n: usize, p: usize) -> SolveForm {
    match form {
        SolveForm::Auto if n < p => SolveForm::Dual,
        SolveForm::Auto => SolveForm::Primal,
        other => other,
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// Cholesky solve of `(A + λI) u = rhs`. With `λ = 0`, a pivot below
/// `1e-12 · max diag(A)` counts as singular.
fn spd_solve(mut a: DMatrix<f64>, lambda: f64, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::RankDeficient(format!("{what} is not positive definite")))?;
    if lambda == 0.0 {
        let l = chol.l_dirty();
        let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if min_pivot.is_nan() || min_pivot <= 1e-12 * scale {
            return Err(Error::RankDeficient(format!("{what} is numerically singular")));
        }
    }
    Ok(chol.solve(rhs))
}

fn assemble(center: &Centering, beta: Vec<f64>, lambda: f64, n: usize) -> LinearModel {
    LinearModel {
        intercept: center.intercept(&beta),
        weights: beta,
        lambda,
        penalty: Penalty::L2,
        feature_space_id: String::new(),
        task: String::new(),
        n_train: n,
    }
}

/// Fits ridge with a direct Cholesky solve in the primal or dual form.
pub fn fit_ridge(x: &CsrMatrix, y: &[f64], lambda: f64, opts: &RidgeOptions) -> Result<LinearModel> {
    check_lambda(lambda)?;
    let center = Centering::new(x, y, opts)?;
    let t = center.targets(y);
    let (n, p) = (x.n_rows(), x.n_cols());
    let beta = match resolve_form(opts.form, n, p) {
        SolveForm::Primal => {
            let rhs = DVector::from_vec(center.z_tr_mul(x, &t));
            let beta = spd_solve(center.primal_gram(x), lambda, &rhs, "XᵀWX")?;
            beta.as_slice().to_vec()
        }
        SolveForm::Dual | SolveForm::Auto => {
            let alpha = spd_solve(center.dual_gram(x), lambda, &t, "Gram matrix")?;
            center.z_tr_mul(x, &alpha)
        }
    };
    Ok(assemble(&center, beta, lambda, n))
}

#[derive(Debug, Clone)]
enum Basis {
    Primal {
        vals: DVector<f64>,
        vecs: DMatrix<f64>,
        /// `Vᵀ Zᵀ t`
        proj: DVector<f64>,
        /// `Z V`
        zv: DMatrix<f64>,
    },
    Dual {
        vals: DVector<f64>,
        vecs: DMatrix<f64>,
        /// `Uᵀ t`
        proj: DVector<f64>,
    },
}

/// One symmetric eigendecomposition of `ZᵀZ` (or `ZZᵀ` when `n < p`)
/// serving every λ: coefficients, fitted values and hat-matrix leverages.
#[derive(Debug, Clone)]
pub struct RidgePath {
    x: CsrMatrix,
    center: Centering,
    basis: Basis,
}

impl RidgePath {
    pub fn new(x: &CsrMatrix, y: &[f64], opts: &RidgeOptions) -> Result<Self> {
        let center = Centering::new(x, y, opts)?;
        let t = center.targets(y);
        let basis = match resolve_form(opts.form, x.n_rows(), x.n_cols()) {
            SolveForm::Primal => {
                let eig = SymmetricEigen::new(center.primal_gram(x));
                let vals = eig.eigenvalues.map(|v| v.max(0.0));
                let zt = DVector::from_vec(center.z_tr_mul(x, &t));
                let proj = eig.eigenvectors.tr_mul(&zt);
                let zv = center.dense_z(x) * &eig.eigenvectors;
                Basis::Primal {
                    vals,
                    vecs: eig.eigenvectors,
                    proj,
                    zv,
                }
            }
            SolveForm::Dual | SolveForm::Auto => {
                let eig = SymmetricEigen::new(center.dual_gram(x));
                let vals = eig.eigenvalues.map(|v| v.max(0.0));
                let proj = eig.eigenvectors.tr_mul(&t);
                Basis::Dual {
                    vals,
                    vecs: eig.eigenvectors,
                    proj,
                }
            }
        };
        Ok(RidgePath {
            x: x.clone(),
            center,
            basis,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.n_rows()
    }

    fn eigenvalues(&self) -> &DVector<f64> {
        match &self.basis {
            Basis::Primal { vals, .. } | Basis::Dual { vals, .. } => vals,
        }
    }

    /// Sum of eigenvalues, i.e. `tr(ZᵀZ)`.
    pub fn trace(&self) -> f64 {
        self.eigenvalues().sum()
    }

    fn check(&self, lambda: f64) -> Result<()> {
        check_lambda(lambda)?;
        if lambda == 0.0 {
            let vals = self.eigenvalues();
            let max = vals.max();
            if !vals.is_empty() && (vals.min().is_nan() || vals.min() <= 1e-12 * max.max(f64::MIN_POSITIVE)) {
                return Err(Error::RankDeficient(
                    "rank-deficient design with lambda = 0".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn coefficients(&self, lambda: f64) -> Result<Vec<f64>> {
        self.check(lambda)?;
        Ok(match &self.basis {
            Basis::Primal { vals, vecs, proj, .. } => {
                let scaled = DVector::from_iterator(
                    vals.len(),
                    vals.iter().zip(proj.iter()).map(|(d, c)| c / (d + lambda)),
                );
                (vecs * scaled).as_slice().to_vec()
            }
            Basis::Dual { vals, vecs, proj } => {
                let scaled = DVector::from_iterator(
                    vals.len(),
                    vals.iter().zip(proj.iter()).map(|(d, c)| c / (d + lambda)),
                );
                let alpha = vecs * scaled;
                self.center.z_tr_mul(&self.x, &alpha)
            }
        })
    }

    pub fn model(&self, lambda: f64) -> Result<LinearModel> {
        let beta = self.coefficients(lambda)?;
        Ok(assemble(&self.center, beta, lambda, self.n_rows()))
    }

    /// In-sample predictions `ŷ`.
    pub fn fitted(&self, lambda: f64) -> Result<Vec<f64>> {
        self.check(lambda)?;
        let f = match &self.basis {
            Basis::Primal { vals, proj, zv, .. } => {
                let scaled = DVector::from_iterator(
                    vals.len(),
                    vals.iter().zip(proj.iter()).map(|(d, c)| c / (d + lambda)),
                );
                zv * scaled
            }
            Basis::Dual { vals, vecs, proj } => {
                let scaled = DVector::from_iterator(
                    vals.len(),
                    vals.iter().zip(proj.iter()).map(|(d, c)| c * d / (d + lambda)),
                );
                vecs * scaled
            }
        };
        Ok(f.iter()
            .zip(&self.center.sqrt_w)
            .map(|(v, s)| self.center.y_mean + v / s)
            .collect())
    }

    /// Diagonal of the hat matrix, intercept included.
    pub fn leverages(&self, lambda: f64) -> Result<Vec<f64>> {
        self.check(lambda)?;
        let n = self.n_rows();
        let lev = match &self.basis {
            Basis::Primal { vals, zv, .. } => (0..n)
                .map(|i| {
                    zv.row(i)
                        .iter()
                        .zip(vals.iter())
                        .map(|(z, d)| z * z / (d + lambda))
                        .sum::<f64>()
                })
                .collect::<Vec<_>>(),
            Basis::Dual { vals, vecs, .. } => {
                let shrink: Vec<f64> = vals.iter().map(|d| d / (d + lambda)).collect();
                (0..n)
                    .map(|i| {
                        vecs.row(i)
                            .iter()
                            .zip(&shrink)
                            .map(|(u, s)| u * u * s)
                            .sum::<f64>()
                    })
                    .collect()
            }
        };
        Ok(lev
            .into_iter()
            .enumerate()
            .map(|(i, h)| h + self.center.intercept_leverage(i))
            .collect())
    }

    /// Leave-one-out residuals `(y_i − ŷ_i) / (1 − h_i)`.
    pub fn loo_residuals(&self, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
        let fitted = self.fitted(lambda)?;
        let lev = self.leverages(lambda)?;
        y.iter()
            .zip(fitted)
            .zip(lev)
            .enumerate()
            .map(|(row, ((yi, fi), h))| {
                if h >= LEVERAGE_LIMIT {
                    Err(Error::DegenerateLeverage { row, leverage: h })
                } else {
                    Ok((yi - fi) / (1.0 - h))
                }
            })
            .collect()
    }
}

/// Leave-one-out residuals `y_i − ŷ_(−i)` for one λ.
pub fn loocv_errors(x: &CsrMatrix, y: &[f64], lambda: f64, opts: &RidgeOptions) -> Result<Vec<f64>> {
    if x.n_rows() < 2 {
        return Err(Error::Data("leave-one-out needs at least 2 rows".into()));
    }
    RidgePath::new(x, y, opts)?.loo_residuals(y, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_intercept() -> RidgeOptions<'static> {
        RidgeOptions {
            fit_intercept: false,
            ..Default::default()
        }
    }

    #[test]
    fn identity_design() {
        let x = CsrMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let m = fit_ridge(&x, &[3.0, 5.0], 0.0, &no_intercept()).unwrap();
        assert!((m.weights[0] - 3.0).abs() < 1e-12 && (m.weights[1] - 5.0).abs() < 1e-12);
        assert_eq!(m.intercept, 0.0);
        let m = fit_ridge(&x, &[3.0, 5.0], 1.0, &no_intercept()).unwrap();
        assert!((m.weights[0] - 1.5).abs() < 1e-12 && (m.weights[1] - 2.5).abs() < 1e-12);
        for form in [SolveForm::Primal, SolveForm::Dual] {
            let opts = RidgeOptions { form, ..no_intercept() };
            let m = fit_ridge(&x, &[3.0, 5.0], 1.0, &opts).unwrap();
            assert!((m.weights[1] - 2.5).abs() < 1e-12);
        }
        let path = RidgePath::new(&x, &[3.0, 5.0], &no_intercept()).unwrap();
        let b = path.coefficients(1.0).unwrap();
        assert!((b[0] - 1.5).abs() < 1e-12 && (b[1] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn singular_without_penalty() {
        let x = CsrMatrix::from_dense(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]);
        let y = [1.0, 2.0, 3.0];
        assert!(matches!(
            fit_ridge(&x, &y, 0.0, &RidgeOptions::default()),
            Err(Error::RankDeficient(_))
        ));
        assert!(fit_ridge(&x, &y, 0.1, &RidgeOptions::default()).is_ok());
        let path = RidgePath::new(&x, &y, &RidgeOptions::default()).unwrap();
        assert!(matches!(path.coefficients(0.0), Err(Error::RankDeficient(_))));
        // n < p with an intercept: the centered Gram has rank n - 1
        let wide = CsrMatrix::from_dense(&[vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 1.0]]);
        assert!(matches!(
            fit_ridge(&wide, &[1.0, 2.0], 0.0, &RidgeOptions::default()),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn loo_of_a_mean() {
        let x = CsrMatrix::zeros(2, 1);
        let e = loocv_errors(&x, &[0.0, 2.0], 1.0, &RidgeOptions::default()).unwrap();
        assert!((e[0] + 2.0).abs() < 1e-12 && (e[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_rows_share_loo_error() {
        let x = CsrMatrix::from_dense(&[
            vec![1.0, 0.5],
            vec![1.0, 0.5],
            vec![0.0, 1.0],
            vec![2.0, 0.0],
            vec![0.3, 0.3],
        ]);
        let y = [1.0, 1.0, -1.0, 0.5, 0.0];
        let e = loocv_errors(&x, &y, 0.2, &RidgeOptions::default()).unwrap();
        assert!((e[0] - e[1]).abs() < 1e-12);
    }

    #[test]
    fn degenerate_leverage_is_reported() {
        // with an intercept and lambda = 0, a single row carrying a unique
        // column is interpolated exactly: h = 1
        let x = CsrMatrix::from_dense(&[vec![0.0], vec![0.0], vec![1.0]]);
        let err = loocv_errors(&x, &[1.0, 2.0, 3.0], 0.0, &RidgeOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateLeverage { row: 2, .. }));
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = CsrMatrix::zeros(2, 1);
        assert!(fit_ridge(&x, &[1.0], 1.0, &RidgeOptions::default()).is_err());
        assert!(fit_ridge(&x, &[1.0, 2.0], -1.0, &RidgeOptions::default()).is_err());
        let w = [1.0, 0.0];
        assert!(fit_ridge(&x, &[1.0, 2.0], 1.0, &RidgeOptions::weighted(Some(&w))).is_err());
    }
}
