use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::RegressionSpec;
use crate::{Error, Result};

/// Relative tolerance for the rank decision: a column is dropped when the
/// part of it not explained by earlier columns has norm at most
/// `RANK_TOL` times its own norm.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionResult {
    pub label: String,
    pub spec: Option<RegressionSpec>,
    pub coefficients: Vec<Coefficient>,
    /// Regressors removed for lack of variation or collinearity.
    pub dropped: Vec<String>,
    pub n_obs: usize,
    /// Fixed-effect groups absorbed before estimation.
    pub n_groups: usize,
    pub df_resid: usize,
    pub rss: f64,
    /// `1 − RSS / Σ(y − ȳ)²` on the raw dependent variable.
    pub r2: f64,
    /// `1 − RSS / Σ ỹ²` on the demeaned dependent variable.
    pub within_r2: f64,
    /// Joint test of the slope coefficients.
    pub f_stat: f64,
    /// Joint test of slopes and fixed effects.
    pub f_stat_full: f64,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub facility_ids: Vec<String>,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// Householder QR that visits columns left to right and skips any column
/// already spanned by the kept ones.
struct SequentialQr {
    /// Upper-triangular factor for the kept columns.
    r: DMatrix<f64>,
    reflectors: Vec<(usize, DVector<f64>, f64)>,
    kept: Vec<usize>,
}

impl SequentialQr {
    fn new(x: &DMatrix<f64>) -> Self {
        let (n, p) = x.shape();
        let mut a = x.clone();
        let mut kept = Vec::new();
        let mut reflectors = Vec::new();
        let mut row = 0;
        for j in 0..p {
            let norm = x.column(j).norm();
            if row == n || norm == 0.0 {
                continue;
            }
            let sub = a.view((row, j), (n - row, 1)).clone_owned();
            let alpha = sub.norm();
            if alpha <= RANK_TOL * norm {
                continue;
            }
            let sign = if sub[0] >= 0.0 { 1.0 } else { -1.0 };
            let mut v = DVector::from_iterator(n - row, sub.iter().copied());
            v[0] += sign * alpha;
            let beta = 2.0 / v.norm_squared();
            for c in j..p {
                let mut col = a.column_mut(c);
                let mut tail = col.rows_mut(row, n - row);
                let s = beta * v.dot(&tail);
                tail.axpy(-s, &v, 1.0);
            }
            reflectors.push((row, v, beta));
            kept.push(j);
            row += 1;
        }
        let k = kept.len();
        let r = DMatrix::from_fn(k, k, |i, c| if i <= c { a[(i, kept[c])] } else { 0.0 });
        Self { r, reflectors, kept }
    }

    /// `Qᵀy`, first `k` entries.
    fn qt_y(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut z = y.clone();
        let n = z.len();
        for (row, v, beta) in &self.reflectors {
            let mut tail = z.rows_mut(*row, n - row);
            let s = beta * v.dot(&tail);
            tail.axpy(-s, v, 1.0);
        }
        z.rows(0, self.kept.len()).clone_owned()
    }

    fn solve_upper(&self, b: &DVector<f64>) -> DVector<f64> {
        let k = self.kept.len();
        let mut x = DVector::zeros(k);
        for i in (0..k).rev() {
            let mut s = b[i];
            for c in i + 1..k {
                s -= self.r[(i, c)] * x[c];
            }
            x[i] = s / self.r[(i, i)];
        }
        x
    }

    /// `R⁻¹`, so that `(XᵀX)⁻¹ = R⁻¹ R⁻ᵀ`.
    fn r_inverse(&self) -> DMatrix<f64> {
        let k = self.kept.len();
        let mut inv = DMatrix::zeros(k, k);
        for c in 0..k {
            let mut e = DVector::zeros(k);
            e[c] = 1.0;
            inv.set_column(c, &self.solve_upper(&e));
        }
        inv
    }
}

/// Least squares of `y` on `x` with classical standard errors.
///
/// `dof_absorbed` is the number of parameters removed before the call (the
/// fixed-effect groups when `x` and `y` are demeaned); it enters the residual
/// degrees of freedom `n − k − dof_absorbed`. Collinear columns are dropped
/// left to right and listed in [`RegressionResult::dropped`]. `fitted` is
/// `y − residuals` on the data as given.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>, columns: &[String], dof_absorbed: usize) -> Result<RegressionResult> {
    let (n, p) = x.shape();
    if columns.len() != p {
        return Err(Error::Model(format!("{} column names for {p} columns", columns.len())));
    }
    if y.len() != n {
        return Err(Error::Model(format!("y has {} rows, x has {n}", y.len())));
    }
    if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
        return Err(Error::Model("regression data contains non-finite values".into()));
    }
    let qr = SequentialQr::new(x);
    let k = qr.kept.len();
    let dropped: Vec<String> = (0..p)
        .filter(|j| !qr.kept.contains(j))
        .map(|j| columns[j].clone())
        .collect();
    for name in &dropped {
        log::warn!("dropping collinear regressor {name}");
    }
    let df_resid = n.checked_sub(k + dof_absorbed).filter(|&d| d > 0).ok_or_else(|| {
        Error::Model(format!(
            "{n} observations cannot identify {k} slopes and {dof_absorbed} fixed effects"
        ))
    })?;

    let beta = qr.solve_upper(&qr.qt_y(y));
    let xk = x.select_columns(&qr.kept);
    let residuals = y - &xk * &beta;
    let rss = residuals.norm_squared();
    let sigma2 = rss / df_resid as f64;
    let rinv = qr.r_inverse();

    let t_dist = StudentsT::new(0.0, 1.0, df_resid as f64).map_err(|e| Error::Model(e.to_string()))?;
    let coefficients = qr
        .kept
        .iter()
        .enumerate()
        .map(|(c, &j)| {
            let std_error = (sigma2 * rinv.row(c).norm_squared()).sqrt();
            let t_value = beta[c] / std_error;
            let p_value = if t_value.is_finite() {
                2.0 * t_dist.sf(t_value.abs())
            } else if t_value.is_nan() {
                f64::NAN
            } else {
                0.0
            };
            Coefficient {
                name: columns[j].clone(),
                estimate: beta[c],
                std_error,
                t_value,
                p_value,
            }
        })
        .collect();

    let mean = y.mean();
    let tss = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { f64::NAN };
    let f_stat = if k > 0 {
        ((tss - rss) / k as f64) / sigma2
    } else {
        f64::NAN
    };
    Ok(RegressionResult {
        label: String::new(),
        spec: None,
        coefficients,
        dropped,
        n_obs: n,
        n_groups: dof_absorbed,
        df_resid,
        rss,
        r2,
        within_r2: r2,
        f_stat,
        f_stat_full: f_stat,
        fitted: (y - &residuals).iter().copied().collect(),
        residuals: residuals.iter().copied().collect(),
        facility_ids: Vec::new(),
    })
}
