use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{AnalysisRow, RegressionSpec, RANK_TOL};
use crate::{Error, Result};

/// Raw (not yet demeaned) regression data for one specification.
#[derive(Clone, Debug)]
pub struct Design {
    /// `n × k`, columns named by [`Design::columns`].
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Fixed-effect group index per row, in `0..group_labels.len()`.
    pub groups: Vec<usize>,
    pub group_labels: Vec<String>,
    pub columns: Vec<String>,
    /// Columns removed because they do not vary within groups.
    pub dropped: Vec<String>,
    pub facility_ids: Vec<String>,
}

impl Design {
    pub fn n_groups(&self) -> usize {
        self.group_labels.len()
    }
}

/// Assembles the design for `spec`. Regressors that are constant within
/// every fixed-effect group carry no information once the effects are
/// absorbed; they are dropped and reported.
pub fn build_design(rows: &[AnalysisRow], spec: &RegressionSpec) -> Result<Design> {
    if rows.is_empty() {
        return Err(Error::Model("regression sample is empty".into()));
    }
    let labels: BTreeMap<&str, usize> = rows
        .iter()
        .map(|r| r.group(spec.fe_level))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(k, g)| (g, k))
        .collect();
    let groups: Vec<usize> = rows.iter().map(|r| labels[r.group(spec.fe_level)]).collect();
    let n_groups = labels.len();

    let mut columns = Vec::new();
    let mut dropped = Vec::new();
    let mut data: Vec<Vec<f64>> = Vec::new();
    for name in spec.column_names() {
        let col: Vec<f64> = match spec.network_regressors().iter().find(|m| m.name() == name) {
            Some(m) => rows.iter().map(|r| m.value(r)).collect(),
            None => rows.iter().map(|r| r.control(&name)).collect(),
        };
        let raw_norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let demeaned = demean(&col, &groups, n_groups);
        let within_norm = demeaned.iter().map(|v| v * v).sum::<f64>().sqrt();
        if raw_norm == 0.0 || within_norm <= RANK_TOL * raw_norm {
            log::warn!("{spec}: dropping {name}, no variation within fixed-effect groups");
            dropped.push(name);
        } else {
            columns.push(name);
            data.push(col);
        }
    }
    let n = rows.len();
    let x = DMatrix::from_fn(n, data.len(), |i, j| data[j][i]);
    let y = DVector::from_iterator(n, rows.iter().map(|r| r.dependent(spec.dependent)));
    Ok(Design {
        x,
        y,
        groups,
        group_labels: labels.into_keys().map(str::to_owned).collect(),
        columns,
        dropped,
        facility_ids: rows.iter().map(|r| r.facility_id.clone()).collect(),
    })
}

fn demean(col: &[f64], groups: &[usize], n_groups: usize) -> Vec<f64> {
    let mut sum = vec![0.0; n_groups];
    let mut count = vec![0usize; n_groups];
    for (&v, &g) in col.iter().zip(groups) {
        sum[g] += v;
        count[g] += 1;
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    // second pass on the residual mean keeps large, nearly constant columns exact
    let mut out: Vec<f64> = col.iter().zip(groups).map(|(&v, &g)| v - mean[g]).collect();
    let mut adj = vec![0.0; n_groups];
    for (&v, &g) in out.iter().zip(groups) {
        adj[g] += v;
    }
    for (v, &g) in out.iter_mut().zip(groups) {
        *v -= adj[g] / count[g] as f64;
    }
    out
}

/// Subtracts group means from every column of `x` and from `y`.
pub fn within_transform(x: &DMatrix<f64>, y: &DVector<f64>, groups: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    assert_eq!(x.nrows(), groups.len());
    assert_eq!(y.len(), groups.len());
    let n_groups = groups.iter().copied().max().map_or(0, |g| g + 1);
    let mut xt = DMatrix::zeros(x.nrows(), x.ncols());
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        for (i, v) in demean(&col, groups, n_groups).into_iter().enumerate() {
            xt[(i, j)] = v;
        }
    }
    let yv: Vec<f64> = y.iter().copied().collect();
    let yt = DVector::from_vec(demean(&yv, groups, n_groups));
    (xt, yt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demeaned_groups_sum_to_zero() {
        let x = DMatrix::from_row_slice(5, 1, &[1.0, 2.0, 3.0, 10.0, 20.0]);
        let y = DVector::from_vec(vec![0.0, 1.0, 2.0, 5.0, 5.0]);
        let (xt, yt) = within_transform(&x, &y, &[0, 0, 0, 1, 1]);
        assert_eq!(
            xt.column(0).iter().copied().collect::<Vec<_>>(),
            vec![-1.0, 0.0, 1.0, -5.0, 5.0]
        );
        assert_eq!(yt.as_slice(), &[-1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn singleton_group_demeans_to_zero() {
        let x = DMatrix::from_row_slice(3, 1, &[4.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let (xt, _) = within_transform(&x, &y, &[0, 1, 1]);
        assert_eq!(xt[(0, 0)], 0.0);
    }
}
