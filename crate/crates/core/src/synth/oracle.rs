//! Brute-force reference implementations used to check the pipeline.
//!
//! These deliberately share nothing with the production code paths: metrics
//! are plain sums over a dense adjacency matrix with a dense symmetric
//! eigensolver, and the fixed-effects oracle builds the full group-dummy
//! design and solves it with an SVD.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::econometrics::{AnalysisRow, Dependent, FixedEffects, NetworkMeasure, RegressionSpec};
use crate::{Error, Result};

pub const ORACLE_MAX_NODES: usize = 200;
pub const ORACLE_MAX_ROWS: usize = 200;
pub const ORACLE_MAX_GROUPS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleMetrics {
    pub degree: Vec<u32>,
    pub strength: Vec<u64>,
    pub wand: Vec<f64>,
    pub eigencentrality: Vec<f64>,
    /// Largest eigenvalue of the binary adjacency matrix.
    pub lambda: f64,
}

/// Metrics of an undirected weighted graph on nodes `0..n`, each edge
/// listed once.
pub fn oracle_metrics(n: usize, edges: &[(usize, usize, u32)]) -> Result<OracleMetrics> {
    if n > ORACLE_MAX_NODES {
        return Err(Error::OracleCap {
            what: "nodes",
            size: n,
            cap: ORACLE_MAX_NODES,
        });
    }
    let mut a = vec![vec![0u64; n]; n];
    let mut w = vec![vec![0u64; n]; n];
    for &(i, j, weight) in edges {
        if i >= n || j >= n || i == j || weight == 0 || a[i][j] != 0 {
            return Err(Error::Model(format!("invalid oracle edge ({i}, {j}, {weight})")));
        }
        a[i][j] = 1;
        a[j][i] = 1;
        w[i][j] = u64::from(weight);
        w[j][i] = u64::from(weight);
    }
    let degree: Vec<u32> = (0..n).map(|i| (0..n).map(|j| a[i][j]).sum::<u64>() as u32).collect();
    let strength: Vec<u64> = (0..n).map(|i| (0..n).map(|j| w[i][j] * a[i][j]).sum()).collect();
    let wand = (0..n)
        .map(|i| {
            if strength[i] == 0 {
                0.0
            } else {
                let num: u64 = (0..n).map(|j| w[i][j] * a[i][j] * u64::from(degree[j])).sum();
                num as f64 / strength[i] as f64
            }
        })
        .collect();

    let (eigencentrality, lambda) = if edges.is_empty() {
        (vec![0.0; n], 0.0)
    } else {
        let dense = DMatrix::from_fn(n, n, |i, j| a[i][j] as f64);
        let eig = SymmetricEigen::new(dense);
        let lambda = eig.eigenvalues.max();
        // project the all-ones vector onto the principal eigenspace; this is
        // what power iteration from all ones converges to
        let cutoff = lambda - 1e-9 * lambda.max(1.0);
        let mut v = DVector::zeros(n);
        for (k, &val) in eig.eigenvalues.iter().enumerate() {
            if val >= cutoff {
                let b = eig.eigenvectors.column(k);
                v += b * b.sum();
            }
        }
        let max = v.max();
        let scaled = v.iter().map(|x| if x.abs() < 1e-14 { 0.0 } else { x / max }).collect();
        (scaled, lambda)
    };
    Ok(OracleMetrics {
        degree,
        strength,
        wand,
        eigencentrality,
        lambda,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleFit {
    /// Non-dummy coefficients, in design order.
    pub coefficients: Vec<(String, f64)>,
    pub std_errors: Vec<f64>,
    pub dropped: Vec<String>,
    pub rss: f64,
}

impl OracleFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficients.iter().find(|(n, _)| n == name).map(|(_, b)| *b)
    }
}

fn oracle_column(rows: &[AnalysisRow], name: &str) -> Vec<f64> {
    let b = |v: bool| if v { 1.0 } else { 0.0 };
    rows.iter()
        .map(|r| match name {
            "degree" => r.degree,
            "strength" => r.strength,
            "wand" => r.wand,
            "eigencentrality" => r.eigencentrality,
            "beds" => r.beds as f64,
            "beds_sq" => (r.beds as f64).powi(2),
            "high_medicaid" => b(r.high_medicaid),
            "high_black" => b(r.high_black),
            "cms_1" => b(r.cms_rating == 1),
            "cms_2" => b(r.cms_rating == 2),
            "cms_3" => b(r.cms_rating == 3),
            "cms_4" => b(r.cms_rating == 4),
            "infection_violation" => b(r.infection_violation),
            "urban" => b(r.urban),
            other => panic!("no oracle column {other}"),
        })
        .collect()
}

/// Dummy-variable least squares: one indicator per fixed-effect group, then
/// the regressors `spec` names. Columns are kept left to right only if they add
/// to the span of the columns already kept.
pub fn oracle_fe_ols(rows: &[AnalysisRow], spec: &RegressionSpec) -> Result<OracleFit> {
    if rows.len() > ORACLE_MAX_ROWS {
        return Err(Error::OracleCap {
            what: "rows",
            size: rows.len(),
            cap: ORACLE_MAX_ROWS,
        });
    }
    let label = |r: &AnalysisRow| match spec.fe_level {
        FixedEffects::State => r.state.clone(),
        FixedEffects::County => r.county_fips.clone(),
    };
    let mut groups: Vec<String> = rows.iter().map(label).collect();
    groups.sort();
    groups.dedup();
    if groups.len() > ORACLE_MAX_GROUPS {
        return Err(Error::OracleCap {
            what: "groups",
            size: groups.len(),
            cap: ORACLE_MAX_GROUPS,
        });
    }
    let n = rows.len();
    let mut columns: Vec<(String, Vec<f64>)> = groups
        .iter()
        .map(|g| {
            (
                format!("fe:{g}"),
                rows.iter().map(|r| if &label(r) == g { 1.0 } else { 0.0 }).collect(),
            )
        })
        .collect();
    let n_dummies = columns.len();
    let mut names: Vec<&str> = spec.network_regressors().iter().map(|m| m.name()).collect();
    names.extend(spec.controls().iter().copied());
    for name in names {
        columns.push((name.to_owned(), oracle_column(rows, name)));
    }
    let y = DVector::from_iterator(
        n,
        rows.iter().map(|r| {
            let c = f64::from(r.cases);
            match spec.dependent {
                Dependent::IhsCases => (c + (1.0 + c * c).sqrt()).ln(),
                Dependent::AnyCases => {
                    if r.cases > 0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        }),
    );

    let mut kept: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    for (k, (name, col)) in columns.iter().enumerate() {
        let c = DVector::from_column_slice(col);
        let norm = c.norm();
        let independent = norm > 0.0
            && if kept.is_empty() {
                true
            } else {
                let basis = DMatrix::from_fn(n, kept.len(), |i, j| columns[kept[j]].1[i]);
                let coef = basis
                    .svd(true, true)
                    .solve(&c, 1e-12)
                    .map_err(|e| Error::Model(e.to_owned()))?;
                let basis = DMatrix::from_fn(n, kept.len(), |i, j| columns[kept[j]].1[i]);
                (c - basis * coef).norm() > 1e-7 * norm
            };
        if independent {
            kept.push(k);
        } else if k >= n_dummies {
            dropped.push(name.clone());
        }
    }

    let p = kept.len();
    if n <= p {
        return Err(Error::Model(format!("{n} rows for {p} parameters")));
    }
    let x = DMatrix::from_fn(n, p, |i, j| columns[kept[j]].1[i]);
    let svd = x.clone().svd(true, true);
    let beta = svd.solve(&y, 1e-12).map_err(|e| Error::Model(e.to_owned()))?;
    let resid = &y - &x * &beta;
    let rss = resid.norm_squared();
    let sigma2 = rss / (n - p) as f64;
    let v_t = svd.v_t.as_ref().expect("requested V");
    let s = &svd.singular_values;
    let mut coefficients = Vec::new();
    let mut std_errors = Vec::new();
    for (c, &k) in kept.iter().enumerate() {
        if k < n_dummies {
            continue;
        }
        let var: f64 = (0..p).map(|m| (v_t[(m, c)] / s[m]).powi(2)).sum::<f64>() * sigma2;
        coefficients.push((columns[k].0.clone(), beta[c]));
        std_errors.push(var.sqrt());
    }
    Ok(OracleFit {
        coefficients,
        std_errors,
        dropped,
        rss,
    })
}

/// Random undirected graph with 1 to `max_nodes` nodes, random density and
/// weights in 1..=5. Edges are listed once with `i < j`.
pub fn random_graph(seed: u64, max_nodes: usize) -> (usize, Vec<(usize, usize, u32)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_nodes as u32) as usize;
    let p = rng.random_range(0.0..0.4f64);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                edges.push((i, j, rng.random_range(1..=5)));
            }
        }
    }
    (n, edges)
}

/// Random regression sample and spec within the oracle caps. Some
/// instances carry a control that is constant within groups or a regressor
/// that is collinear with another, so the drop rules get exercised.
pub fn random_analysis_rows(seed: u64) -> (Vec<AnalysisRow>, RegressionSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(40..=ORACLE_MAX_ROWS as u32) as usize;
    let n_groups = rng.random_range(1..=ORACLE_MAX_GROUPS as u32) as usize;
    let dependent = if rng.random_bool(0.8) {
        Dependent::IhsCases
    } else {
        Dependent::AnyCases
    };
    let fe = if rng.random_bool(0.7) {
        FixedEffects::State
    } else {
        FixedEffects::County
    };
    let measures: Vec<NetworkMeasure> = loop {
        let chosen: Vec<_> = NetworkMeasure::ALL
            .into_iter()
            .filter(|_| rng.random_bool(0.5))
            .collect();
        if !chosen.is_empty() {
            break chosen;
        }
    };
    let constant_violation = rng.random_bool(0.2);
    let collinear_strength = rng.random_bool(0.2);
    let no_cms4 = rng.random_bool(0.2);
    let rows = (0..n)
        .map(|i| {
            let g = if i < n_groups {
                i
            } else {
                rng.random_range(0..n_groups as u32) as usize
            };
            let degree = f64::from(rng.random_range(0..30u32));
            let mut cms = rng.random_range(1..=5u8);
            if no_cms4 && cms == 4 {
                cms = 5;
            }
            AnalysisRow {
                facility_id: format!("R{i:04}"),
                state: format!("S{g}"),
                county_fips: format!("{:05}", 1000 + g),
                cases: if rng.random_bool(0.3) {
                    0
                } else {
                    rng.random_range(1..500)
                },
                beds: rng.random_range(20..=250),
                high_medicaid: rng.random_bool(0.5),
                high_black: rng.random_bool(0.3),
                urban: rng.random_bool(0.6),
                cms_rating: cms,
                infection_violation: if constant_violation {
                    g % 2 == 0
                } else {
                    rng.random_bool(0.4)
                },
                degree,
                strength: if collinear_strength {
                    2.0 * degree
                } else {
                    degree + f64::from(rng.random_range(0..20u32))
                },
                wand: rng.random_range(0.0..40.0),
                eigencentrality: rng.random_range(0.0..1.0),
            }
        })
        .collect();
    let spec = RegressionSpec::new(dependent, &measures, fe).expect("non-empty measures");
    (rows, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_degrees() {
        let m = oracle_metrics(3, &[(0, 1, 1), (1, 2, 1), (0, 2, 1)]).unwrap();
        assert_eq!(m.degree, vec![2, 2, 2]);
        assert!((m.lambda - 2.0).abs() < 1e-12);
    }

    #[test]
    fn star_s5() {
        let m = oracle_metrics(5, &[(0, 1, 1), (0, 2, 1), (0, 3, 1), (0, 4, 1)]).unwrap();
        assert_eq!(m.degree, vec![4, 1, 1, 1, 1]);
        assert_eq!(m.eigencentrality[0], 1.0);
        assert!((m.eigencentrality[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn node_cap() {
        assert!(matches!(oracle_metrics(201, &[]), Err(Error::OracleCap { .. })));
    }

    #[test]
    fn one_group_is_plain_ols_with_intercept() {
        let (mut rows, _) = random_analysis_rows(7);
        for r in &mut rows {
            r.state = "S0".into();
        }
        let spec = RegressionSpec::ihs_state(&[NetworkMeasure::Degree]).unwrap();
        let fit = oracle_fe_ols(&rows, &spec).unwrap();
        assert_eq!(fit.coefficients[0].0, "degree");
        assert_eq!(fit.coefficients.len() + fit.dropped.len(), spec.column_names().len());
    }

    #[test]
    fn constant_within_group_control_is_dropped() {
        let (mut rows, _) = random_analysis_rows(11);
        for r in &mut rows {
            r.urban = r.state == "S0";
        }
        let spec = RegressionSpec::ihs_state(&[NetworkMeasure::Wand]).unwrap();
        let fit = oracle_fe_ols(&rows, &spec).unwrap();
        assert!(fit.dropped.contains(&"urban".to_owned()));
    }
}
