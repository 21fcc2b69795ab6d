use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use super::{build_design, ols, within_transform, AnalysisRow, Dependent, RegressionResult, RegressionSpec, CONTROLS};
use crate::{Error, Result};

/// Composes design, within transform and least squares for one spec.
/// `r2` is computed against the raw dependent variable, `within_r2`
/// against the demeaned one.
pub fn fit_spec(rows: &[AnalysisRow], spec: &RegressionSpec) -> Result<RegressionResult> {
    let design = build_design(rows, spec)?;
    let (xt, yt) = within_transform(&design.x, &design.y, &design.groups);
    let mut res = ols(&xt, &yt, &design.columns, design.n_groups())?;

    let mean = design.y.mean();
    let tss = design.y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    res.r2 = if tss > 0.0 { 1.0 - res.rss / tss } else { f64::NAN };
    let k_full = res.coefficients.len() + design.n_groups() - 1;
    res.f_stat_full = if k_full > 0 {
        ((tss - res.rss) / k_full as f64) / (res.rss / res.df_resid as f64)
    } else {
        f64::NAN
    };
    res.fitted = design.y.iter().zip(&res.residuals).map(|(y, e)| y - e).collect();
    let mut dropped = design.dropped;
    dropped.append(&mut res.dropped);
    res.dropped = dropped;
    res.facility_ids = design.facility_ids;
    res.label = spec.to_string();
    res.spec = Some(spec.clone());
    Ok(res)
}

/// Converts a coefficient on the IHS scale into a percent change in cases.
pub trait SemiElasticityAdjustment {
    fn percent(&self, beta: f64, delta: f64) -> f64;
}

/// `100 · (exp(β·Δ) − 1)`, the log-approximation of the IHS model.
#[derive(Clone, Copy, Debug, Default)]
pub struct Exponential;

impl SemiElasticityAdjustment for Exponential {
    fn percent(&self, beta: f64, delta: f64) -> f64 {
        100.0 * (beta * delta).exp_m1()
    }
}

/// `100 · β · Δ · factor`, a linear change multiplied by a fixed
/// adjustment factor.
#[derive(Clone, Copy, Debug)]
pub struct ScaledLinear {
    pub factor: f64,
}

impl SemiElasticityAdjustment for ScaledLinear {
    fn percent(&self, beta: f64, delta: f64) -> f64 {
        100.0 * beta * delta * self.factor
    }
}

/// Percent change in cases for a change `delta` in a regressor, using the
/// default [`Exponential`] adjustment.
pub fn semi_elasticity(beta: f64, delta: f64) -> f64 {
    Exponential.percent(beta, delta)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Counterfactual {
    /// `Σ sinh(fitted)`.
    pub fitted_cases: f64,
    /// `Σ sinh(fitted − network terms)`.
    pub counterfactual_cases: f64,
    pub reduction_percent: f64,
}

/// Predicted percent drop in total cases when every network regressor is
/// set to zero, keeping fixed effects and controls at their fitted values.
/// `rows` must be the sample the result was fitted on.
pub fn counterfactual_reduction(result: &RegressionResult, rows: &[AnalysisRow]) -> Result<Counterfactual> {
    let spec = result
        .spec
        .as_ref()
        .ok_or_else(|| Error::Model("counterfactual needs a result from fit_spec".into()))?;
    if spec.dependent != Dependent::IhsCases {
        return Err(Error::Model("counterfactual is defined for the IHS model only".into()));
    }
    if spec.network_regressors().is_empty() {
        return Err(Error::Model("counterfactual needs network regressors".into()));
    }
    if rows.len() != result.fitted.len()
        || rows
            .iter()
            .zip(&result.facility_ids)
            .any(|(r, id)| &r.facility_id != id)
    {
        return Err(Error::Model("counterfactual rows differ from the fitted sample".into()));
    }
    let betas: Vec<_> = spec
        .network_regressors()
        .iter()
        .map(|m| (*m, result.coefficient(m.name()).map_or(0.0, |c| c.estimate)))
        .collect();
    let mut fitted_cases = 0.0;
    let mut counterfactual_cases = 0.0;
    for (row, &fit) in rows.iter().zip(&result.fitted) {
        let network: f64 = betas.iter().map(|(m, b)| b * m.value(row)).sum();
        fitted_cases += fit.sinh();
        counterfactual_cases += (fit - network).sinh();
    }
    if fitted_cases == 0.0 {
        return Err(Error::Model("fitted cases sum to zero".into()));
    }
    Ok(Counterfactual {
        fitted_cases,
        counterfactual_cases,
        reduction_percent: 100.0 * (1.0 - counterfactual_cases / fitted_cases),
    })
}

/// `+` p<0.05, `*` p<0.01, `**` p<0.001, `***` p<0.0001.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.0001 {
        "***"
    } else if p < 0.001 {
        "**"
    } else if p < 0.01 {
        "*"
    } else if p < 0.05 {
        "+"
    } else {
        ""
    }
}

pub fn write_coefficients<W: Write>(sink: W, results: &[RegressionResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "model",
        "variable",
        "estimate",
        "std_error",
        "t_value",
        "p_value",
        "stars",
    ])?;
    for r in results {
        for c in &r.coefficients {
            w.write_record([
                r.label.as_str(),
                &c.name,
                &c.estimate.to_string(),
                &c.std_error.to_string(),
                &c.t_value.to_string(),
                &c.p_value.to_string(),
                significance_stars(c.p_value),
            ])?;
        }
        for name in &r.dropped {
            w.write_record([r.label.as_str(), name, "", "", "", "", "dropped"])?;
        }
    }
    w.flush().map_err(|e| Error::io("coefficient output", e))?;
    Ok(())
}

pub fn write_fit_statistics<W: Write>(sink: W, results: &[RegressionResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "model",
        "n_obs",
        "n_groups",
        "df_resid",
        "rss",
        "r2",
        "within_r2",
        "f_stat",
        "f_stat_full",
    ])?;
    for r in results {
        w.write_record([
            r.label.clone(),
            r.n_obs.to_string(),
            r.n_groups.to_string(),
            r.df_resid.to_string(),
            r.rss.to_string(),
            r.r2.to_string(),
            r.within_r2.to_string(),
            r.f_stat.to_string(),
            r.f_stat_full.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("fit statistics output", e))?;
    Ok(())
}

/// Side-by-side text table, one column per model: estimates with stars and
/// standard errors in parentheses, then observations, F-stat and within R².
pub fn format_table(results: &[RegressionResult]) -> String {
    let mut variables: Vec<String> = Vec::new();
    for measure in super::NetworkMeasure::ALL {
        if results.iter().any(|r| r.coefficient(measure.name()).is_some()) {
            variables.push(measure.name().to_owned());
        }
    }
    for control in CONTROLS {
        if results.iter().any(|r| r.coefficient(control).is_some()) {
            variables.push(control.to_owned());
        }
    }
    let width = 16;
    let label_width = variables.iter().map(String::len).max().unwrap_or(0).max(12);
    let mut out = String::new();
    let _ = write!(out, "{:label_width$}", "");
    for k in 1..=results.len() {
        let _ = write!(out, "{:>width$}", format!("({k})"));
    }
    out.push('\n');
    for v in &variables {
        let _ = write!(out, "{v:label_width$}");
        for r in results {
            let cell = r
                .coefficient(v)
                .map(|c| format!("{:.4}{}", c.estimate, significance_stars(c.p_value)))
                .unwrap_or_default();
            let _ = write!(out, "{cell:>width$}");
        }
        out.push('\n');
        let _ = write!(out, "{:label_width$}", "");
        for r in results {
            let cell = r
                .coefficient(v)
                .map(|c| format!("({:.4})", c.std_error))
                .unwrap_or_default();
            let _ = write!(out, "{cell:>width$}");
        }
        out.push('\n');
    }
    type Cell = fn(&RegressionResult) -> String;
    let footer: [(&str, Cell); 4] = [
        ("Observations", |r| r.n_obs.to_string()),
        ("F-stat", |r| format!("{:.2}", r.f_stat)),
        ("R2", |r| format!("{:.3}", r.r2)),
        ("Within R2", |r| format!("{:.3}", r.within_r2)),
    ];
    for (name, value) in footer {
        let _ = write!(out, "{name:label_width$}");
        for r in results {
            let _ = write!(out, "{:>width$}", value(r));
        }
        out.push('\n');
    }
    out.push_str("Standard errors in parentheses. + p<0.05, * p<0.01, ** p<0.001, *** p<0.0001\n");
    for (k, r) in results.iter().enumerate() {
        let _ = writeln!(out, "({}) {}", k + 1, r.label);
    }
    out
}

pub fn write_analysis_rows<W: Write>(sink: W, rows: &[AnalysisRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "facility_id",
        "state",
        "county_fips",
        "cases",
        "beds",
        "high_medicaid",
        "high_black",
        "urban",
        "cms_rating",
        "infection_violation",
        "degree",
        "strength",
        "wand",
        "eigencentrality",
    ])?;
    let flag = |b: bool| if b { "1" } else { "0" }.to_owned();
    for r in rows {
        w.write_record([
            r.facility_id.clone(),
            r.state.clone(),
            r.county_fips.clone(),
            r.cases.to_string(),
            r.beds.to_string(),
            flag(r.high_medicaid),
            flag(r.high_black),
            flag(r.urban),
            r.cms_rating.to_string(),
            flag(r.infection_violation),
            r.degree.to_string(),
            r.strength.to_string(),
            r.wand.to_string(),
            r.eigencentrality.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("analysis sample output", e))?;
    Ok(())
}

/// Alternate case counts, `facility_id,cases`; empty or `NA` means not
/// reported.
pub fn read_cases<R: Read>(source: R) -> Result<HashMap<String, Option<u32>>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Input(format!("case file lacks column {name}")))
    };
    let (id_col, cases_col) = (find("facility_id")?, find("cases")?);
    let mut out = HashMap::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let raw = row.get(cases_col).unwrap_or("");
        let cases = if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
            None
        } else {
            Some(
                raw.parse()
                    .map_err(|_| Error::Input(format!("case file line {line}: bad cases {raw:?}")))?,
            )
        };
        let id = row.get(id_col).unwrap_or("").to_owned();
        if out.insert(id.clone(), cases).is_some() {
            return Err(Error::Input(format!("case file line {line}: duplicate facility {id}")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::NetworkMeasure;
    use super::*;

    fn row(id: usize, state: &str, cases: u32, degree: f64) -> AnalysisRow {
        AnalysisRow {
            facility_id: format!("F{id:03}"),
            state: state.into(),
            county_fips: format!("{state}{}", id % 3),
            cases,
            beds: 40 + (id as u32 * 7) % 90,
            high_medicaid: id.is_multiple_of(2),
            high_black: id.is_multiple_of(5),
            urban: !id.is_multiple_of(3),
            cms_rating: (id % 5 + 1) as u8,
            infection_violation: id.is_multiple_of(4),
            degree,
            strength: degree * 1.5 + (id % 3) as f64,
            wand: (id % 11) as f64,
            eigencentrality: ((id * 37) % 100) as f64 / 100.0,
        }
    }

    fn sample() -> Vec<AnalysisRow> {
        (0..60)
            .map(|i| {
                let state = ["AA", "AB", "AC"][i % 3];
                row(i, state, ((i * 13) % 17) as u32, ((i * 7) % 19) as f64)
            })
            .collect()
    }

    #[test]
    fn semi_elasticity_examples() {
        assert_eq!(semi_elasticity(0.0, 10.0), 0.0);
        assert!((semi_elasticity(0.0137, 10.0) - 100.0 * (0.137f64.exp() - 1.0)).abs() < 1e-12);
        assert!((ScaledLinear { factor: 1.95 }.percent(0.0137, 10.0) - 26.715).abs() < 1e-9);
    }

    #[test]
    fn stars_thresholds() {
        assert_eq!(significance_stars(0.2), "");
        assert_eq!(significance_stars(0.04), "+");
        assert_eq!(significance_stars(0.005), "*");
        assert_eq!(significance_stars(0.0005), "**");
        assert_eq!(significance_stars(0.00001), "***");
    }

    #[test]
    fn binary_dependent_is_indicator() {
        let rows = vec![row(1, "AA", 0, 1.0), row(2, "AA", 5, 2.0), row(3, "AA", 2, 3.0)];
        let spec: RegressionSpec = "binary:degree:state".parse().unwrap();
        let d = build_design(&rows, &spec).unwrap();
        assert_eq!(d.y.as_slice(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn design_shape_and_order() {
        let rows = sample();
        let spec = RegressionSpec::ihs_state(&[NetworkMeasure::Degree]).unwrap();
        let three = [rows[0].clone(), rows[3].clone(), rows[6].clone()];
        let d = build_design(&three, &spec).unwrap();
        assert_eq!(d.x.nrows(), 3);
        assert_eq!(d.columns[0], "degree");
        assert_eq!(d.x.ncols() + d.dropped.len(), 1 + CONTROLS.len());
        assert_eq!(d.y[0], super::super::ihs(f64::from(rows[0].cases)));
    }

    #[test]
    fn county_spec_has_no_urban() {
        let spec: RegressionSpec = "ihs:degree:county".parse().unwrap();
        let d = build_design(&sample(), &spec).unwrap();
        assert!(!d.columns.iter().any(|c| c == "urban"));
        assert!(!d.dropped.iter().any(|c| c == "urban"));
    }

    #[test]
    fn fit_reports_consistent_statistics() {
        let rows = sample();
        let spec: RegressionSpec = "ihs:wand+eigencentrality:state".parse().unwrap();
        let r = fit_spec(&rows, &spec).unwrap();
        assert_eq!(r.n_obs, 60);
        assert_eq!(r.n_groups, 3);
        assert!(r.within_r2 <= r.r2 + 1e-12);
        assert_eq!(r.df_resid, 60 - r.coefficients.len() - 3);
        let table = format_table(&[r]);
        assert!(table.contains("Observations"));
        assert!(table.contains("wand"));
    }

    #[test]
    fn zero_network_effect_means_zero_reduction() {
        let rows = sample();
        let spec = RegressionSpec::ihs_state(&[NetworkMeasure::Degree]).unwrap();
        let mut r = fit_spec(&rows, &spec).unwrap();
        for c in &mut r.coefficients {
            if c.name == "degree" {
                c.estimate = 0.0;
            }
        }
        let cf = counterfactual_reduction(&r, &rows).unwrap();
        assert_eq!(cf.reduction_percent, 0.0);
    }

    #[test]
    fn counterfactual_rejects_binary_and_mismatched_rows() {
        let rows = sample();
        let spec: RegressionSpec = "binary:degree:state".parse().unwrap();
        let r = fit_spec(&rows, &spec).unwrap();
        assert!(counterfactual_reduction(&r, &rows).is_err());
        let spec = RegressionSpec::ihs_state(&[NetworkMeasure::Degree]).unwrap();
        let r = fit_spec(&rows, &spec).unwrap();
        assert!(counterfactual_reduction(&r, &rows[1..]).is_err());
    }

    #[test]
    fn case_file_parsing() {
        let text = "facility_id,cases\nA,3\nB,NA\nC,\n";
        let m = read_cases(text.as_bytes()).unwrap();
        assert_eq!(m["A"], Some(3));
        assert_eq!(m["B"], None);
        assert_eq!(m["C"], None);
        assert!(read_cases("facility_id,cases\nA,x\n".as_bytes()).is_err());
        assert!(read_cases("facility_id,cases\nA,1\nA,2\n".as_bytes()).is_err());
    }
}
