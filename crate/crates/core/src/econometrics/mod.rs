//! Fixed-effects regression of facility case counts on network connectivity.
//!
//! The main model regresses `ihs(cases)` on one or more network measures,
//! demographic and quality controls, and state (or county) fixed effects.
//! Fixed effects are absorbed with the within transform, and the slope
//! coefficients are estimated by least squares with classical standard
//! errors.

mod design;
mod ols;
mod report;

pub use design::{build_design, within_transform, Design};
pub use ols::{ols, Coefficient, RegressionResult, RANK_TOL};
pub use report::{
    counterfactual_reduction, fit_spec, format_table, read_cases, semi_elasticity, significance_stars,
    write_analysis_rows, write_coefficients, write_fit_statistics, Counterfactual, Exponential, ScaledLinear,
    SemiElasticityAdjustment,
};

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::ingest::Facility;
use crate::metrics::NetworkMetrics;
use crate::{Error, Result};

/// Inverse hyperbolic sine, `ln(x + √(1 + x²))`.
///
/// Evaluated as `ln_1p(x + x² / (1 + √(1 + x²)))`, which is the same
/// expression rearranged to keep precision near zero; large arguments use
/// `ln(2x)` plus its first correction term.
pub fn ihs(x: f64) -> f64 {
    let ax = x.abs();
    let y = if ax > 1e150 {
        (2.0 * ax).ln() + 0.25 / (ax * ax)
    } else {
        let root = (1.0 + ax * ax).sqrt();
        (ax + ax * ax / (1.0 + root)).ln_1p()
    };
    y.copysign(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dependent {
    /// `ihs(cases)`.
    IhsCases,
    /// `1{cases > 0}`, a linear probability model.
    AnyCases,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NetworkMeasure {
    Degree,
    Strength,
    Wand,
    Eigencentrality,
}

impl NetworkMeasure {
    pub const ALL: [NetworkMeasure; 4] = [Self::Degree, Self::Strength, Self::Wand, Self::Eigencentrality];

    pub fn name(self) -> &'static str {
        match self {
            Self::Degree => "degree",
            Self::Strength => "strength",
            Self::Wand => "wand",
            Self::Eigencentrality => "eigencentrality",
        }
    }

    pub fn value(self, row: &AnalysisRow) -> f64 {
        match self {
            Self::Degree => row.degree,
            Self::Strength => row.strength,
            Self::Wand => row.wand,
            Self::Eigencentrality => row.eigencentrality,
        }
    }
}

impl FromStr for NetworkMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown network measure {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FixedEffects {
    State,
    County,
}

/// One regression column: dependent variable, network regressors and fixed
/// effects level. Controls are fixed; `urban` is left out under county
/// effects because it does not vary within a county.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RegressionSpec {
    pub dependent: Dependent,
    network_regressors: Vec<NetworkMeasure>,
    pub fe_level: FixedEffects,
}

impl RegressionSpec {
    pub fn new(dependent: Dependent, regressors: &[NetworkMeasure], fe_level: FixedEffects) -> Result<Self> {
        if regressors.is_empty() {
            return Err(Error::Config(
                "a regression needs at least one network regressor".into(),
            ));
        }
        let mut network_regressors = regressors.to_vec();
        network_regressors.sort();
        network_regressors.dedup();
        Ok(Self {
            dependent,
            network_regressors,
            fe_level,
        })
    }

    /// `ihs(cases)` on the given measures with state fixed effects.
    pub fn ihs_state(regressors: &[NetworkMeasure]) -> Result<Self> {
        Self::new(Dependent::IhsCases, regressors, FixedEffects::State)
    }

    pub fn network_regressors(&self) -> &[NetworkMeasure] {
        &self.network_regressors
    }

    pub fn controls(&self) -> &'static [&'static str] {
        match self.fe_level {
            FixedEffects::State => &CONTROLS,
            FixedEffects::County => &CONTROLS[..CONTROLS.len() - 1],
        }
    }

    /// Regressor names in design-matrix order.
    pub fn column_names(&self) -> Vec<String> {
        self.network_regressors
            .iter()
            .map(|m| m.name().to_owned())
            .chain(self.controls().iter().map(|c| (*c).to_owned()))
            .collect()
    }
}

/// Control columns in design order.
pub const CONTROLS: [&str; 10] = [
    "beds",
    "beds_sq",
    "high_medicaid",
    "high_black",
    "cms_1",
    "cms_2",
    "cms_3",
    "cms_4",
    "infection_violation",
    "urban",
];

impl fmt::Display for RegressionSpec {
    /// `dependent:measure+measure:fe`, the same syntax [`FromStr`] accepts.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dep = match self.dependent {
            Dependent::IhsCases => "ihs",
            Dependent::AnyCases => "binary",
        };
        let fe = match self.fe_level {
            FixedEffects::State => "state",
            FixedEffects::County => "county",
        };
        let regs: Vec<_> = self.network_regressors.iter().map(|m| m.name()).collect();
        write!(f, "{dep}:{}:{fe}", regs.join("+"))
    }
}

impl FromStr for RegressionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        let (dep, regs, fe) = match parts.as_slice() {
            [dep, regs] => (*dep, *regs, "state"),
            [dep, regs, fe] => (*dep, *regs, *fe),
            _ => {
                return Err(Error::Config(format!(
                    "bad regression spec {s:?}; expected dependent:measures[:fe]"
                )))
            }
        };
        let dependent = match dep.to_ascii_lowercase().as_str() {
            "ihs" => Dependent::IhsCases,
            "binary" | "lpm" | "any" => Dependent::AnyCases,
            other => return Err(Error::Config(format!("unknown dependent variable {other:?}"))),
        };
        let fe_level = match fe.to_ascii_lowercase().as_str() {
            "state" => FixedEffects::State,
            "county" => FixedEffects::County,
            other => return Err(Error::Config(format!("unknown fixed effects level {other:?}"))),
        };
        let regressors = regs
            .split('+')
            .map(str::parse)
            .collect::<Result<Vec<NetworkMeasure>>>()?;
        Self::new(dependent, &regressors, fe_level)
    }
}

/// One facility of the regression sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisRow {
    pub facility_id: String,
    pub state: String,
    pub county_fips: String,
    pub cases: u32,
    pub beds: u32,
    pub high_medicaid: bool,
    pub high_black: bool,
    pub urban: bool,
    pub cms_rating: u8,
    pub infection_violation: bool,
    pub degree: f64,
    pub strength: f64,
    pub wand: f64,
    pub eigencentrality: f64,
}

impl AnalysisRow {
    pub fn dependent(&self, dep: Dependent) -> f64 {
        match dep {
            Dependent::IhsCases => ihs(f64::from(self.cases)),
            Dependent::AnyCases => f64::from(u8::from(self.cases > 0)),
        }
    }

    /// Value of a named control column.
    pub fn control(&self, name: &str) -> f64 {
        let flag = |b: bool| f64::from(u8::from(b));
        let beds = f64::from(self.beds);
        match name {
            "beds" => beds,
            "beds_sq" => beds * beds,
            "high_medicaid" => flag(self.high_medicaid),
            "high_black" => flag(self.high_black),
            "cms_1" => flag(self.cms_rating == 1),
            "cms_2" => flag(self.cms_rating == 2),
            "cms_3" => flag(self.cms_rating == 3),
            "cms_4" => flag(self.cms_rating == 4),
            "infection_violation" => flag(self.infection_violation),
            "urban" => flag(self.urban),
            other => panic!("unknown control {other}"),
        }
    }

    pub fn group(&self, fe: FixedEffects) -> &str {
        match fe {
            FixedEffects::State => &self.state,
            FixedEffects::County => &self.county_fips,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnalysisSample {
    pub rows: Vec<AnalysisRow>,
    /// Facilities left out, with the reason.
    pub excluded: Vec<(String, String)>,
}

/// Joins facilities with their network metrics. Facilities lacking a case
/// report, a covariate or a metrics row are excluded and listed.
pub fn analysis_rows(facilities: &[Facility], metrics: &[NetworkMetrics]) -> AnalysisSample {
    let by_id: HashMap<&str, &NetworkMetrics> = metrics.iter().map(|m| (m.facility_id.as_str(), m)).collect();
    let mut sample = AnalysisSample::default();
    for f in facilities {
        let mut missing = f.missing_covariates();
        if f.cases.is_none() {
            missing.push("cases");
        }
        if !missing.is_empty() {
            sample
                .excluded
                .push((f.facility_id.clone(), format!("missing {}", missing.join(", "))));
            continue;
        }
        let Some(m) = by_id.get(f.facility_id.as_str()) else {
            sample
                .excluded
                .push((f.facility_id.clone(), "no network metrics".into()));
            continue;
        };
        sample.rows.push(AnalysisRow {
            facility_id: f.facility_id.clone(),
            state: f.state.clone(),
            county_fips: f.county_fips.clone(),
            cases: f.cases.unwrap(),
            beds: f.beds.unwrap(),
            high_medicaid: f.high_medicaid.unwrap(),
            high_black: f.high_black.unwrap(),
            urban: f.urban.unwrap(),
            cms_rating: f.cms_rating.unwrap(),
            infection_violation: f.infection_violation.unwrap(),
            degree: f64::from(m.degree),
            strength: m.strength as f64,
            wand: m.wand,
            eigencentrality: m.eigencentrality,
        });
    }
    sample
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ihs_at_zero_is_zero() {
        assert_eq!(ihs(0.0), 0.0);
    }

    #[test]
    fn ihs_inverse_identity() {
        for x in [1.0, 10.0, 1000.0] {
            let back = ihs(x).sinh();
            assert!((back - x).abs() <= 1e-12 * x, "{x}: {back}");
        }
    }

    #[test]
    fn ihs_of_one_by_direct_formula() {
        let direct = (1.0 + 2f64.sqrt()).ln();
        assert!((ihs(1.0) - direct).abs() < 1e-15);
        assert!((ihs(1.0) - 0.881374).abs() < 1e-6);
    }

    #[test]
    fn ihs_huge_and_negative() {
        assert!((ihs(1e200) - (2e200f64).ln()).abs() < 1e-12);
        assert_eq!(ihs(-3.0), -ihs(3.0));
    }

    #[test]
    fn spec_parsing() {
        let s: RegressionSpec = "ihs:eigencentrality+wand:state".parse().unwrap();
        assert_eq!(
            s.network_regressors(),
            &[NetworkMeasure::Wand, NetworkMeasure::Eigencentrality]
        );
        assert_eq!(s.to_string(), "ihs:wand+eigencentrality:state");
        let c: RegressionSpec = "binary:degree:county".parse().unwrap();
        assert_eq!(c.dependent, Dependent::AnyCases);
        assert!(!c.column_names().contains(&"urban".to_owned()));
        assert!("ihs::state".parse::<RegressionSpec>().is_err());
        assert!("poisson:degree".parse::<RegressionSpec>().is_err());
        assert!(RegressionSpec::ihs_state(&[]).is_err());
    }

    #[test]
    fn sample_excludes_incomplete_rows() {
        let mut a = Facility::new("A", "CT", "09001");
        a.cases = Some(2);
        a.beds = Some(50);
        a.high_medicaid = Some(true);
        a.high_black = Some(false);
        a.urban = Some(true);
        a.cms_rating = Some(3);
        a.infection_violation = Some(false);
        let mut b = a.clone();
        b.facility_id = "B".into();
        b.cms_rating = None;
        let mut c = a.clone();
        c.facility_id = "C".into();
        let metrics = vec![NetworkMetrics {
            facility_id: "A".into(),
            state: "CT".into(),
            degree: 1,
            strength: 2,
            wand: 1.0,
            eigencentrality: 1.0,
        }];
        let s = analysis_rows(&[a, b, c], &metrics);
        assert_eq!(s.rows.len(), 1);
        assert_eq!(s.excluded.len(), 2);
        assert_eq!(s.excluded[0].1, "missing cms_rating");
        assert_eq!(s.rows[0].control("cms_3"), 1.0);
        assert_eq!(s.rows[0].control("beds_sq"), 2500.0);
    }
}
