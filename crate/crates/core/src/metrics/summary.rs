use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::NetworkMetrics;
use crate::ingest::Facility;
use crate::{Error, Result};

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Describe {
    pub n: usize,
    pub mean: f64,
    /// `None` with fewer than two values.
    pub sd: Option<f64>,
}

pub fn describe(values: &[f64]) -> Describe {
    let n = values.len();
    if n == 0 {
        return Describe {
            n,
            mean: f64::NAN,
            sd: None,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Describe { n, mean, sd }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite())
        .map(|x| x.to_string())
        .unwrap_or_else(|| "NA".into())
}

/// One line of the facility summary table: a percentage for indicators, a
/// mean with standard deviation otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryLine {
    pub variable: &'static str,
    pub percent: bool,
    pub value: Describe,
}

/// Facility summary over the given facilities: counts, demographic and
/// regulatory covariates, and the four network measures. Each variable is
/// summarized over facilities where it is present.
pub fn network_summary(metrics: &[NetworkMetrics], facilities: &[Facility]) -> Vec<SummaryLine> {
    let by_id: HashMap<&str, &NetworkMetrics> = metrics.iter().map(|m| (m.facility_id.as_str(), m)).collect();
    let pct = |variable, get: &dyn Fn(&Facility) -> Option<bool>| {
        let v: Vec<f64> = facilities
            .iter()
            .filter_map(get)
            .map(|b| if b { 100.0 } else { 0.0 })
            .collect();
        SummaryLine {
            variable,
            percent: true,
            value: describe(&v),
        }
    };
    let num = |variable, get: &dyn Fn(&Facility) -> Option<f64>| SummaryLine {
        variable,
        percent: false,
        value: describe(&facilities.iter().filter_map(get).collect::<Vec<_>>()),
    };
    let net = |variable, get: &dyn Fn(&NetworkMetrics) -> f64| SummaryLine {
        variable,
        percent: false,
        value: describe(
            &facilities
                .iter()
                .filter_map(|f| by_id.get(f.facility_id.as_str()).map(|m| get(m)))
                .collect::<Vec<_>>(),
        ),
    };
    vec![
        SummaryLine {
            variable: "facilities",
            percent: false,
            value: Describe {
                n: facilities.len(),
                mean: facilities.len() as f64,
                sd: None,
            },
        },
        pct("high_black", &|f| f.high_black),
        pct("high_medicaid", &|f| f.high_medicaid),
        pct("urban", &|f| f.urban),
        num("beds", &|f| f.beds.map(f64::from)),
        num("cms_rating", &|f| f.cms_rating.map(f64::from)),
        pct("infection_violation", &|f| f.infection_violation),
        num("cases", &|f| f.cases.map(f64::from)),
        net("degree", &|m| f64::from(m.degree)),
        net("strength", &|m| m.strength as f64),
        net("wand", &|m| m.wand),
        net("eigencentrality", &|m| m.eigencentrality),
    ]
}

pub fn write_network_summary<W: Write>(sink: W, lines: &[SummaryLine]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["variable", "kind", "n", "value", "sd"])?;
    for l in lines {
        w.write_record([
            l.variable,
            if l.percent { "percent" } else { "mean" },
            &l.value.n.to_string(),
            &fmt_opt(Some(l.value.mean)),
            &fmt_opt(l.value.sd),
        ])?;
    }
    w.flush().map_err(|e| Error::io("summary output", e))?;
    Ok(())
}

/// Per-state means and standard deviations of cases and network measures.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSummary {
    pub state: String,
    pub facilities: usize,
    pub cases: Describe,
    pub degree: Describe,
    pub strength: Describe,
    pub wand: Describe,
    pub eigencentrality: Describe,
}

pub fn state_summaries(metrics: &[NetworkMetrics], facilities: &[Facility]) -> Vec<StateSummary> {
    let cases: HashMap<&str, Option<u32>> = facilities.iter().map(|f| (f.facility_id.as_str(), f.cases)).collect();
    let mut groups: BTreeMap<&str, Vec<&NetworkMetrics>> = BTreeMap::new();
    for m in metrics {
        groups.entry(&m.state).or_default().push(m);
    }
    groups
        .into_iter()
        .map(|(state, rows)| {
            let col = |f: &dyn Fn(&NetworkMetrics) -> f64| describe(&rows.iter().map(|m| f(m)).collect::<Vec<_>>());
            let reported: Vec<f64> = rows
                .iter()
                .filter_map(|m| cases.get(m.facility_id.as_str()).copied().flatten())
                .map(f64::from)
                .collect();
            StateSummary {
                state: state.to_owned(),
                facilities: rows.len(),
                cases: describe(&reported),
                degree: col(&|m| f64::from(m.degree)),
                strength: col(&|m| m.strength as f64),
                wand: col(&|m| m.wand),
                eigencentrality: col(&|m| m.eigencentrality),
            }
        })
        .collect()
}

pub fn write_state_summaries<W: Write>(sink: W, rows: &[StateSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "state",
        "facilities",
        "cases_mean",
        "cases_sd",
        "degree_mean",
        "degree_sd",
        "strength_mean",
        "strength_sd",
        "wand_mean",
        "wand_sd",
        "eigencentrality_mean",
        "eigencentrality_sd",
    ])?;
    for r in rows {
        let mut rec = vec![r.state.clone(), r.facilities.to_string()];
        for d in [&r.cases, &r.degree, &r.strength, &r.wand, &r.eigencentrality] {
            rec.push(fmt_opt((d.n > 0).then_some(d.mean)));
            rec.push(fmt_opt(d.sd));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("state summary output", e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `counts[b]` covers degrees `[b·width, (b+1)·width)`.
    pub counts: Vec<usize>,
    pub n: usize,
    pub mean: Option<f64>,
}

impl Histogram {
    fn build(degrees: &[u32], width: u32, bins: usize) -> Self {
        let mut counts = vec![0; bins];
        for &d in degrees {
            counts[(d / width) as usize] += 1;
        }
        let n = degrees.len();
        let mean = (n > 0).then(|| degrees.iter().map(|&d| f64::from(d)).sum::<f64>() / n as f64);
        Self { counts, n, mean }
    }
}

/// Degree histograms for facilities with and without reported cases, on
/// shared bins. Facilities with no case report are left out.
#[derive(Clone, Debug, PartialEq)]
pub struct DegreeDistribution {
    pub bin_width: u32,
    pub with_cases: Histogram,
    pub without_cases: Histogram,
}

pub fn degree_distribution_by_case_status(
    metrics: &[NetworkMetrics],
    facilities: &[Facility],
    bin_width: u32,
) -> Result<DegreeDistribution> {
    if bin_width == 0 {
        return Err(Error::Config("histogram bin width must be positive".into()));
    }
    let cases: HashMap<&str, Option<u32>> = facilities.iter().map(|f| (f.facility_id.as_str(), f.cases)).collect();
    let (mut with, mut without) = (Vec::new(), Vec::new());
    for m in metrics {
        match cases.get(m.facility_id.as_str()).copied().flatten() {
            Some(c) if c > 0 => with.push(m.degree),
            Some(_) => without.push(m.degree),
            None => {}
        }
    }
    let bins = with
        .iter()
        .chain(&without)
        .max()
        .map_or(0, |&max| (max / bin_width) as usize + 1);
    Ok(DegreeDistribution {
        bin_width,
        with_cases: Histogram::build(&with, bin_width, bins),
        without_cases: Histogram::build(&without, bin_width, bins),
    })
}

pub fn write_degree_distribution<W: Write>(sink: W, dist: &DegreeDistribution) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["bin_start", "bin_end", "with_cases", "without_cases"])?;
    for (b, (a, c)) in dist
        .with_cases
        .counts
        .iter()
        .zip(&dist.without_cases.counts)
        .enumerate()
    {
        let start = b as u32 * dist.bin_width;
        w.write_record([
            start.to_string(),
            (start + dist.bin_width).to_string(),
            a.to_string(),
            c.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("degree distribution output", e))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

/// Welch two-sample t-test of mean(A) − mean(B).
pub fn two_sample_t(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Model(format!(
            "t-test needs at least two observations per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (da, db) = (describe(a), describe(b));
    let (va, vb) = (
        da.sd.unwrap().powi(2) / a.len() as f64,
        db.sd.unwrap().powi(2) / b.len() as f64,
    );
    let diff = da.mean - db.mean;
    let se2 = va + vb;
    if se2 == 0.0 {
        let (t, p) = if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        };
        return Ok(WelchTest {
            t,
            df: f64::INFINITY,
            p,
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Model(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchTest { t, df, p })
}

pub fn write_t_test<W: Write>(sink: W, dist: &DegreeDistribution, test: Option<&WelchTest>) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["group", "n", "mean_degree", "t", "df", "p"])?;
    let (t, df, p) = match test {
        Some(x) => (x.t.to_string(), x.df.to_string(), x.p.to_string()),
        None => ("NA".into(), "NA".into(), "NA".into()),
    };
    for (name, h) in [("with_cases", &dist.with_cases), ("without_cases", &dist.without_cases)] {
        w.write_record([name, &h.n.to_string(), &fmt_opt(h.mean), &t, &df, &p])?;
    }
    w.flush().map_err(|e| Error::io("t-test output", e))?;
    Ok(())
}

/// A state's most central facility next to the state's averages.
#[derive(Clone, Debug, PartialEq)]
pub struct HubRow {
    pub state: String,
    pub facility_id: String,
    pub cases: Option<u32>,
    pub hub: NetworkMetrics,
    pub state_mean: [f64; 4],
}

/// One hub per partition with at least one edge: highest eigenvector
/// centrality, then highest strength, then smallest id.
pub fn hub_table(metrics: &[NetworkMetrics], facilities: &[Facility]) -> Vec<HubRow> {
    let cases: HashMap<&str, Option<u32>> = facilities.iter().map(|f| (f.facility_id.as_str(), f.cases)).collect();
    let mut groups: BTreeMap<&str, Vec<&NetworkMetrics>> = BTreeMap::new();
    for m in metrics {
        groups.entry(&m.state).or_default().push(m);
    }
    groups
        .into_iter()
        .filter_map(|(state, rows)| {
            let hub = rows.iter().copied().filter(|m| m.degree > 0).max_by(|a, b| {
                a.eigencentrality
                    .total_cmp(&b.eigencentrality)
                    .then(a.strength.cmp(&b.strength))
                    .then(b.facility_id.cmp(&a.facility_id))
            })?;
            let n = rows.len() as f64;
            let mean = |f: &dyn Fn(&NetworkMetrics) -> f64| rows.iter().map(|m| f(m)).sum::<f64>() / n;
            Some(HubRow {
                state: state.to_owned(),
                facility_id: hub.facility_id.clone(),
                cases: cases.get(hub.facility_id.as_str()).copied().flatten(),
                hub: hub.clone(),
                state_mean: [
                    mean(&|m| f64::from(m.degree)),
                    mean(&|m| m.strength as f64),
                    mean(&|m| m.wand),
                    mean(&|m| m.eigencentrality),
                ],
            })
        })
        .collect()
}

pub fn write_hubs<W: Write>(sink: W, rows: &[HubRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "state",
        "facility_id",
        "cases",
        "degree",
        "strength",
        "wand",
        "eigencentrality",
        "state_degree_mean",
        "state_strength_mean",
        "state_wand_mean",
        "state_eigencentrality_mean",
    ])?;
    for r in rows {
        let mut rec = vec![
            r.state.clone(),
            r.facility_id.clone(),
            r.cases.map(|c| c.to_string()).unwrap_or_else(|| "NA".into()),
            r.hub.degree.to_string(),
            r.hub.strength.to_string(),
            r.hub.wand.to_string(),
            r.hub.eigencentrality.to_string(),
        ];
        rec.extend(r.state_mean.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("hub output", e))?;
    Ok(())
}
