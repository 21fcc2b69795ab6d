//! Pipeline stages. Each stage reads its inputs from files, writes its
//! outputs into a staging directory and moves them into place only when the
//! whole stage succeeded.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use staffnet::econometrics::{
    analysis_rows, counterfactual_reduction, fit_spec, format_table, read_cases, semi_elasticity, write_analysis_rows,
    write_coefficients, write_fit_statistics, AnalysisSample, NetworkMeasure, RegressionResult,
};
use staffnet::ingest::{
    load_facilities, parse_pings, resolve_footprints, write_facilities, write_pings, Facility, Geocoder, StubGeocoder,
};
use staffnet::metrics::{
    degree_distribution_by_case_status, hub_table, metrics_table, network_summary, read_metrics, state_summaries,
    two_sample_t, write_degree_distribution, write_hubs, write_metrics, write_network_summary, write_state_summaries,
    write_t_test,
};
use staffnet::network::{
    build_networks, networks_from_edge_list, read_edge_list, write_cross_state, write_dot, write_edge_list,
    write_graphml,
};
use staffnet::spatial::{assign_visits, build_index, read_assignments, shared_device_fraction, write_assignments};
use staffnet::synth::{generate, write_scenario};
use staffnet::{Error, Result};

use crate::config::Config;

/// Output file names inside `out_dir`.
pub mod outputs {
    pub const PINGS: &str = "pings.clean.csv";
    pub const FACILITIES: &str = "facilities.resolved.csv";
    pub const INGEST_REPORT: &str = "ingest_report.csv";
    pub const INGEST_ISSUES: &str = "ingest_issues.csv";
    pub const ASSIGNMENTS: &str = "assignments.csv";
    pub const SHARED_DEVICES: &str = "shared_devices.csv";
    pub const EDGES: &str = "edges.csv";
    pub const CROSS_STATE: &str = "cross_state.csv";
    pub const GRAPHML_DIR: &str = "graphml";
    pub const DOT_DIR: &str = "dot";
    pub const METRICS: &str = "metrics.csv";
    pub const NETWORK_SUMMARY: &str = "network_summary.csv";
    pub const STATE_SUMMARY: &str = "state_summary.csv";
    pub const DEGREE_DISTRIBUTION: &str = "degree_distribution.csv";
    pub const DEGREE_T_TEST: &str = "degree_t_test.csv";
    pub const HUBS: &str = "hubs.csv";
    pub const ANALYSIS_SAMPLE: &str = "analysis_sample.csv";
    pub const EXCLUDED: &str = "excluded_facilities.csv";
    pub const COEFFICIENTS: &str = "coefficients.csv";
    pub const FIT_STATISTICS: &str = "fit_statistics.csv";
    pub const REGRESSION_TABLE: &str = "regression_table.txt";
    pub const SEMI_ELASTICITIES: &str = "semi_elasticities.csv";
    pub const COEFFICIENTS_ALT: &str = "coefficients_alt.csv";
    pub const FIT_STATISTICS_ALT: &str = "fit_statistics_alt.csv";
    pub const REGRESSION_TABLE_ALT: &str = "regression_table_alt.txt";
    pub const COUNTERFACTUAL: &str = "counterfactual.csv";
}

/// Scratch directory for one stage's outputs. Dropping it without
/// [`Staging::commit`] deletes everything written so far.
pub struct Staging {
    dir: PathBuf,
    target: PathBuf,
    committed: bool,
}

impl Staging {
    pub fn new(target: &Path, stage: &str) -> Result<Self> {
        let dir = target.join(format!(".staging-{stage}"));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        Ok(Self {
            dir,
            target: target.to_owned(),
            committed: false,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Moves every staged entry into the target directory, replacing
    /// existing entries of the same name.
    pub fn commit(mut self) -> Result<()> {
        let io = |p: &Path, e| Error::io(p.display().to_string(), e);
        let mut entries: Vec<PathBuf> = fs::read_dir(&self.dir)
            .map_err(|e| io(&self.dir, e))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()
            .map_err(|e| io(&self.dir, e))?;
        entries.sort();
        for from in entries {
            let to = self.target.join(from.file_name().expect("staged entry has a name"));
            if to.is_dir() {
                fs::remove_dir_all(&to).map_err(|e| io(&to, e))?;
            }
            fs::rename(&from, &to).map_err(|e| io(&to, e))?;
        }
        fs::remove_dir_all(&self.dir).map_err(|e| io(&self.dir, e))?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// A file produced by an earlier stage.
fn stage_input(cfg: &Config, name: &str, producer: &str) -> Result<BufReader<File>> {
    let path = cfg.out_dir().join(name);
    if !path.is_file() {
        return Err(Error::io(
            path.display().to_string(),
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("missing; run the {producer} stage first"),
            ),
        ));
    }
    open(&path)
}

fn resolved_facilities(cfg: &Config) -> Result<Vec<Facility>> {
    Ok(load_facilities(stage_input(cfg, outputs::FACILITIES, "ingest")?)?.facilities)
}

fn finish<W: Write>(mut w: W, what: &str) -> Result<()> {
    w.flush().map_err(|e| Error::io(what, e))
}

fn write_key_values<W: Write>(sink: W, rows: &[(&str, String)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["metric", "value"])?;
    for (k, v) in rows {
        w.write_record([*k, v.as_str()])?;
    }
    w.flush().map_err(|e| Error::io("report output", e))?;
    Ok(())
}

pub fn ingest(cfg: &Config, staging: &Staging) -> Result<()> {
    let window = cfg.window()?;
    let pings_path = cfg.input_path("pings")?;
    let registry_path = cfg.input_path("registry")?;
    let geocoder_path = cfg.optional_input_path("geocoder")?;
    let radius: f64 = cfg.get("fallback_radius_m")?;

    let mut registry = load_facilities(open(&registry_path)?)?;
    let mut geocoder = match &geocoder_path {
        Some(p) => Some(Geocoder::new(StubGeocoder::from_reader(open(p)?)?)),
        None => None,
    };
    let report = resolve_footprints(&mut registry.facilities, geocoder.as_mut(), radius)?;
    if !report.unresolved.is_empty() {
        let shown: Vec<_> = report.unresolved.iter().take(5).map(String::as_str).collect();
        return Err(Error::Input(format!(
            "{} facilities have no polygon, location or address to geocode (first: {})",
            report.unresolved.len(),
            shown.join(", ")
        )));
    }

    if !registry.flagged.is_empty() {
        log::warn!(
            "ingest: {} facilities lack covariates and will be left out of regressions",
            registry.flagged.len()
        );
    }
    let parsed = parse_pings(open(&pings_path)?, &window)?;
    log::info!(
        "ingest: {} pings kept, {} malformed, {} outside window, {} duplicates",
        parsed.records.len(),
        parsed.skipped,
        parsed.outside_window,
        parsed.duplicates
    );
    write_pings(staging.create(outputs::PINGS)?, &parsed.records)?;
    write_facilities(staging.create(outputs::FACILITIES)?, &registry.facilities)?;
    write_key_values(
        staging.create(outputs::INGEST_REPORT)?,
        &[
            ("pings_kept", parsed.records.len().to_string()),
            ("lines_skipped", parsed.skipped.to_string()),
            ("outside_window", parsed.outside_window.to_string()),
            ("duplicates", parsed.duplicates.to_string()),
            ("facilities", registry.facilities.len().to_string()),
            ("polygons_from_registry", report.from_registry.to_string()),
            ("polygons_from_location", report.from_location.to_string()),
            ("polygons_from_geocoder", report.from_geocoder.to_string()),
            ("facilities_missing_covariates", registry.flagged.len().to_string()),
        ],
    )?;
    let mut w = csv::Writer::from_writer(staging.create(outputs::INGEST_ISSUES)?);
    w.write_record(["line", "reason"])?;
    for issue in &parsed.issues {
        w.write_record([issue.line.to_string(), issue.reason.clone()])?;
    }
    w.flush().map_err(|e| Error::io(outputs::INGEST_ISSUES, e))
}

pub fn match_visits(cfg: &Config, staging: &Staging) -> Result<()> {
    let facilities = resolved_facilities(cfg)?;
    let index = build_index(&facilities, cfg.get("cell_deg")?)?;
    let parsed = parse_pings(stage_input(cfg, outputs::PINGS, "ingest")?, &cfg.window()?)?;
    let visits = assign_visits(&parsed.records, &index);
    let shared = shared_device_fraction(&visits);
    log::info!(
        "match: {} device-facility pairs, {} of {} qualifying devices in 2+ facilities",
        visits.len(),
        shared.multi_facility_devices,
        shared.qualifying_devices
    );
    write_assignments(staging.create(outputs::ASSIGNMENTS)?, &visits)?;
    write_key_values(
        staging.create(outputs::SHARED_DEVICES)?,
        &[
            ("qualifying_devices", shared.qualifying_devices.to_string()),
            ("multi_facility_devices", shared.multi_facility_devices.to_string()),
            ("fraction", shared.fraction.to_string()),
        ],
    )
}

/// File-name-safe form of a partition key.
fn file_stem(key: &str) -> String {
    key.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn network(cfg: &Config, staging: &Staging) -> Result<()> {
    let facilities = resolved_facilities(cfg)?;
    let visits = read_assignments(stage_input(cfg, outputs::ASSIGNMENTS, "match")?)?;
    let set = build_networks(&visits, &facilities, cfg.partition()?)?;
    let edges: usize = set.networks.iter().map(|n| n.edge_count()).sum();
    log::info!(
        "network: {} partitions, {edges} edges, {} cross-state pairs",
        set.networks.len(),
        set.cross_state.len()
    );
    write_edge_list(staging.create(outputs::EDGES)?, &set.networks)?;
    write_cross_state(staging.create(outputs::CROSS_STATE)?, &set.cross_state)?;
    for net in &set.networks {
        let stem = file_stem(net.partition_key());
        let mut g = staging.create(&format!("{}/{stem}.graphml", outputs::GRAPHML_DIR))?;
        write_graphml(&mut g, net)?;
        finish(g, "graphml output")?;
        let mut d = staging.create(&format!("{}/{stem}.dot", outputs::DOT_DIR))?;
        write_dot(&mut d, net)?;
        finish(d, "dot output")?;
    }
    Ok(())
}

pub fn metrics(cfg: &Config, staging: &Staging) -> Result<()> {
    let facilities = resolved_facilities(cfg)?;
    let edges = read_edge_list(stage_input(cfg, outputs::EDGES, "network")?)?;
    let networks = networks_from_edge_list(&edges, &facilities, cfg.partition()?)?;
    let rows = metrics_table(&networks, cfg.eigen_options()?)?;
    log::info!("metrics: {} facilities in {} partitions", rows.len(), networks.len());
    write_metrics(staging.create(outputs::METRICS)?, &rows)?;
    write_network_summary(
        staging.create(outputs::NETWORK_SUMMARY)?,
        &network_summary(&rows, &facilities),
    )?;
    write_state_summaries(
        staging.create(outputs::STATE_SUMMARY)?,
        &state_summaries(&rows, &facilities),
    )?;
    let dist = degree_distribution_by_case_status(&rows, &facilities, cfg.get("degree_bin_width")?)?;
    write_degree_distribution(staging.create(outputs::DEGREE_DISTRIBUTION)?, &dist)?;
    let by_id: std::collections::HashMap<&str, &Facility> =
        facilities.iter().map(|f| (f.facility_id.as_str(), f)).collect();
    let (mut with, mut without) = (Vec::new(), Vec::new());
    for m in &rows {
        match by_id.get(m.facility_id.as_str()).and_then(|f| f.cases) {
            Some(c) if c > 0 => with.push(f64::from(m.degree)),
            Some(_) => without.push(f64::from(m.degree)),
            None => {}
        }
    }
    let test = two_sample_t(&with, &without)
        .map_err(|e| log::warn!("degree t-test skipped: {e}"))
        .ok();
    write_t_test(staging.create(outputs::DEGREE_T_TEST)?, &dist, test.as_ref())?;
    write_hubs(staging.create(outputs::HUBS)?, &hub_table(&rows, &facilities))
}

fn regression_sample(cfg: &Config, facilities: &[Facility]) -> Result<AnalysisSample> {
    let rows = read_metrics(stage_input(cfg, outputs::METRICS, "metrics")?)?;
    Ok(analysis_rows(facilities, &rows))
}

fn fit_all(cfg: &Config, sample: &AnalysisSample) -> Result<Vec<RegressionResult>> {
    cfg.specs()?.iter().map(|spec| fit_spec(&sample.rows, spec)).collect()
}

fn write_results(staging: &Staging, results: &[RegressionResult], names: [&str; 3]) -> Result<()> {
    write_coefficients(staging.create(names[0])?, results)?;
    write_fit_statistics(staging.create(names[1])?, results)?;
    let mut t = staging.create(names[2])?;
    t.write_all(format_table(results).as_bytes())
        .map_err(|e| Error::io(names[2], e))?;
    finish(t, names[2])
}

/// Change in the regressor used when quoting a semi-elasticity: ten more
/// neighbors, contacts or neighbor degree, or the full 0 → 1 range of
/// centrality.
fn reporting_delta(m: NetworkMeasure) -> f64 {
    match m {
        NetworkMeasure::Eigencentrality => 1.0,
        _ => 10.0,
    }
}

pub fn regress(cfg: &Config, staging: &Staging) -> Result<()> {
    let facilities = resolved_facilities(cfg)?;
    let sample = regression_sample(cfg, &facilities)?;
    log::info!(
        "regress: {} facilities in sample, {} excluded",
        sample.rows.len(),
        sample.excluded.len()
    );
    let results = fit_all(cfg, &sample)?;
    write_analysis_rows(staging.create(outputs::ANALYSIS_SAMPLE)?, &sample.rows)?;
    let mut w = csv::Writer::from_writer(staging.create(outputs::EXCLUDED)?);
    w.write_record(["facility_id", "reason"])?;
    for (id, reason) in &sample.excluded {
        w.write_record([id, reason])?;
    }
    w.flush().map_err(|e| Error::io(outputs::EXCLUDED, e))?;
    write_results(
        staging,
        &results,
        [
            outputs::COEFFICIENTS,
            outputs::FIT_STATISTICS,
            outputs::REGRESSION_TABLE,
        ],
    )?;

    let mut w = csv::Writer::from_writer(staging.create(outputs::SEMI_ELASTICITIES)?);
    w.write_record(["model", "variable", "estimate", "delta", "percent_change"])?;
    for r in results.iter().filter(|r| {
        r.spec
            .as_ref()
            .is_some_and(|s| s.dependent == staffnet::econometrics::Dependent::IhsCases)
    }) {
        for m in NetworkMeasure::ALL {
            if let Some(c) = r.coefficient(m.name()) {
                let delta = reporting_delta(m);
                w.write_record([
                    r.label.clone(),
                    c.name.clone(),
                    c.estimate.to_string(),
                    delta.to_string(),
                    semi_elasticity(c.estimate, delta).to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(outputs::SEMI_ELASTICITIES, e))?;

    if let Some(path) = cfg.optional_input_path("cases_alt")? {
        let alt = read_cases(open(&path)?)?;
        let mut replaced = facilities.clone();
        for f in &mut replaced {
            f.cases = alt.get(&f.facility_id).copied().flatten();
        }
        let alt_sample = regression_sample(cfg, &replaced)?;
        log::info!(
            "regress: alternate cases, {} facilities in sample",
            alt_sample.rows.len()
        );
        let alt_results = fit_all(cfg, &alt_sample)?;
        write_results(
            staging,
            &alt_results,
            [
                outputs::COEFFICIENTS_ALT,
                outputs::FIT_STATISTICS_ALT,
                outputs::REGRESSION_TABLE_ALT,
            ],
        )?;
    }
    Ok(())
}

pub fn counterfactual(cfg: &Config, staging: &Staging) -> Result<()> {
    let facilities = resolved_facilities(cfg)?;
    let sample = regression_sample(cfg, &facilities)?;
    let spec = cfg.get("counterfactual_spec")?;
    let fit = fit_spec(&sample.rows, &spec)?;
    let cf = counterfactual_reduction(&fit, &sample.rows)?;
    log::info!(
        "counterfactual: {:.1}% fewer cases without staff links",
        cf.reduction_percent
    );
    let mut w = csv::Writer::from_writer(staging.create(outputs::COUNTERFACTUAL)?);
    w.write_record(["model", "fitted_cases", "counterfactual_cases", "reduction_percent"])?;
    w.write_record([
        fit.label,
        cf.fitted_cases.to_string(),
        cf.counterfactual_cases.to_string(),
        cf.reduction_percent.to_string(),
    ])?;
    w.flush().map_err(|e| Error::io(outputs::COUNTERFACTUAL, e))
}

pub fn synth(cfg: &Config, staging: &Staging) -> Result<()> {
    let scenario = generate(&cfg.scenario()?)?;
    log::info!(
        "synth: {} facilities, {} staff, {} pings",
        scenario.population.facilities.len(),
        scenario.population.staff.len(),
        scenario.pings.len()
    );
    write_scenario(staging.dir(), &scenario)
}
