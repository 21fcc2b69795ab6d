use std::fs::File;

use staffnet::econometrics::{analysis_rows, counterfactual_reduction, fit_spec, RegressionSpec};
use staffnet::ingest::{
    load_facilities, parse_pings, resolve_footprints, Geocoder, StubGeocoder, StudyWindow, DEFAULT_FALLBACK_RADIUS_M,
};
use staffnet::metrics::{metrics_table, EigenOptions};
use staffnet::network::{build_networks, read_edge_list, Partition};
use staffnet::spatial::{assign_visits, build_index, shared_device_fraction, DEFAULT_CELL_DEG};
use staffnet::synth::{files, generate, write_scenario, ScenarioConfig};

fn config() -> ScenarioConfig {
    ScenarioConfig {
        seed: 7,
        n_states: 3,
        facilities_per_state: 40,
        n_staff: 3000,
        cross_state_share: 0.1,
        ..ScenarioConfig::default()
    }
}

#[test]
fn pipeline_recovers_generator_truth() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = generate(&config()).unwrap();
    write_scenario(dir.path(), &scenario).unwrap();

    let mut registry = load_facilities(File::open(dir.path().join(files::REGISTRY)).unwrap()).unwrap();
    let stub = StubGeocoder::from_reader(File::open(dir.path().join(files::GEOCODER)).unwrap()).unwrap();
    let mut geocoder = Geocoder::new(stub);
    let report = resolve_footprints(&mut registry.facilities, Some(&mut geocoder), DEFAULT_FALLBACK_RADIUS_M).unwrap();
    assert!(report.unresolved.is_empty());
    assert!(report.from_geocoder > 0 && report.from_location > 0);

    let parsed = parse_pings(
        File::open(dir.path().join(files::PINGS)).unwrap(),
        &StudyWindow::default(),
    )
    .unwrap();
    assert_eq!(parsed.skipped, 0);
    assert!(parsed.outside_window > 0);
    assert!(parsed.duplicates > 0);

    let index = build_index(&registry.facilities, DEFAULT_CELL_DEG).unwrap();
    let visits = assign_visits(&parsed.records, &index);
    let shared = shared_device_fraction(&visits);
    assert_eq!(shared.qualifying_devices, config().n_staff);
    assert!((shared.fraction - 0.07).abs() <= 0.01, "{}", shared.fraction);

    let set = build_networks(&visits, &registry.facilities, Partition::ByState).unwrap();
    let truth = read_edge_list(File::open(dir.path().join(files::EDGES_TRUTH)).unwrap()).unwrap();
    assert_eq!(set.edge_rows(), truth);
    assert_eq!(set.cross_state, scenario.population.truth.cross_state);
    assert!(!set.cross_state.is_empty());

    let metrics = metrics_table(&set.networks, EigenOptions::default()).unwrap();
    for (got, want) in metrics.iter().zip(&scenario.population.metrics) {
        assert_eq!(got.facility_id, want.facility_id);
        assert_eq!((got.degree, got.strength), (want.degree, want.strength));
        assert!((got.wand - want.wand).abs() <= 1e-8);
        assert!((got.eigencentrality - want.eigencentrality).abs() <= 1e-8);
    }

    let sample = analysis_rows(&registry.facilities, &metrics);
    assert!(!sample.excluded.is_empty());
    let spec: RegressionSpec = "ihs:wand+eigencentrality:state".parse().unwrap();
    let fit = fit_spec(&sample.rows, &spec).unwrap();
    let cf = counterfactual_reduction(&fit, &sample.rows).unwrap();

    // row by row: fitted value minus the network terms, back through sinh
    let b_wand = fit.coefficient("wand").unwrap().estimate;
    let b_eig = fit.coefficient("eigencentrality").unwrap().estimate;
    let (mut total, mut without) = (0.0, 0.0);
    for (row, resid) in sample.rows.iter().zip(&fit.residuals) {
        let y = (f64::from(row.cases) + (1.0 + f64::from(row.cases).powi(2)).sqrt()).ln();
        let fitted = y - resid;
        total += fitted.sinh();
        without += (fitted - b_wand * row.wand - b_eig * row.eigencentrality).sinh();
    }
    let brute = 100.0 * (1.0 - without / total);
    assert!(
        (cf.reduction_percent - brute).abs() < 0.1,
        "{} vs {brute}",
        cf.reduction_percent
    );
    assert!(cf.reduction_percent > 0.0);
}

#[test]
fn national_partition_merges_states() {
    let scenario = generate(&ScenarioConfig {
        n_staff: 800,
        ..config()
    })
    .unwrap();
    let mut facilities = scenario.population.facilities.clone();
    for (f, c) in facilities.iter_mut().zip(&scenario.population.centers) {
        if f.polygon.is_none() {
            f.location = Some(*c);
        }
    }
    resolve_footprints::<StubGeocoder>(&mut facilities, None, DEFAULT_FALLBACK_RADIUS_M).unwrap();
    let window = StudyWindow::default();
    let pings = window.filter(scenario.pings.clone());
    let visits = assign_visits(&pings, &build_index(&facilities, DEFAULT_CELL_DEG).unwrap());
    let by_state = build_networks(&visits, &facilities, Partition::ByState).unwrap();
    let national = build_networks(&visits, &facilities, Partition::National).unwrap();
    assert_eq!(national.networks.len(), 1);
    assert!(national.cross_state.is_empty());
    let in_state: usize = by_state.networks.iter().map(|n| n.edge_count()).sum();
    assert_eq!(national.networks[0].edge_count(), in_state + by_state.cross_state.len());
}
