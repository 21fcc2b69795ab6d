use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use staffnet::econometrics::{fit_spec, ihs, ols, within_transform};
use staffnet::geometry::{point_in_polygon, LatLon, Polygon};
use staffnet::ingest::{parse_pings, write_pings, Facility, PingRecord, StudyWindow};
use staffnet::metrics::{
    degree, eigenvector_centrality, metrics_table, strength, weighted_avg_neighbor_degree, EigenOptions,
};
use staffnet::network::FacilityNetwork;
use staffnet::spatial::{assign_visits, build_index};
use staffnet::synth::{oracle_fe_ols, oracle_metrics, random_analysis_rows};

fn graph() -> impl Strategy<Value = (usize, Vec<(usize, usize, u32)>)> {
    (2usize..25).prop_flat_map(|n| {
        let edge = (0..n, 0..n, 1u32..6).prop_filter("no self-loops", |(i, j, _)| i != j);
        (Just(n), prop::collection::vec(edge, 0..60))
    })
}

fn network(n: usize, edges: &[(usize, usize, u32)], label: impl Fn(usize) -> String) -> FacilityNetwork {
    FacilityNetwork::from_index_edges("X", (0..n).map(label).collect(), edges.iter().copied()).unwrap()
}

fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Inside or on a counter-clockwise convex hull iff no edge has the point
/// strictly to its right.
fn convex_contains(hull: &[(f64, f64)], p: (f64, f64)) -> bool {
    (0..hull.len()).all(|i| {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= 0.0
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_match_oracle((n, edges) in graph()) {
        let net = network(n, &edges, |i| format!("f{i:03}"));
        let listed: Vec<_> = net.edges().collect();
        let oracle = oracle_metrics(n, &listed).unwrap();
        prop_assert_eq!(degree(&net), oracle.degree);
        prop_assert_eq!(strength(&net), oracle.strength);
        for (a, b) in weighted_avg_neighbor_degree(&net).iter().zip(&oracle.wand) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
        let (sol, v) = eigenvector_centrality(&net, EigenOptions::default()).unwrap();
        prop_assert!(sol.residual <= 1e-10);
        for (a, b) in v.iter().zip(&oracle.eigencentrality) {
            prop_assert!((a - b).abs() <= 1e-8, "{:?} vs {:?}", v, oracle.eigencentrality);
        }
    }

    #[test]
    fn relabeling_permutes_metrics((n, edges) in graph(), shift in 1usize..50) {
        // node ids sort differently once relabeled, so node order changes
        let a = network(n, &edges, |i| format!("f{i:03}"));
        let perm = |i: usize| (n - 1 - i + shift) % n;
        let relabeled: Vec<_> = edges.iter().map(|&(i, j, w)| (perm(i), perm(j), w)).collect();
        let b = network(n, &relabeled, |i| format!("f{i:03}"));
        let ma = metrics_table(&[a], EigenOptions::default()).unwrap();
        let mb = metrics_table(&[b], EigenOptions::default()).unwrap();
        for i in 0..n {
            let (x, y) = (&ma[i], &mb[perm(i)]);
            prop_assert_eq!(x.degree, y.degree);
            prop_assert_eq!(x.strength, y.strength);
            prop_assert!((x.wand - y.wand).abs() < 1e-9);
            prop_assert!((x.eigencentrality - y.eigencentrality).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_weight_scaling((n, edges) in graph(), c in 2u32..5) {
        let a = network(n, &edges, |i| format!("f{i:03}"));
        let listed: Vec<_> = a.edges().map(|(i, j, w)| (i, j, w * c)).collect();
        let b = network(n, &listed, |i| format!("f{i:03}"));
        prop_assert_eq!(degree(&a), degree(&b));
        let sa: Vec<u64> = strength(&a).iter().map(|s| s * u64::from(c)).collect();
        prop_assert_eq!(sa, strength(&b));
        for (x, y) in weighted_avg_neighbor_degree(&a).iter().zip(weighted_avg_neighbor_degree(&b)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let (_, va) = eigenvector_centrality(&a, EigenOptions::default()).unwrap();
        let (_, vb) = eigenvector_centrality(&b, EigenOptions::default()).unwrap();
        prop_assert_eq!(va, vb);
    }

    #[test]
    fn ihs_strictly_increasing(x in 0.0f64..1e6, dx in 1e-6f64..1e3) {
        prop_assert!(ihs(x) < ihs(x + dx));
    }

    #[test]
    fn within_transform_zeroes_group_means(
        values in prop::collection::vec((-100.0f64..100.0, 0usize..4), 5..60)
    ) {
        let groups: Vec<usize> = values.iter().map(|v| v.1).collect();
        let x = DMatrix::from_iterator(values.len(), 1, values.iter().map(|v| v.0));
        let y = DVector::from_iterator(values.len(), values.iter().map(|v| v.0 * 0.5 + 1.0));
        let (xt, yt) = within_transform(&x, &y, &groups);
        for g in 0..4 {
            let members: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == g).collect();
            if members.is_empty() {
                continue;
            }
            let mx: f64 = members.iter().map(|&i| xt[(i, 0)]).sum::<f64>() / members.len() as f64;
            let my: f64 = members.iter().map(|&i| yt[i]).sum::<f64>() / members.len() as f64;
            prop_assert!(mx.abs() <= 1e-10 && my.abs() <= 1e-10);
        }
    }

    #[test]
    fn shift_invariance_and_orthogonality(seed in 0u64..10_000, shift in -50.0f64..50.0) {
        let n = 80;
        let groups: Vec<usize> = (0..n).map(|i| (i * 7 + seed as usize) % 5).collect();
        let x = DMatrix::from_fn(n, 3, |i, j| (((i + 1) * (j + 3) * (seed as usize + 11)) % 97) as f64 / 10.0);
        let y = DVector::from_fn(n, |i, _| ((i * 31 + seed as usize) % 41) as f64 * 0.3 + x[(i, 0)]);
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let (xt, yt) = within_transform(&x, &y, &groups);
        let base = ols(&xt, &yt, &names, 5).unwrap();
        let shifted_y = y.add_scalar(shift);
        let (_, yt2) = within_transform(&x, &shifted_y, &groups);
        let moved = ols(&xt, &yt2, &names, 5).unwrap();
        for (a, b) in base.coefficients.iter().zip(&moved.coefficients) {
            prop_assert!((a.estimate - b.estimate).abs() <= 1e-10 * a.estimate.abs().max(1.0));
        }
        let e = DVector::from_vec(base.residuals.clone());
        let scale = xt.norm() * e.norm().max(1.0);
        for j in 0..xt.ncols() {
            prop_assert!(xt.column(j).dot(&e).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn fixed_effects_match_dummy_regression(seed in 0u64..1_000_000) {
        let (rows, spec) = random_analysis_rows(seed);
        let fit = fit_spec(&rows, &spec).unwrap();
        let oracle = oracle_fe_ols(&rows, &spec).unwrap();
        let mut dropped = fit.dropped.clone();
        dropped.sort();
        let mut oracle_dropped = oracle.dropped.clone();
        oracle_dropped.sort();
        prop_assert_eq!(dropped, oracle_dropped);
        prop_assert_eq!(fit.coefficients.len(), oracle.coefficients.len());
        for (c, se) in fit.coefficients.iter().zip(&oracle.std_errors) {
            let want = oracle.coefficient(&c.name).unwrap();
            prop_assert!((c.estimate - want).abs() <= 1e-8 * want.abs().max(1.0), "{}: {} vs {}", c.name, c.estimate, want);
            prop_assert!((c.std_error - se).abs() <= 1e-8 * se.max(1.0));
        }
    }

    #[test]
    fn point_in_convex_hull(
        pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3..12),
        probes in prop::collection::vec((-1.2f64..1.2, -1.2f64..1.2), 20)
    ) {
        let hull = convex_hull(pts);
        prop_assume!(hull.len() >= 3);
        let ring: Vec<LatLon> = hull.iter().map(|&(x, y)| LatLon::new(y, x)).collect();
        for &(x, y) in &probes {
            let got = point_in_polygon(LatLon::new(y, x), &ring).unwrap();
            prop_assert_eq!(got, convex_contains(&hull, (x, y)));
        }
    }

    #[test]
    fn ping_file_round_trip(
        raw in prop::collection::vec((0u8..5, 0i64..3_600_000, -89.0f64..89.0, -179.0f64..179.0), 0..80)
    ) {
        let pings: Vec<PingRecord> = raw
            .iter()
            .map(|&(d, t, lat, lon)| PingRecord {
                device_id: format!("dev{d}"),
                latitude: lat,
                longitude: lon,
                timestamp: StudyWindow::DEFAULT_START + t,
            })
            .collect();
        let mut buf = Vec::new();
        write_pings(&mut buf, &pings).unwrap();
        let first = parse_pings(buf.as_slice(), &StudyWindow::default()).unwrap();
        prop_assert_eq!(first.skipped, 0);
        let mut again = Vec::new();
        write_pings(&mut again, &first.records).unwrap();
        let second = parse_pings(again.as_slice(), &StudyWindow::default()).unwrap();
        prop_assert_eq!(&first.records, &second.records);
        prop_assert_eq!(second.duplicates, 0);
    }

    #[test]
    fn assignment_ignores_cell_size_and_ping_order(
        seed in 0u64..1000,
        probes in prop::collection::vec((0.0f64..0.05, 0.0f64..0.05, 0u8..6), 50..300)
    ) {
        let facilities: Vec<Facility> = (0..6)
            .map(|k| {
                let (lat, lon) = (40.0 + 0.008 * k as f64, -75.0 + 0.006 * ((k as u64 + seed) % 4) as f64);
                let mut f = Facility::new(&format!("F{k}"), "AA", "01001");
                f.polygon = Some(
                    Polygon::new(vec![
                        LatLon::new(lat, lon),
                        LatLon::new(lat, lon + 0.012),
                        LatLon::new(lat + 0.01, lon + 0.012),
                        LatLon::new(lat + 0.012, lon + 0.004),
                    ])
                    .unwrap(),
                );
                f
            })
            .collect();
        let pings: Vec<PingRecord> = probes
            .iter()
            .enumerate()
            .map(|(t, &(a, b, d))| PingRecord {
                device_id: format!("d{d}"),
                latitude: 40.0 + a,
                longitude: -75.0 + b,
                timestamp: t as i64,
            })
            .collect();
        let base = assign_visits(&pings, &build_index(&facilities, 0.01).unwrap());
        for cell in [0.005, 0.05] {
            prop_assert_eq!(&base, &assign_visits(&pings, &build_index(&facilities, cell).unwrap()));
        }
        let mut reversed = pings.clone();
        reversed.reverse();
        prop_assert_eq!(&base, &assign_visits(&reversed, &build_index(&facilities, 0.01).unwrap()));
    }
}
