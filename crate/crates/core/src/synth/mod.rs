//! Synthetic scenarios with known ground truth.
//!
//! A scenario is a set of facilities laid out on a per-state grid, staff
//! members who each work at one or more facilities, the pings their phones
//! would leave, and case counts drawn from a planted IHS model. Everything
//! is derived from one seed through ChaCha8 streams, so a scenario is
//! reproducible on any platform.
//!
//! Stream 0 draws the population (facilities, staff, cases); stream 1
//! renders pings.

mod oracle;

pub use oracle::{
    oracle_fe_ols, oracle_metrics, random_analysis_rows, random_graph, OracleFit, OracleMetrics, ORACLE_MAX_GROUPS,
    ORACLE_MAX_NODES, ORACLE_MAX_ROWS,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::econometrics::{NetworkMeasure, CONTROLS};
use crate::geometry::{destination, LatLon, Polygon};
use crate::ingest::{write_facilities, write_pings, Facility, PingRecord, StudyWindow};
use crate::metrics::{write_metrics, NetworkMetrics};
use crate::network::{write_cross_state, write_edge_list, CrossStateLink, FacilityNetwork, NetworkSet};
use crate::{Error, Result};

/// Grid spacing between facilities of one state, in degrees.
const FACILITY_SPACING_DEG: f64 = 0.01;
/// Pings are placed within this distance of a facility's center. Every
/// generated footprint contains the disc of this radius.
const PING_RADIUS_M: f64 = 20.0;
const MAX_STATES: usize = 99;

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_states: usize,
    pub facilities_per_state: usize,
    pub counties_per_state: usize,
    pub n_staff: usize,
    /// Share of staff who qualify at two or more facilities.
    pub multi_facility_share: f64,
    /// Share of multi-facility staff with one facility in another state.
    pub cross_state_share: f64,
    /// A multi-facility staff member works at 1 + (1..=max_extra_facilities) homes.
    pub max_extra_facilities: usize,
    /// Extra facilities are drawn from this many grid neighbors on each
    /// side with probability `local_share`, else uniformly in the state.
    pub neighborhood: usize,
    pub local_share: f64,
    /// Pings per qualifying visit, uniform in `[min, max]`; min ≥ 3.
    pub pings_per_visit_min: u32,
    pub pings_per_visit_max: u32,
    /// Share of staff who also leave 1 or 2 pings at another facility.
    pub stray_share: f64,
    /// Devices that only ping away from every facility.
    pub noise_devices: usize,
    /// Share of staff with extra pings before the study window.
    pub out_of_window_share: f64,
    /// Per-ping probability of being written twice.
    pub duplicate_share: f64,
    /// Facilities given by point location instead of a polygon.
    pub fallback_share: f64,
    /// Facilities given by address only, resolved through the geocoder stub.
    pub geocoded_share: f64,
    /// Facilities with no reported case count.
    pub missing_cases_share: f64,
    /// Planted network coefficients, in [`NetworkMeasure::ALL`] order.
    pub network_betas: [f64; 4],
    /// Planted control coefficients, in [`CONTROLS`] order.
    pub control_betas: [f64; 10],
    pub state_effect_min: f64,
    pub state_effect_max: f64,
    pub noise_sd: f64,
    pub window: StudyWindow,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_states: 4,
            facilities_per_state: 50,
            counties_per_state: 4,
            n_staff: 5000,
            multi_facility_share: 0.07,
            cross_state_share: 0.0,
            max_extra_facilities: 2,
            neighborhood: 4,
            local_share: 0.6,
            pings_per_visit_min: 3,
            pings_per_visit_max: 12,
            stray_share: 0.2,
            noise_devices: 200,
            out_of_window_share: 0.05,
            duplicate_share: 0.01,
            fallback_share: 0.1,
            geocoded_share: 0.05,
            missing_cases_share: 0.02,
            network_betas: [0.0, 0.0, 0.0116, 0.643],
            control_betas: [0.004, -0.000_005, 0.1, 0.2, 0.05, 0.03, 0.02, 0.01, 0.05, 0.3],
            state_effect_min: 3.0,
            state_effect_max: 4.0,
            noise_sd: 0.5,
            window: StudyWindow::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let shares = [
            ("multi_facility_share", self.multi_facility_share),
            ("cross_state_share", self.cross_state_share),
            ("local_share", self.local_share),
            ("stray_share", self.stray_share),
            ("out_of_window_share", self.out_of_window_share),
            ("duplicate_share", self.duplicate_share),
            ("fallback_share", self.fallback_share),
            ("geocoded_share", self.geocoded_share),
            ("missing_cases_share", self.missing_cases_share),
        ];
        for (name, v) in shares {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.fallback_share + self.geocoded_share > 1.0 {
            return bad("fallback_share + geocoded_share exceeds 1".into());
        }
        if self.n_states == 0 || self.n_states > MAX_STATES {
            return bad(format!("n_states must be in 1..={MAX_STATES}"));
        }
        if self.facilities_per_state == 0 || self.facilities_per_state > ORACLE_MAX_NODES {
            return bad(format!("facilities_per_state must be in 1..={ORACLE_MAX_NODES}"));
        }
        if self.counties_per_state == 0 || self.counties_per_state > 999 {
            return bad("counties_per_state must be in 1..=999".into());
        }
        if self.n_staff == 0 {
            return bad("n_staff must be positive".into());
        }
        let multi = self.multi_facility_staff();
        if multi > 0 {
            if self.max_extra_facilities == 0 {
                return bad("max_extra_facilities must be positive".into());
            }
            let cross_possible = self.n_states > 1 && self.cross_state_share > 0.0;
            if self.facilities_per_state < 2 && !(cross_possible && self.cross_state_share == 1.0) {
                return bad("multi-facility staff need at least 2 facilities per state".into());
            }
            if self.cross_state_share > 0.0 && self.n_states < 2 {
                return bad("cross-state staff need at least 2 states".into());
            }
        }
        if self.pings_per_visit_min <= crate::spatial::TRACE_THRESHOLD {
            return bad(format!(
                "pings_per_visit_min must exceed {} so every staff visit qualifies",
                crate::spatial::TRACE_THRESHOLD
            ));
        }
        if self.pings_per_visit_max < self.pings_per_visit_min {
            return bad("pings_per_visit_max is below pings_per_visit_min".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be a non-negative number".into());
        }
        if self
            .state_effect_min
            .partial_cmp(&self.state_effect_max)
            .is_none_or(|o| o.is_gt())
        {
            return bad("state_effect_min exceeds state_effect_max".into());
        }
        Ok(())
    }

    /// Exact number of multi-facility staff.
    pub fn multi_facility_staff(&self) -> usize {
        (self.multi_facility_share * self.n_staff as f64).round() as usize
    }

    pub fn n_facilities(&self) -> usize {
        self.n_states * self.facilities_per_state
    }

    /// Sets a field from its name and textual value, for config files and
    /// command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "n_states" => self.n_states = num(key, value)?,
            "facilities_per_state" => self.facilities_per_state = num(key, value)?,
            "counties_per_state" => self.counties_per_state = num(key, value)?,
            "n_staff" => self.n_staff = num(key, value)?,
            "multi_facility_share" => self.multi_facility_share = num(key, value)?,
            "cross_state_share" => self.cross_state_share = num(key, value)?,
            "max_extra_facilities" => self.max_extra_facilities = num(key, value)?,
            "neighborhood" => self.neighborhood = num(key, value)?,
            "local_share" => self.local_share = num(key, value)?,
            "pings_per_visit_min" => self.pings_per_visit_min = num(key, value)?,
            "pings_per_visit_max" => self.pings_per_visit_max = num(key, value)?,
            "stray_share" => self.stray_share = num(key, value)?,
            "noise_devices" => self.noise_devices = num(key, value)?,
            "out_of_window_share" => self.out_of_window_share = num(key, value)?,
            "duplicate_share" => self.duplicate_share = num(key, value)?,
            "fallback_share" => self.fallback_share = num(key, value)?,
            "geocoded_share" => self.geocoded_share = num(key, value)?,
            "missing_cases_share" => self.missing_cases_share = num(key, value)?,
            "noise_sd" => self.noise_sd = num(key, value)?,
            "state_effect_min" => self.state_effect_min = num(key, value)?,
            "state_effect_max" => self.state_effect_max = num(key, value)?,
            _ => {
                if let Some(m) = key.strip_prefix("beta_") {
                    if let Ok(measure) = m.parse::<NetworkMeasure>() {
                        let k = NetworkMeasure::ALL.iter().position(|x| *x == measure).unwrap();
                        self.network_betas[k] = num(key, value)?;
                        return Ok(());
                    }
                    if let Some(k) = CONTROLS.iter().position(|c| *c == m) {
                        self.control_betas[k] = num(key, value)?;
                        return Ok(());
                    }
                }
                return Err(Error::Config(format!("unknown scenario key {key:?}")));
            }
        }
        Ok(())
    }

    /// Every settable key, for help text and config validation.
    pub fn keys() -> Vec<String> {
        let mut keys: Vec<String> = [
            "seed",
            "n_states",
            "facilities_per_state",
            "counties_per_state",
            "n_staff",
            "multi_facility_share",
            "cross_state_share",
            "max_extra_facilities",
            "neighborhood",
            "local_share",
            "pings_per_visit_min",
            "pings_per_visit_max",
            "stray_share",
            "noise_devices",
            "out_of_window_share",
            "duplicate_share",
            "fallback_share",
            "geocoded_share",
            "missing_cases_share",
            "noise_sd",
            "state_effect_min",
            "state_effect_max",
        ]
        .iter()
        .map(|s| (*s).to_owned())
        .collect();
        keys.extend(NetworkMeasure::ALL.iter().map(|m| format!("beta_{}", m.name())));
        keys.extend(CONTROLS.iter().map(|c| format!("beta_{c}")));
        keys
    }
}

/// Two-letter code of state `s`: AA, AB, ...
pub fn state_code(s: usize) -> String {
    let a = (b'A' + (s / 26) as u8) as char;
    let b = (b'A' + (s % 26) as u8) as char;
    format!("{a}{b}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct StaffMember {
    pub device_id: String,
    /// Facility indices where the device qualifies, ascending.
    pub facilities: Vec<usize>,
    /// Facility with 1 or 2 non-qualifying pings, if any.
    pub stray: Option<usize>,
}

/// Everything drawn before pings are rendered.
#[derive(Clone, Debug)]
pub struct Population {
    pub config: ScenarioConfig,
    /// Registry as written to disk; some facilities lack a polygon.
    pub facilities: Vec<Facility>,
    /// Center of every facility's footprint.
    pub centers: Vec<LatLon>,
    pub staff: Vec<StaffMember>,
    pub state_effects: BTreeMap<String, f64>,
    /// True networks by state plus cross-state links.
    pub truth: NetworkSet,
    /// Oracle metrics on the true networks, in network node order.
    pub metrics: Vec<NetworkMetrics>,
    /// Planted `ihs(E[cases])` per facility, before noise.
    pub linear_predictor: Vec<f64>,
}

impl Population {
    pub fn multi_facility_staff(&self) -> usize {
        self.staff.iter().filter(|s| s.facilities.len() >= 2).count()
    }

    /// Address-to-location entries for facilities given by address only.
    pub fn geocoder_entries(&self) -> Vec<(String, LatLon)> {
        self.facilities
            .iter()
            .zip(&self.centers)
            .filter(|(f, _)| f.polygon.is_none() && f.location.is_none())
            .filter_map(|(f, c)| f.address.clone().map(|a| (a, *c)))
            .collect()
    }
}

fn star_polygon(rng: &mut ChaCha8Rng, center: LatLon) -> Result<Polygon> {
    // six vertices 35–50 m out with angular jitter of ±10°; every edge stays
    // at least 35·cos(40°) ≈ 26.8 m from the center
    let ring = (0..6)
        .map(|k| {
            let bearing = (60.0 * k as f64 + rng.random_range(-10.0..10.0f64)).to_radians();
            destination(center, bearing, rng.random_range(35.0..50.0))
        })
        .collect();
    Polygon::new(ring)
}

/// Draws facilities, staff itineraries, true networks and case counts.
pub fn generate_population(config: &ScenarioConfig) -> Result<Population> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let fps = config.facilities_per_state;
    let cols = (fps as f64).sqrt().ceil() as usize;

    let mut facilities = Vec::with_capacity(config.n_facilities());
    let mut centers = Vec::with_capacity(config.n_facilities());
    let mut state_effects = BTreeMap::new();
    for s in 0..config.n_states {
        let code = state_code(s);
        state_effects.insert(
            code.clone(),
            if config.state_effect_max > config.state_effect_min {
                rng.random_range(config.state_effect_min..config.state_effect_max)
            } else {
                config.state_effect_min
            },
        );
        let (base_lat, base_lon) = state_origin(s);
        for k in 0..fps {
            let center = LatLon::new(
                base_lat + (k / cols) as f64 * FACILITY_SPACING_DEG + rng.random_range(-0.002..0.002),
                base_lon + (k % cols) as f64 * FACILITY_SPACING_DEG + rng.random_range(-0.002..0.002),
            );
            let county = k % config.counties_per_state;
            let id = format!("{code}{k:04}");
            let mut f = Facility::new(&id, &code, &format!("{:02}{:03}", s + 1, county + 1));
            f.name = format!("Facility {id}");
            let footprint: f64 = rng.random();
            if footprint < config.fallback_share {
                f.location = Some(center);
            } else if footprint < config.fallback_share + config.geocoded_share {
                f.address = Some(format!("{} Main St, Town {}, {code}", 100 + k, county + 1));
            } else {
                f.polygon = Some(star_polygon(&mut rng, center)?);
            }
            f.beds = Some(rng.random_range(30..=200));
            f.high_medicaid = Some(rng.random_bool(0.5));
            f.high_black = Some(rng.random_bool(0.3));
            f.urban = Some(county.is_multiple_of(2));
            f.cms_rating = Some(rng.random_range(1..=5));
            f.infection_violation = Some(rng.random_bool(0.4));
            facilities.push(f);
            centers.push(center);
        }
    }

    let staff = draw_staff(config, &mut rng);
    let truth = true_networks(&facilities, &staff)?;
    let metrics = oracle_table(&truth.networks)?;

    let by_id: BTreeMap<&str, &NetworkMetrics> = metrics.iter().map(|m| (m.facility_id.as_str(), m)).collect();
    let noise = Normal::new(0.0, config.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let mut linear_predictor = Vec::with_capacity(facilities.len());
    for f in &mut facilities {
        let m = by_id[f.facility_id.as_str()];
        let network = [f64::from(m.degree), m.strength as f64, m.wand, m.eigencentrality];
        let eta = state_effects[&f.state]
            + network
                .iter()
                .zip(&config.network_betas)
                .map(|(x, b)| x * b)
                .sum::<f64>()
            + control_values(f)
                .iter()
                .zip(&config.control_betas)
                .map(|(x, b)| x * b)
                .sum::<f64>();
        let draw = eta + noise.sample(&mut rng);
        let missing = rng.random_bool(config.missing_cases_share);
        f.cases = (!missing).then(|| draw.sinh().round().max(0.0) as u32);
        linear_predictor.push(eta);
    }

    Ok(Population {
        config: config.clone(),
        facilities,
        centers,
        staff,
        state_effects,
        truth,
        metrics,
        linear_predictor,
    })
}

fn state_origin(s: usize) -> (f64, f64) {
    (30.0 + (s / 10) as f64 * 1.5, -120.0 + (s % 10) as f64 * 5.0)
}

/// Far enough from any facility grid that no footprint can contain it.
fn noise_origin(s: usize) -> (f64, f64) {
    let (lat, lon) = state_origin(s);
    (lat + 0.75, lon)
}

/// Control values in [`CONTROLS`] order.
fn control_values(f: &Facility) -> [f64; 10] {
    let flag = |b: Option<bool>| f64::from(u8::from(b.unwrap_or(false)));
    let beds = f64::from(f.beds.unwrap_or(0));
    let cms = f.cms_rating.unwrap_or(5);
    [
        beds,
        beds * beds,
        flag(f.high_medicaid),
        flag(f.high_black),
        f64::from(u8::from(cms == 1)),
        f64::from(u8::from(cms == 2)),
        f64::from(u8::from(cms == 3)),
        f64::from(u8::from(cms == 4)),
        flag(f.infection_violation),
        flag(f.urban),
    ]
}

fn draw_staff(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<StaffMember> {
    let fps = config.facilities_per_state;
    let n_fac = config.n_facilities();
    let mut order: Vec<u32> = (0..config.n_staff as u32).collect();
    order.shuffle(rng);
    let multi: BTreeSet<u32> = order[..config.multi_facility_staff()].iter().copied().collect();

    let pick_in_state = |rng: &mut ChaCha8Rng, home: usize, taken: &BTreeSet<usize>| -> Option<usize> {
        let state = home / fps;
        let available = fps - taken.iter().filter(|&&f| f / fps == state).count();
        if available == 0 {
            return None;
        }
        let local = rng.random_bool(config.local_share);
        loop {
            let k = if local {
                let lo = (home % fps).saturating_sub(config.neighborhood);
                let hi = (home % fps + config.neighborhood).min(fps - 1);
                let k = rng.random_range(lo as u32..=hi as u32) as usize;
                // fall back to uniform if the neighborhood is used up
                if (lo..=hi).all(|k| taken.contains(&(state * fps + k))) {
                    rng.random_range(0..fps as u32) as usize
                } else {
                    k
                }
            } else {
                rng.random_range(0..fps as u32) as usize
            };
            let f = state * fps + k;
            if !taken.contains(&f) {
                return Some(f);
            }
        }
    };

    (0..config.n_staff as u32)
        .map(|d| {
            let home = rng.random_range(0..n_fac as u32) as usize;
            let mut taken = BTreeSet::from([home]);
            if multi.contains(&d) {
                let extra = rng.random_range(1..=config.max_extra_facilities as u32) as usize;
                let cross = config.n_states > 1 && rng.random_bool(config.cross_state_share);
                if cross {
                    let state = home / fps;
                    let other = (state + rng.random_range(1..config.n_states as u32) as usize) % config.n_states;
                    taken.insert(other * fps + rng.random_range(0..fps as u32) as usize);
                }
                while taken.len() < 1 + extra {
                    match pick_in_state(rng, home, &taken) {
                        Some(f) => {
                            taken.insert(f);
                        }
                        None => break,
                    }
                }
            }
            let stray = if rng.random_bool(config.stray_share) && fps > taken.len() {
                let state = home / fps;
                loop {
                    let f = state * fps + rng.random_range(0..fps as u32) as usize;
                    if !taken.contains(&f) {
                        break Some(f);
                    }
                }
            } else {
                None
            };
            StaffMember {
                device_id: format!("d{d:07}"),
                facilities: taken.into_iter().collect(),
                stray,
            }
        })
        .collect()
}

fn true_networks(facilities: &[Facility], staff: &[StaffMember]) -> Result<NetworkSet> {
    let mut by_state: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for f in facilities {
        by_state.entry(&f.state).or_default().push(f.facility_id.clone());
    }
    let mut networks: Vec<FacilityNetwork> = by_state
        .into_iter()
        .map(|(s, mut nodes)| {
            nodes.sort();
            FacilityNetwork::new(s, nodes)
        })
        .collect::<Result<_>>()?;
    let slot: BTreeMap<String, usize> = networks
        .iter()
        .enumerate()
        .map(|(k, n)| (n.partition_key().to_owned(), k))
        .collect();
    let mut cross: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    for s in staff {
        for (x, &a) in s.facilities.iter().enumerate() {
            for &b in &s.facilities[x + 1..] {
                let (fa, fb) = (&facilities[a], &facilities[b]);
                if fa.state == fb.state {
                    networks[slot[&fa.state]].add_weight(&fa.facility_id, &fb.facility_id, 1)?;
                } else {
                    *cross.entry((a, b)).or_default() += 1;
                }
            }
        }
    }
    let mut cross_state: Vec<CrossStateLink> = cross
        .into_iter()
        .map(|((a, b), devices)| {
            let (fa, fb) = (&facilities[a], &facilities[b]);
            let ((sa, ia), (sb, ib)) = if fa.facility_id <= fb.facility_id {
                ((&fa.state, &fa.facility_id), (&fb.state, &fb.facility_id))
            } else {
                ((&fb.state, &fb.facility_id), (&fa.state, &fa.facility_id))
            };
            CrossStateLink {
                state_a: sa.clone(),
                facility_a: ia.clone(),
                state_b: sb.clone(),
                facility_b: ib.clone(),
                devices,
            }
        })
        .collect();
    cross_state.sort();
    Ok(NetworkSet { networks, cross_state })
}

/// Oracle metrics for every node of every network.
pub fn oracle_table(networks: &[FacilityNetwork]) -> Result<Vec<NetworkMetrics>> {
    let mut out = Vec::new();
    for net in networks {
        let edges: Vec<_> = net.edges().collect();
        let m = oracle_metrics(net.node_count(), &edges)?;
        for (i, id) in net.nodes().iter().enumerate() {
            out.push(NetworkMetrics {
                facility_id: id.clone(),
                state: net.partition_key().to_owned(),
                degree: m.degree[i],
                strength: m.strength[i],
                wand: m.wand[i],
                eigencentrality: m.eigencentrality[i],
            });
        }
    }
    Ok(out)
}

fn point_near(rng: &mut ChaCha8Rng, center: LatLon) -> LatLon {
    // uniform over the disc
    let r = PING_RADIUS_M * rng.random::<f64>().sqrt();
    let bearing = rng.random_range(0.0..std::f64::consts::TAU);
    destination(center, bearing, r)
}

/// Renders the ping stream for a population, shuffled.
pub fn render_pings(population: &Population) -> Vec<PingRecord> {
    let config = &population.config;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let (start, end) = (config.window.start, config.window.end);
    let mut pings = Vec::new();
    let emit = |rng: &mut ChaCha8Rng, pings: &mut Vec<PingRecord>, device: &str, at: LatLon, t: i64| {
        let p = PingRecord {
            device_id: device.to_owned(),
            latitude: at.lat,
            longitude: at.lon,
            timestamp: t,
        };
        if rng.random_bool(config.duplicate_share) {
            pings.push(p.clone());
        }
        pings.push(p);
    };
    for s in &population.staff {
        for &f in &s.facilities {
            let n = rng.random_range(config.pings_per_visit_min..=config.pings_per_visit_max);
            for _ in 0..n {
                let at = point_near(&mut rng, population.centers[f]);
                let t = rng.random_range(start..end);
                emit(&mut rng, &mut pings, &s.device_id, at, t);
            }
        }
        if let Some(f) = s.stray {
            for _ in 0..rng.random_range(1..=2u32) {
                let at = point_near(&mut rng, population.centers[f]);
                let t = rng.random_range(start..end);
                emit(&mut rng, &mut pings, &s.device_id, at, t);
            }
        }
        if rng.random_bool(config.out_of_window_share) {
            let f = s.stray.unwrap_or(s.facilities[0]);
            for _ in 0..rng.random_range(1..=3u32) {
                let at = point_near(&mut rng, population.centers[f]);
                let t = if rng.random_bool(0.5) {
                    start - rng.random_range(1..86_400 * 7)
                } else {
                    end + rng.random_range(0..86_400 * 7)
                };
                emit(&mut rng, &mut pings, &s.device_id, at, t);
            }
        }
    }
    for d in 0..config.noise_devices {
        let device = format!("n{d:07}");
        let (lat, lon) = noise_origin(rng.random_range(0..config.n_states as u32) as usize);
        for _ in 0..rng.random_range(1..=20u32) {
            let at = LatLon::new(lat + rng.random_range(0.0..0.2), lon + rng.random_range(0.0..0.2));
            let t = rng.random_range(start..end);
            emit(&mut rng, &mut pings, &device, at, t);
        }
    }
    pings.shuffle(&mut rng);
    pings
}

/// A complete scenario: population plus rendered pings.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub population: Population,
    pub pings: Vec<PingRecord>,
}

pub fn generate(config: &ScenarioConfig) -> Result<Scenario> {
    let population = generate_population(config)?;
    let pings = render_pings(&population);
    Ok(Scenario { population, pings })
}

/// File names written by [`write_scenario`].
pub mod files {
    pub const REGISTRY: &str = "facilities.csv";
    pub const PINGS: &str = "pings.csv";
    pub const GEOCODER: &str = "geocoder.tsv";
    pub const CASES_ALT: &str = "cases_alt.csv";
    pub const EDGES_TRUTH: &str = "edges.csv.truth";
    pub const CROSS_STATE_TRUTH: &str = "cross_state.csv.truth";
    pub const METRICS_TRUTH: &str = "metrics.csv.truth";
    pub const PLANTED_TRUTH: &str = "planted.csv.truth";
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes the registry, pings, geocoder stub, an alternate case file and
/// the `.truth` files into `dir`.
pub fn write_scenario(dir: &Path, scenario: &Scenario) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let pop = &scenario.population;
    write_facilities(create(dir, files::REGISTRY)?, &pop.facilities)?;
    write_pings(create(dir, files::PINGS)?, &scenario.pings)?;

    let mut geo = create(dir, files::GEOCODER)?;
    let io = |e| Error::io(files::GEOCODER, e);
    for (address, at) in pop.geocoder_entries() {
        writeln!(geo, "{address}\t{},{}", at.lat, at.lon).map_err(io)?;
    }
    geo.flush().map_err(io)?;

    write_alternate_cases(create(dir, files::CASES_ALT)?, pop)?;
    write_edge_list(create(dir, files::EDGES_TRUTH)?, &pop.truth.networks)?;
    write_cross_state(create(dir, files::CROSS_STATE_TRUTH)?, &pop.truth.cross_state)?;
    write_metrics(create(dir, files::METRICS_TRUTH)?, &pop.metrics)?;
    write_planted(create(dir, files::PLANTED_TRUTH)?, pop)?;
    Ok(())
}

/// A second case source reporting about 80% of the primary counts, with a
/// few more facilities unreported.
fn write_alternate_cases<W: Write>(sink: W, pop: &Population) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(pop.config.seed);
    rng.set_stream(2);
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["facility_id", "cases"])?;
    for f in &pop.facilities {
        let cases = f
            .cases
            .filter(|_| !rng.random_bool(0.05))
            .map(|c| (f64::from(c) * 0.8).round().to_string())
            .unwrap_or_default();
        w.write_record([f.facility_id.as_str(), &cases])?;
    }
    w.flush().map_err(|e| Error::io(files::CASES_ALT, e))?;
    Ok(())
}

/// `term,value` rows: planted coefficients, state effects and device counts.
fn write_planted<W: Write>(sink: W, pop: &Population) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["term", "value"])?;
    for (m, b) in NetworkMeasure::ALL.iter().zip(&pop.config.network_betas) {
        w.write_record([m.name(), &b.to_string()])?;
    }
    for (c, b) in CONTROLS.iter().zip(&pop.config.control_betas) {
        w.write_record([*c, &b.to_string()])?;
    }
    for (s, a) in &pop.state_effects {
        w.write_record([format!("state_{s}"), a.to_string()])?;
    }
    w.write_record(["staff_devices", &pop.staff.len().to_string()])?;
    w.write_record(["multi_facility_devices", &pop.multi_facility_staff().to_string()])?;
    w.write_record(["noise_sd", &pop.config.noise_sd.to_string()])?;
    w.flush().map_err(|e| Error::io(files::PLANTED_TRUTH, e))?;
    Ok(())
}

/// Reads a `term,value` truth file.
pub fn read_planted<R: std::io::Read>(source: R) -> Result<BTreeMap<String, f64>> {
    let mut reader = csv::Reader::from_reader(source);
    let mut out = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let value = row[1]
            .parse()
            .map_err(|_| Error::Input(format!("bad planted value {:?}", &row[1])))?;
        out.insert(row[0].to_owned(), value);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            n_states: 2,
            facilities_per_state: 12,
            n_staff: 400,
            noise_devices: 10,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn same_seed_same_scenario() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.pings, b.pings);
        assert_eq!(a.population.facilities, b.population.facilities);
    }

    #[test]
    fn exact_multi_facility_count() {
        let pop = generate_population(&small()).unwrap();
        assert_eq!(pop.multi_facility_staff(), 28);
    }

    #[test]
    fn zero_share_has_no_edges() {
        let cfg = ScenarioConfig {
            multi_facility_share: 0.0,
            ..small()
        };
        let pop = generate_population(&cfg).unwrap();
        assert!(pop.truth.networks.iter().all(|n| n.edge_count() == 0));
    }

    #[test]
    fn single_facility_states_cannot_share_staff() {
        let cfg = ScenarioConfig {
            facilities_per_state: 1,
            ..small()
        };
        assert!(matches!(generate_population(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn config_keys_round_trip() {
        let mut cfg = ScenarioConfig::default();
        cfg.set("n_staff", "123").unwrap();
        cfg.set("beta_wand", "0.5").unwrap();
        cfg.set("beta_urban", "0.25").unwrap();
        assert_eq!(cfg.n_staff, 123);
        assert_eq!(cfg.network_betas[2], 0.5);
        assert_eq!(cfg.control_betas[9], 0.25);
        assert!(cfg.set("bogus", "1").is_err());
        assert!(cfg.set("seed", "x").is_err());
        for key in ScenarioConfig::keys() {
            let value = if key == "seed"
                || key.starts_with("n_")
                || key.contains("per_")
                || key.contains("max_extra")
                || key == "neighborhood"
                || key == "noise_devices"
            {
                "3"
            } else {
                "0.5"
            };
            cfg.set(&key, value).unwrap();
        }
    }

    #[test]
    fn state_codes() {
        assert_eq!(state_code(0), "AA");
        assert_eq!(state_code(27), "BB");
    }
}
