use std::collections::HashSet;
use std::io::{Read, Write};

use super::geocode::{Geocoder, GeocoderClient};
use crate::geometry::{polygon_from_point, LatLon, Polygon};
use crate::{Error, Result};

/// Radius of the circular footprint used when no rooftop polygon is given.
pub const DEFAULT_FALLBACK_RADIUS_M: f64 = 30.0;

/// A nursing home with its footprint and regression covariates.
///
/// Covariates are optional; a facility missing any of them still takes part
/// in network construction but is left out of the regression sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Facility {
    pub facility_id: String,
    pub name: String,
    /// Two-letter state code.
    pub state: String,
    /// Five-digit county FIPS code.
    pub county_fips: String,
    pub address: Option<String>,
    /// Geocoded point, used for the fallback footprint.
    pub location: Option<LatLon>,
    pub polygon: Option<Polygon>,
    pub beds: Option<u32>,
    pub cases: Option<u32>,
    pub high_medicaid: Option<bool>,
    pub high_black: Option<bool>,
    pub urban: Option<bool>,
    pub cms_rating: Option<u8>,
    pub infection_violation: Option<bool>,
}

impl Facility {
    /// A facility with only identifying fields set.
    pub fn new(facility_id: &str, state: &str, county_fips: &str) -> Self {
        Self {
            facility_id: facility_id.to_owned(),
            name: facility_id.to_owned(),
            state: state.to_owned(),
            county_fips: county_fips.to_owned(),
            address: None,
            location: None,
            polygon: None,
            beds: None,
            cases: None,
            high_medicaid: None,
            high_black: None,
            urban: None,
            cms_rating: None,
            infection_violation: None,
        }
    }

    /// Names of the regression covariates that are missing.
    pub fn missing_covariates(&self) -> Vec<&'static str> {
        let mut missing = Vec::new();
        if self.beds.is_none() {
            missing.push("beds");
        }
        if self.high_medicaid.is_none() {
            missing.push("high_medicaid");
        }
        if self.high_black.is_none() {
            missing.push("high_black");
        }
        if self.urban.is_none() {
            missing.push("urban");
        }
        if self.cms_rating.is_none() {
            missing.push("cms_rating");
        }
        if self.infection_violation.is_none() {
            missing.push("infection_violation");
        }
        missing
    }

    /// Covariates complete and case count reported.
    pub fn regression_ready(&self) -> bool {
        self.cases.is_some() && self.missing_covariates().is_empty()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Registry {
    pub facilities: Vec<Facility>,
    /// Facilities excluded from regression, with the covariates they lack.
    pub flagged: Vec<(String, Vec<&'static str>)>,
}

const REQUIRED: [&str; 12] = [
    "facility_id",
    "name",
    "state",
    "county_fips",
    "polygon",
    "beds",
    "cases",
    "high_medicaid",
    "high_black",
    "urban",
    "cms_rating",
    "infection_violation",
];
const OPTIONAL: [&str; 3] = ["address", "latitude", "longitude"];

struct Columns {
    required: [usize; 12],
    optional: [Option<usize>; 3],
}

/// Reads a facility registry.
///
/// Malformed values are fatal and name the offending line; empty covariate
/// cells are treated as missing. Duplicate facility ids are fatal.
pub fn load_facilities<R: Read>(source: R) -> Result<Registry> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let mut cols = Columns {
        required: [0; 12],
        optional: [None; 3],
    };
    for (slot, name) in cols.required.iter_mut().zip(REQUIRED) {
        *slot = find(name).ok_or_else(|| Error::Input(format!("registry header is missing column {name:?}")))?;
    }
    for (slot, name) in cols.optional.iter_mut().zip(OPTIONAL) {
        *slot = find(name);
    }

    let mut registry = Registry::default();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let facility =
            parse_facility(&row, &cols).map_err(|why| Error::Input(format!("registry line {line}: {why}")))?;
        if !seen.insert(facility.facility_id.clone()) {
            return Err(Error::DuplicateFacility(facility.facility_id));
        }
        let mut missing = facility.missing_covariates();
        if facility.cases.is_none() {
            missing.push("cases");
        }
        if !missing.is_empty() {
            log::debug!(
                "facility {} lacks {}; excluded from regression",
                facility.facility_id,
                missing.join(", ")
            );
            registry.flagged.push((facility.facility_id.clone(), missing));
        }
        registry.facilities.push(facility);
    }
    Ok(registry)
}

fn parse_facility(row: &csv::StringRecord, cols: &Columns) -> std::result::Result<Facility, String> {
    let get = |i: usize| row.get(cols.required[i]).unwrap_or("");
    let opt = |i: usize| cols.optional[i].and_then(|c| row.get(c)).filter(|s| !s.is_empty());

    let facility_id = get(0);
    if facility_id.is_empty() {
        return Err("empty facility_id".into());
    }
    let state = get(2);
    if state.len() != 2 || !state.bytes().all(|b| b.is_ascii_uppercase()) {
        return Err(format!("state {state:?} is not a two-letter code"));
    }
    let county = get(3);
    if county.len() != 5 || !county.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("county_fips {county:?} is not five digits"));
    }
    let polygon = match get(4) {
        "" => None,
        wkt => Some(Polygon::from_wkt(wkt).map_err(|e| e.to_string())?),
    };
    let location = match (opt(1), opt(2)) {
        (None, None) => None,
        (Some(lat), Some(lon)) => {
            let p = LatLon::new(
                lat.parse().map_err(|_| format!("bad latitude {lat:?}"))?,
                lon.parse().map_err(|_| format!("bad longitude {lon:?}"))?,
            );
            if !p.is_valid() {
                return Err(format!("location ({lat}, {lon}) out of range"));
            }
            Some(p)
        }
        _ => return Err("latitude and longitude must be given together".into()),
    };

    let beds = parse_opt::<u32>(get(5), "beds")?;
    if beds == Some(0) {
        return Err("beds must be at least 1".into());
    }
    let cms_rating = parse_opt::<u8>(get(10), "cms_rating")?;
    if let Some(r) = cms_rating {
        if !(1..=5).contains(&r) {
            return Err(format!("cms_rating {r} outside 1..=5"));
        }
    }

    Ok(Facility {
        facility_id: facility_id.to_owned(),
        name: get(1).to_owned(),
        state: state.to_owned(),
        county_fips: county.to_owned(),
        address: opt(0).map(str::to_owned),
        location,
        polygon,
        beds,
        cases: parse_opt::<u32>(get(6), "cases")?,
        high_medicaid: parse_flag(get(7), "high_medicaid")?,
        high_black: parse_flag(get(8), "high_black")?,
        urban: parse_flag(get(9), "urban")?,
        cms_rating,
        infection_violation: parse_flag(get(11), "infection_violation")?,
    })
}

fn parse_opt<T: std::str::FromStr>(text: &str, what: &str) -> std::result::Result<Option<T>, String> {
    if text.is_empty() || text.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    text.parse().map(Some).map_err(|_| format!("bad {what} {text:?}"))
}

fn parse_flag(text: &str, what: &str) -> std::result::Result<Option<bool>, String> {
    match text.to_ascii_lowercase().as_str() {
        "" | "na" => Ok(None),
        "1" | "true" | "yes" | "y" => Ok(Some(true)),
        "0" | "false" | "no" | "n" => Ok(Some(false)),
        _ => Err(format!("bad {what} {text:?}")),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FootprintReport {
    pub from_registry: usize,
    pub from_location: usize,
    pub from_geocoder: usize,
    /// Facilities still without a footprint.
    pub unresolved: Vec<String>,
}

/// Gives every facility without a rooftop polygon a circular fallback
/// footprint around its registry location or, failing that, its geocoded
/// address.
pub fn resolve_footprints<C: GeocoderClient>(
    facilities: &mut [Facility],
    mut geocoder: Option<&mut Geocoder<C>>,
    radius_m: f64,
) -> Result<FootprintReport> {
    let mut report = FootprintReport::default();
    for f in facilities.iter_mut() {
        if f.polygon.is_some() {
            report.from_registry += 1;
            continue;
        }
        if let Some(at) = f.location {
            f.polygon = Some(polygon_from_point(at, radius_m)?);
            report.from_location += 1;
            continue;
        }
        match (f.address.as_deref(), geocoder.as_deref_mut()) {
            (Some(address), Some(g)) => {
                let at = g.geocode(address)?;
                f.location = Some(at);
                f.polygon = Some(polygon_from_point(at, radius_m)?);
                report.from_geocoder += 1;
            }
            _ => report.unresolved.push(f.facility_id.clone()),
        }
    }
    Ok(report)
}

/// Writes facilities in the registry format.
pub fn write_facilities<W: Write>(sink: W, facilities: &[Facility]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(REQUIRED.iter().chain(OPTIONAL.iter()))?;
    let num = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
    let flag = |v: Option<bool>| match v {
        Some(true) => "1".to_owned(),
        Some(false) => "0".to_owned(),
        None => String::new(),
    };
    for f in facilities {
        w.write_record([
            f.facility_id.clone(),
            f.name.clone(),
            f.state.clone(),
            f.county_fips.clone(),
            f.polygon.as_ref().map(Polygon::to_wkt).unwrap_or_default(),
            num(f.beds),
            num(f.cases),
            flag(f.high_medicaid),
            flag(f.high_black),
            flag(f.urban),
            num(f.cms_rating.map(u32::from)),
            flag(f.infection_violation),
            f.address.clone().unwrap_or_default(),
            f.location.map(|p| p.lat.to_string()).unwrap_or_default(),
            f.location.map(|p| p.lon.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("registry output", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::StubGeocoder;

    const HEADER: &str = "facility_id,name,state,county_fips,polygon,beds,cases,high_medicaid,high_black,urban,cms_rating,infection_violation,address,latitude,longitude\n";

    fn registry(rows: &str) -> Result<Registry> {
        load_facilities(format!("{HEADER}{rows}").as_bytes())
    }

    #[test]
    fn two_valid_facilities() {
        let reg = registry(
            "F1,Oak,CT,09009,\"POLYGON((-72.93 41.30, -72.92 41.30, -72.92 41.31, -72.93 41.31, -72.93 41.30))\",120,4,1,0,1,3,1,,,\n\
             F2,Elm,CT,09009,,80,0,0,0,1,5,0,,41.2,-72.8\n",
        )
        .unwrap();
        assert_eq!(reg.facilities.len(), 2);
        assert!(reg.flagged.is_empty());
        assert_eq!(reg.facilities[0].polygon.as_ref().unwrap().vertices().len(), 4);
        assert_eq!(reg.facilities[1].location, Some(LatLon::new(41.2, -72.8)));
        assert!(reg.facilities.iter().all(Facility::regression_ready));
    }

    #[test]
    fn duplicate_id_names_the_id() {
        let err = registry("F1,a,CT,09009,,1,0,0,0,0,1,0,,1,1\nF1,b,CT,09009,,1,0,0,0,0,1,0,,1,1\n").unwrap_err();
        match err {
            Error::DuplicateFacility(id) => assert_eq!(id, "F1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_cms_rating_is_flagged_not_fatal() {
        let reg = registry("F1,a,CT,09009,,10,3,0,0,1,,0,,41,-72\n").unwrap();
        assert_eq!(reg.facilities.len(), 1);
        assert_eq!(reg.flagged, vec![("F1".to_owned(), vec!["cms_rating"])]);
        assert!(!reg.facilities[0].regression_ready());
    }

    #[test]
    fn missing_cases_leaves_regression_sample() {
        let reg = registry("F1,a,CT,09009,,10,,0,0,1,2,0,,41,-72\n").unwrap();
        assert_eq!(reg.flagged[0].1, vec!["cases"]);
    }

    #[test]
    fn invalid_values_are_fatal() {
        for row in [
            "F1,a,Connecticut,09009,,10,3,0,0,1,2,0,,41,-72\n",
            "F1,a,CT,9009,,10,3,0,0,1,2,0,,41,-72\n",
            "F1,a,CT,09009,,0,3,0,0,1,2,0,,41,-72\n",
            "F1,a,CT,09009,,10,3,0,0,1,7,0,,41,-72\n",
            "F1,a,CT,09009,,10,-3,0,0,1,2,0,,41,-72\n",
            "F1,a,CT,09009,,10,3,maybe,0,1,2,0,,41,-72\n",
            "F1,a,CT,09009,,10,3,0,0,1,2,0,,41,\n",
            "F1,a,CT,09009,POLYGON((0 0)),10,3,0,0,1,2,0,,,\n",
        ] {
            assert!(matches!(registry(row), Err(Error::Input(_))), "{row}");
        }
    }

    #[test]
    fn ids_preserved_as_multiset() {
        let rows: String = (0..25)
            .map(|i| format!("F{i:03},n,NY,36061,,10,1,0,0,1,{},0,,40.7,-74.0\n", 1 + i % 5))
            .collect();
        let reg = registry(&rows).unwrap();
        let mut ids: Vec<_> = reg.facilities.iter().map(|f| f.facility_id.clone()).collect();
        ids.sort();
        let expected: Vec<_> = (0..25).map(|i| format!("F{i:03}")).collect();
        assert_eq!(ids, expected);
    }

    #[test]
    fn footprints_from_location_and_geocoder() {
        let mut reg = registry(
            "F1,a,CT,09009,,10,3,0,0,1,2,0,,41.3,-72.9\n\
             F2,b,CT,09009,,10,3,0,0,1,2,0,1 Main St,,\n\
             F3,c,CT,09009,,10,3,0,0,1,2,0,,,\n",
        )
        .unwrap();
        let mut stub = StubGeocoder::new();
        stub.insert("1 Main St", LatLon::new(41.30, -72.93));
        let mut geo = Geocoder::new(stub);
        let report = resolve_footprints(&mut reg.facilities, Some(&mut geo), 30.0).unwrap();
        assert_eq!(report.from_location, 1);
        assert_eq!(report.from_geocoder, 1);
        assert_eq!(report.unresolved, vec!["F3".to_owned()]);
        let f2 = &reg.facilities[1];
        assert!(f2.polygon.as_ref().unwrap().contains(LatLon::new(41.30, -72.93)));
    }

    #[test]
    fn write_then_load() {
        let reg = registry(
            "F1,\"Oak, the\",CT,09009,\"POLYGON((-72.93 41.30, -72.92 41.30, -72.92 41.31, -72.93 41.30))\",120,4,1,0,1,3,1,1 Main St,41.3,-72.9\n\
             F2,Elm,CT,09009,,,,,,,,,,,\n",
        )
        .unwrap();
        let mut buf = Vec::new();
        write_facilities(&mut buf, &reg.facilities).unwrap();
        let again = load_facilities(buf.as_slice()).unwrap();
        assert_eq!(again.facilities, reg.facilities);
    }
}
