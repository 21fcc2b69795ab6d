use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};

use crate::geometry::LatLon;
use crate::{Error, Result};

/// Address-to-coordinate lookup. `Ok(None)` means the service has no answer
/// for the address.
pub trait GeocoderClient {
    fn lookup(&mut self, address: &str) -> Result<Option<LatLon>>;
}

/// File-backed geocoder keyed by exact (trimmed) address.
///
/// File format: one `address<TAB>lat,lon` entry per line; blank lines and
/// lines starting with `#` are ignored.
#[derive(Clone, Debug, Default)]
pub struct StubGeocoder {
    entries: HashMap<String, LatLon>,
    calls: usize,
}

impl StubGeocoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_reader<R: Read>(source: R) -> Result<Self> {
        let mut stub = Self::new();
        for (n, line) in BufReader::new(source).lines().enumerate() {
            let line = line.map_err(|e| Error::io("geocoder stub", e))?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let bad = || Error::Input(format!("geocoder stub line {}: expected `address<TAB>lat,lon`", n + 1));
            let (address, coords) = trimmed.rsplit_once('\t').ok_or_else(bad)?;
            let (lat, lon) = coords.split_once(',').ok_or_else(bad)?;
            let lat: f64 = lat.trim().parse().map_err(|_| bad())?;
            let lon: f64 = lon.trim().parse().map_err(|_| bad())?;
            stub.insert(address, LatLon::new(lat, lon));
        }
        Ok(stub)
    }

    pub fn insert(&mut self, address: &str, at: LatLon) {
        self.entries.insert(address.trim().to_owned(), at);
    }

    /// Number of lookups served so far.
    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl GeocoderClient for StubGeocoder {
    fn lookup(&mut self, address: &str) -> Result<Option<LatLon>> {
        self.calls += 1;
        Ok(self.entries.get(address.trim()).copied())
    }
}

/// Caching front end over a [`GeocoderClient`]; each distinct address reaches
/// the client at most once on success.
pub struct Geocoder<C> {
    client: C,
    cache: HashMap<String, LatLon>,
}

impl<C: GeocoderClient> Geocoder<C> {
    pub fn new(client: C) -> Self {
        Self {
            client,
            cache: HashMap::new(),
        }
    }

    pub fn geocode(&mut self, address: &str) -> Result<LatLon> {
        let key = address.trim();
        if let Some(hit) = self.cache.get(key) {
            return Ok(*hit);
        }
        let at = self
            .client
            .lookup(key)?
            .ok_or_else(|| Error::GeocodeMiss(key.to_owned()))?;
        if !at.is_valid() {
            return Err(Error::GeocodeRange {
                address: key.to_owned(),
                lat: at.lat,
                lon: at.lon,
            });
        }
        self.cache.insert(key.to_owned(), at);
        Ok(at)
    }

    pub fn client(&self) -> &C {
        &self.client
    }
}
