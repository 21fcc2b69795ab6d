//! Flat `key = value` configuration. Every key can also be given on the
//! command line as `--key value`, which takes precedence over the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use staffnet::econometrics::RegressionSpec;
use staffnet::ingest::{parse_timestamp, StudyWindow};
use staffnet::metrics::EigenOptions;
use staffnet::network::Partition;
use staffnet::synth::ScenarioConfig;
use staffnet::{Error, Result};

/// Pipeline keys with their defaults (empty means unset) and help text.
pub const PIPELINE_KEYS: [(&str, &str, &str); 17] = [
    ("pings", "", "ping file (device_id,timestamp,latitude,longitude)"),
    ("registry", "", "facility registry file"),
    ("geocoder", "", "geocoder stub file, address<TAB>lat,lon per line"),
    ("cases_alt", "", "alternate case counts (facility_id,cases) for a second regression run"),
    ("out_dir", "out", "directory for stage outputs"),
    ("synth_dir", "synth", "directory the synth stage writes its scenario to"),
    ("window_start", "2020-03-13T00:00:00Z", "first instant of the study window"),
    ("window_end", "2020-04-24T00:00:00Z", "end of the study window (exclusive)"),
    ("cell_deg", "0.01", "spatial grid cell size in degrees"),
    ("fallback_radius_m", "30", "radius of the footprint drawn around point locations"),
    ("eigen_tol", "1e-12", "power iteration tolerance"),
    ("eigen_max_iter", "10000", "power iteration limit"),
    ("partition", "state", "network partition: state or national"),
    (
        "specs",
        "ihs:degree:state; ihs:strength:state; ihs:wand:state; ihs:eigencentrality:state; ihs:wand+eigencentrality:state",
        "regression specifications, separated by semicolons",
    ),
    ("counterfactual_spec", "ihs:wand+eigencentrality:state", "specification used for the counterfactual"),
    ("degree_bin_width", "5", "degree histogram bin width"),
    ("threads", "0", "worker threads; 0 uses all cores"),
];

#[derive(Clone, Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

pub fn all_keys() -> Vec<String> {
    PIPELINE_KEYS
        .iter()
        .map(|(k, _, _)| (*k).to_owned())
        .chain(ScenarioConfig::keys())
        .collect()
}

impl Config {
    pub fn new() -> Self {
        let mut values = BTreeMap::new();
        for (k, v, _) in PIPELINE_KEYS {
            values.insert(k.to_owned(), v.to_owned());
        }
        Self { values }
    }

    /// Reads `key = value` lines; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut cfg = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !all_keys().iter().any(|k| k == key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        self.values.insert(key.to_owned(), value.to_owned());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .raw(key)
            .ok_or_else(|| Error::Config(format!("{key} is not set")))?;
        raw.parse()
            .map_err(|_| Error::Config(format!("bad value {raw:?} for {key}")))
    }

    /// An input file that must exist.
    pub fn input_path(&self, key: &str) -> Result<PathBuf> {
        let raw = self
            .raw(key)
            .ok_or_else(|| Error::Config(format!("{key} is not set")))?;
        let path = PathBuf::from(raw);
        if !path.is_file() {
            return Err(Error::io(
                raw,
                std::io::Error::new(std::io::ErrorKind::NotFound, format!("{key} file not found")),
            ));
        }
        Ok(path)
    }

    pub fn optional_input_path(&self, key: &str) -> Result<Option<PathBuf>> {
        match self.raw(key) {
            None => Ok(None),
            Some(_) => self.input_path(key).map(Some),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out_dir").unwrap_or("out"))
    }

    pub fn window(&self) -> Result<StudyWindow> {
        let ts = |key: &str| {
            let raw = self.raw(key).unwrap_or("");
            parse_timestamp(raw).ok_or_else(|| Error::Config(format!("bad timestamp {raw:?} for {key}")))
        };
        StudyWindow::new(ts("window_start")?, ts("window_end")?)
    }

    pub fn eigen_options(&self) -> Result<EigenOptions> {
        Ok(EigenOptions {
            tol: self.get("eigen_tol")?,
            max_iter: self.get("eigen_max_iter")?,
        })
    }

    pub fn partition(&self) -> Result<Partition> {
        self.get("partition")
    }

    pub fn specs(&self) -> Result<Vec<RegressionSpec>> {
        let raw = self.raw("specs").unwrap_or("");
        let specs = raw
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        if specs.is_empty() {
            return Err(Error::Config("specs is empty".into()));
        }
        Ok(specs)
    }

    pub fn scenario(&self) -> Result<ScenarioConfig> {
        let mut sc = ScenarioConfig {
            window: self.window()?,
            ..ScenarioConfig::default()
        };
        for key in ScenarioConfig::keys() {
            if let Some(v) = self.raw(&key) {
                sc.set(&key, v)?;
            }
        }
        sc.validate()?;
        Ok(sc)
    }
}
