use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    /// Malformed input that cannot be skipped line by line.
    #[error("{0}")]
    Input(String),

    #[error("duplicate facility id {0:?}")]
    DuplicateFacility(String),

    #[error("unknown facility {0:?}")]
    UnknownFacility(String),

    #[error("facility {0:?} has no polygon")]
    MissingPolygon(String),

    #[error("invalid polygon: {0}")]
    Polygon(String),

    #[error("geocoder has no entry for address {0:?}")]
    GeocodeMiss(String),

    #[error("geocoder returned out-of-range coordinates ({lat}, {lon}) for {address:?}")]
    GeocodeRange { address: String, lat: f64, lon: f64 },

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("{0}")]
    Model(String),

    #[error("{what} exceeds the oracle size cap ({size} > {cap})")]
    OracleCap {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad or missing input data, as opposed to
    /// failures inside a computation.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv(_)
                | Error::Input(_)
                | Error::DuplicateFacility(_)
                | Error::UnknownFacility(_)
                | Error::MissingPolygon(_)
                | Error::Polygon(_)
                | Error::GeocodeMiss(_)
                | Error::GeocodeRange { .. }
                | Error::Config(_)
        )
    }
}
