//! Error-to-exit-code mapping: 2 config, 3 missing data, 4 numeric failure.

use scalefuse::classify::ClassifyError;
use scalefuse::datastats::DatastatsError;
use scalefuse::extract::ExtractError;
use scalefuse::fuse::FuseError;
use scalefuse::harness::HarnessError;
use scalefuse::metrics::MetricsError;
use scalefuse::pyramid::PyramidError;
use scalefuse::variants::VariantError;

pub const CONFIG: u8 = 2;
pub const MISSING_DATA: u8 = 3;
pub const NUMERIC: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code,
            error: error.into(),
        }
    }

    pub fn config(msg: impl std::fmt::Display) -> Self {
        Failure::new(CONFIG, anyhow::anyhow!("{msg}"))
    }
}

fn extract_code(e: &ExtractError) -> u8 {
    match e {
        ExtractError::InvalidProfile(_) | ExtractError::ExtractorMismatch { .. } => CONFIG,
        _ => MISSING_DATA,
    }
}

macro_rules! classified {
    ($($ty:ty => |$e:ident| $code:expr;)*) => {
        $(impl From<$ty> for Failure {
            fn from($e: $ty) -> Self {
                Failure::new($code, $e)
            }
        })*
    };
}

classified! {
    HarnessError => |e| e.exit_code() as u8;
    ExtractError => |e| extract_code(&e);
    PyramidError => |_e| CONFIG;
    FuseError => |_e| NUMERIC;
    ClassifyError => |_e| NUMERIC;
    MetricsError => |_e| NUMERIC;
    DatastatsError => |e| match e {
        DatastatsError::Io { .. } => MISSING_DATA,
        DatastatsError::ZeroAreaPolygon { .. } => NUMERIC,
        _ => CONFIG,
    };
    VariantError => |e| match e {
        VariantError::InvalidSpec(_) | VariantError::UnknownKind(_) => CONFIG,
        _ => NUMERIC,
    };
}
