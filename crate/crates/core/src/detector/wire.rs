//! JSON files exchanged with external detector workers (schema version 1).
//!
//! Unknown fields are ignored so newer workers can add fields; the `version` field is
//! mandatory and must match [`WIRE_VERSION`].

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{DetectRequest, TrainRequest};
use crate::error::{Error, Result};
use crate::types::{BoundingBox, Category, DetectionRecord, ImageId, View};

pub const WIRE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireLabel {
    pub category: Category,
    pub bbox: BoundingBox,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTrainImage {
    pub id: ImageId,
    pub payload_ref: String,
    pub labels: Vec<WireLabel>,
    pub mine_negatives: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequestFile {
    pub version: u32,
    pub view: View,
    pub images: Vec<WireTrainImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub id: ImageId,
    pub payload_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequestFile {
    pub version: u32,
    pub view: View,
    pub thresholds: BTreeMap<Category, f64>,
    pub images: Vec<WireImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsFile {
    pub version: u32,
    pub results: BTreeMap<ImageId, Vec<DetectionRecord>>,
}

impl From<&TrainRequest> for TrainRequestFile {
    fn from(r: &TrainRequest) -> Self {
        TrainRequestFile {
            version: WIRE_VERSION,
            view: r.view,
            images: r
                .images
                .iter()
                .map(|i| WireTrainImage {
                    id: i.id.clone(),
                    payload_ref: i.payload_ref.clone(),
                    labels: i
                        .labels
                        .iter()
                        .map(|l| WireLabel {
                            category: l.category.clone(),
                            bbox: l.bbox,
                            source: l.source.as_str().to_string(),
                        })
                        .collect(),
                    mine_negatives: i.mine_negatives,
                })
                .collect(),
        }
    }
}

impl From<&DetectRequest> for DetectRequestFile {
    fn from(r: &DetectRequest) -> Self {
        DetectRequestFile {
            version: WIRE_VERSION,
            view: r.view,
            thresholds: r.thresholds.0.clone(),
            images: r
                .images
                .iter()
                .map(|i| WireImage {
                    id: i.id.clone(),
                    payload_ref: i.payload_ref.clone(),
                })
                .collect(),
        }
    }
}

/// Wire file types carrying a schema version.
pub trait Versioned {
    fn version(&self) -> u32;
}

macro_rules! versioned {
    ($($t:ty),*) => {$(
        impl Versioned for $t {
            fn version(&self) -> u32 {
                self.version
            }
        }
    )*};
}

versioned!(TrainRequestFile, DetectRequestFile, DetectionsFile);

/// Canonical encoding: pretty-printed JSON with a trailing newline.
pub fn encode<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("wire types serialize");
    s.push('\n');
    s
}

/// Decodes a wire file; schema errors report the JSON path of the offending field.
pub fn decode<T: DeserializeOwned + Versioned>(text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value: T = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let mut path = e.path().to_string();
        let message = e.inner().to_string();
        if let Some(field) = message
            .strip_prefix("missing field `")
            .and_then(|rest| rest.split('`').next())
        {
            path = if path == "." { field.to_string() } else { format!("{path}.{field}") };
        }
        Error::Protocol(format!("schema violation at `{path}`: {message}"))
    })?;
    if value.version() != WIRE_VERSION {
        return Err(Error::Protocol(format!(
            "unsupported schema version {} (expected {WIRE_VERSION})",
            value.version()
        )));
    }
    Ok(value)
}
