//! Detector backends: the train / run-detector contract used by the co-training loop.
//!
//! The engine builds requests, dispatches them to a [`DetectorBackend`], and re-checks
//! what comes back so every backend obeys the same contract.

mod external;
pub mod wire;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use external::ExternalWorker;

use crate::dataset::ViewPairedDataset;
use crate::error::{Error, Result};
use crate::eval::DetectionMap;
use crate::labels::{apply_confidence_thresholds, PseudoLabelSet, Thresholds};
use crate::types::{ImageId, LabelRecord, LabelSource, View};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Simulated,
    External,
}

/// Which backend to use plus its opaque architecture / training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub executable: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

impl DetectorSpec {
    pub fn simulated() -> Self {
        DetectorSpec {
            kind: BackendKind::Simulated,
            executable: None,
            config: serde_json::Value::Null,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == BackendKind::External {
            match &self.executable {
                Some(p) if p.exists() => {}
                Some(p) => {
                    return Err(Error::Config(format!(
                        "worker executable {} does not exist",
                        p.display()
                    )))
                }
                None => return Err(Error::Config("external backend needs an executable".into())),
            }
        }
        Ok(())
    }
}

/// Trained model. Only meaningful to the backend that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHandle {
    pub token: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub view: View,
    pub cycle: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainImage {
    pub id: ImageId,
    pub payload_ref: String,
    pub labels: Vec<LabelRecord>,
    /// Whether background regions of this image may serve as negatives.
    pub mine_negatives: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRequest {
    pub view: View,
    pub cycle: u32,
    pub images: Vec<TrainImage>,
}

impl TrainRequest {
    /// Labeled images of `data` plus the pseudo-labeled images of `pseudo`, all in the
    /// frame of `view`. Only labeled images are open to negative mining.
    pub fn build(
        data: &ViewPairedDataset,
        view: View,
        cycle: u32,
        pseudo: Option<&PseudoLabelSet>,
    ) -> Result<Self> {
        let mut images = Vec::new();
        for id in data.labeled_ids() {
            let img = data.image(id).expect("labeled id is in the dataset");
            images.push(TrainImage {
                id: id.clone(),
                payload_ref: img.payload_ref(view).to_string(),
                labels: data.labels_in_view(id, view)?,
                mine_negatives: true,
            });
        }
        if let Some(pl) = pseudo {
            for (id, dets) in &pl.entries {
                let img = data.image(id).ok_or_else(|| {
                    Error::validation(format!("pseudo-labels for `{id}`"), "unknown image")
                })?;
                images.push(TrainImage {
                    id: id.clone(),
                    payload_ref: img.payload_ref(view).to_string(),
                    labels: dets
                        .iter()
                        .map(|d| LabelRecord {
                            category: d.category.clone(),
                            bbox: d.bbox,
                            source: LabelSource::Pseudo { cycle: pl.cycle },
                        })
                        .collect(),
                    mine_negatives: false,
                });
            }
        }
        Ok(TrainRequest {
            view,
            cycle,
            images,
        })
    }

    /// Rejects negative mining on any image carrying pseudo-labels.
    pub fn validate(&self) -> Result<()> {
        for img in &self.images {
            if img.mine_negatives && img.labels.iter().any(|l| l.source.is_pseudo()) {
                return Err(Error::validation(
                    format!("train request image `{}`", img.id),
                    "negative mining requested on a pseudo-labeled image",
                ));
            }
        }
        Ok(())
    }

    pub fn num_pseudo_boxes(&self) -> usize {
        self.images
            .iter()
            .flat_map(|i| &i.labels)
            .filter(|l| l.source.is_pseudo())
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectImage {
    pub id: ImageId,
    pub payload_ref: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectRequest {
    pub view: View,
    pub thresholds: Thresholds,
    pub images: Vec<DetectImage>,
}

pub trait DetectorBackend {
    /// Trains a model; `model_dir` is where persistent backends keep it.
    fn train(&self, request: &TrainRequest, model_dir: Option<&Path>) -> Result<ModelHandle>;

    /// Runs a model. Implementations may return detections below threshold; the
    /// engine filters them.
    fn detect(&self, model: &ModelHandle, request: &DetectRequest) -> Result<DetectionMap>;
}

impl<B: DetectorBackend + ?Sized> DetectorBackend for &B {
    fn train(&self, request: &TrainRequest, model_dir: Option<&Path>) -> Result<ModelHandle> {
        (**self).train(request, model_dir)
    }

    fn detect(&self, model: &ModelHandle, request: &DetectRequest) -> Result<DetectionMap> {
        (**self).detect(model, request)
    }
}

impl<B: DetectorBackend + ?Sized> DetectorBackend for Box<B> {
    fn train(&self, request: &TrainRequest, model_dir: Option<&Path>) -> Result<ModelHandle> {
        (**self).train(request, model_dir)
    }

    fn detect(&self, model: &ModelHandle, request: &DetectRequest) -> Result<DetectionMap> {
        (**self).detect(model, request)
    }
}

/// Validates and dispatches a training request.
pub fn train<B: DetectorBackend + ?Sized>(
    backend: &B,
    request: &TrainRequest,
    model_dir: Option<&Path>,
) -> Result<ModelHandle> {
    request.validate()?;
    let mut handle = backend.train(request, model_dir)?;
    handle.view = request.view;
    handle.cycle = request.cycle;
    Ok(handle)
}

/// Runs `model` on `ids` and returns the thresholded pseudo-labels. Images left without
/// detections are dropped; detections for images that were not requested are an error.
pub fn detect<B: DetectorBackend + ?Sized>(
    backend: &B,
    model: &ModelHandle,
    data: &ViewPairedDataset,
    ids: &[ImageId],
    thresholds: &Thresholds,
) -> Result<PseudoLabelSet> {
    let view = model.view;
    let mut out = PseudoLabelSet::empty(view, model.cycle);
    if ids.is_empty() {
        return Ok(out);
    }
    let images = ids
        .iter()
        .map(|id| {
            let img = data.image(id).ok_or_else(|| {
                Error::validation(format!("detect request image `{id}`"), "unknown image")
            })?;
            Ok(DetectImage {
                id: id.clone(),
                payload_ref: img.payload_ref(view).to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let request = DetectRequest {
        view,
        thresholds: thresholds.clone(),
        images,
    };
    let raw = backend.detect(model, &request)?;
    postprocess(raw, ids, thresholds, view, &mut out)?;
    Ok(out)
}

/// Same as [`detect`] for images that are not part of a dataset (e.g. a test split).
pub fn detect_images<B: DetectorBackend + ?Sized>(
    backend: &B,
    model: &ModelHandle,
    images: Vec<DetectImage>,
    thresholds: &Thresholds,
) -> Result<PseudoLabelSet> {
    let view = model.view;
    let mut out = PseudoLabelSet::empty(view, model.cycle);
    if images.is_empty() {
        return Ok(out);
    }
    let ids: Vec<ImageId> = images.iter().map(|i| i.id.clone()).collect();
    let request = DetectRequest {
        view,
        thresholds: thresholds.clone(),
        images,
    };
    let raw = backend.detect(model, &request)?;
    postprocess(raw, &ids, thresholds, view, &mut out)?;
    Ok(out)
}

fn postprocess(
    raw: DetectionMap,
    ids: &[ImageId],
    thresholds: &Thresholds,
    view: View,
    out: &mut PseudoLabelSet,
) -> Result<()> {
    let requested: std::collections::HashSet<&ImageId> = ids.iter().collect();
    for (id, dets) in raw {
        if !requested.contains(&id) {
            return Err(Error::Backend {
                view,
                message: format!("detections returned for unrequested image `{id}`"),
            });
        }
        let kept = apply_confidence_thresholds(&dets, thresholds).map_err(|e| Error::Backend {
            view,
            message: format!("image `{id}`: {e}"),
        })?;
        if !kept.is_empty() {
            out.entries.insert(id, kept);
        }
    }
    Ok(())
}
