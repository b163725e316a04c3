//! Pseudo-label sets, per-category confidence thresholds and image confidence.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Category, DetectionRecord, ImageId, View};

/// Per-category confidence thresholds (the `T` hyper-parameter).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Thresholds(pub BTreeMap<Category, f64>);

impl Thresholds {
    pub fn uniform<I, C>(categories: I, value: f64) -> Self
    where
        I: IntoIterator<Item = C>,
        C: Into<Category>,
    {
        Thresholds(categories.into_iter().map(|c| (c.into(), value)).collect())
    }

    pub fn get(&self, category: &Category) -> Result<f64> {
        self.0
            .get(category)
            .copied()
            .ok_or_else(|| Error::UnknownCategory(category.clone()))
    }

    pub fn categories(&self) -> impl Iterator<Item = &Category> {
        self.0.keys()
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::Config("T must name at least one category".into()));
        }
        for (c, t) in &self.0 {
            if !(0.0..=1.0).contains(t) {
                return Err(Error::Config(format!("threshold for `{c}` must lie in [0,1], got {t}")));
            }
        }
        Ok(())
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds::uniform([Category::vehicle(), Category::pedestrian()], 0.8)
    }
}

/// Arithmetic mean of detection confidences; an image without detections scores 0.
pub fn image_confidence(dets: &[DetectionRecord]) -> f64 {
    if dets.is_empty() {
        return 0.0;
    }
    dets.iter().map(|d| d.confidence).sum::<f64>() / dets.len() as f64
}

/// Keeps detections whose confidence reaches their category's threshold, in order.
pub fn apply_confidence_thresholds(
    dets: &[DetectionRecord],
    thresholds: &Thresholds,
) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::with_capacity(dets.len());
    for d in dets {
        if d.confidence >= thresholds.get(&d.category)? {
            out.push(d.clone());
        }
    }
    Ok(out)
}

/// Images self-labeled by one model, keyed by image id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub producing_view: View,
    pub cycle: u32,
    pub entries: BTreeMap<ImageId, Vec<DetectionRecord>>,
}

impl PseudoLabelSet {
    pub fn empty(producing_view: View, cycle: u32) -> Self {
        PseudoLabelSet {
            producing_view,
            cycle,
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_boxes(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn ids(&self) -> BTreeSet<ImageId> {
        self.entries.keys().cloned().collect()
    }

    pub fn get(&self, id: &str) -> Option<&Vec<DetectionRecord>> {
        self.entries.get(id)
    }

    /// Subset restricted to `ids`, keeping view and cycle.
    pub fn restrict<'a, I>(&self, ids: I) -> PseudoLabelSet
    where
        I: IntoIterator<Item = &'a ImageId>,
    {
        let entries = ids
            .into_iter()
            .filter_map(|id| self.entries.get(id).map(|d| (id.clone(), d.clone())))
            .collect();
        PseudoLabelSet {
            producing_view: self.producing_view,
            cycle: self.cycle,
            entries,
        }
    }

    pub fn image_confidences(&self) -> BTreeMap<ImageId, f64> {
        self.entries
            .iter()
            .map(|(id, d)| (id.clone(), image_confidence(d)))
            .collect()
    }
}
