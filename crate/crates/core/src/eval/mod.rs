//! KITTI-style 2D detection evaluation: min-height difficulty filter, greedy matching,
//! interpolated AP and mAP. Also hosts box resizing and the pseudo-label audit.

mod ap;
mod audit;
mod matching;
mod resize;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use ap::average_precision;
pub use audit::{audit_pseudo_labels, AuditReport};
pub use matching::{
    filter_difficulty, iou, match_detections, DetectionOutcome, DifficultySplit, MatchResult,
};
pub use resize::resize_boxes_per_category;

use crate::error::{Error, Result};
use crate::labels::PseudoLabelSet;
use crate::types::{BoundingBox, Category, DetectionRecord, ImageId};

pub type DetectionMap = BTreeMap<ImageId, Vec<DetectionRecord>>;
pub type GroundTruthMap = BTreeMap<ImageId, Vec<GtBox>>;

/// A ground-truth box. Extra fields in input files (e.g. a confidence) are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub category: Category,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub min_height: f64,
    pub iou_thresholds: BTreeMap<Category, f64>,
    /// Used for categories without an entry in `iou_thresholds`.
    pub default_iou: f64,
    pub recall_points: usize,
}

impl EvalProtocol {
    /// Vehicles at IoU 0.7, pedestrians at 0.5, 11-point interpolation.
    pub fn kitti(min_height: f64) -> Self {
        EvalProtocol {
            min_height,
            iou_thresholds: [(Category::vehicle(), 0.7), (Category::pedestrian(), 0.5)]
                .into_iter()
                .collect(),
            default_iou: 0.5,
            recall_points: 11,
        }
    }

    pub fn with_min_height(mut self, min_height: f64) -> Self {
        self.min_height = min_height;
        self
    }

    pub fn iou_threshold(&self, category: &Category) -> f64 {
        self.iou_thresholds
            .get(category)
            .copied()
            .unwrap_or(self.default_iou)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_height >= 0.0) {
            return Err(Error::Config("min_height must be non-negative".into()));
        }
        if self.recall_points < 2 {
            return Err(Error::Config("recall_points must be at least 2".into()));
        }
        let all = self.iou_thresholds.values().chain(std::iter::once(&self.default_iou));
        for t in all {
            if !(*t > 0.0 && *t <= 1.0) {
                return Err(Error::Config(format!("IoU threshold {t} outside (0,1]")));
            }
        }
        Ok(())
    }
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol::kitti(25.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    /// Average precision in percent.
    pub ap: f64,
    pub num_gt: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ignored_gt: usize,
    pub ignored_dets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean AP over categories, in percent.
    pub map: f64,
    pub categories: BTreeMap<Category, CategoryReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("category,ap,num_gt,tp,fp,fn,ignored_gt,ignored_dets\n");
        for (c, r) in &self.categories {
            s.push_str(&format!(
                "{c},{},{},{},{},{},{},{}\n",
                r.ap, r.num_gt, r.tp, r.fp, r.fn_, r.ignored_gt, r.ignored_dets
            ));
        }
        s.push_str(&format!("mAP,{},,,,,,\n", self.map));
        s
    }
}

/// Unweighted mean of per-category AP values.
pub fn mean_ap(per_category: &BTreeMap<Category, f64>) -> Result<f64> {
    if per_category.is_empty() {
        return Err(Error::Config("mAP needs at least one category".into()));
    }
    Ok(per_category.values().sum::<f64>() / per_category.len() as f64)
}

/// Evaluates detections against ground truth over the union of image ids.
///
/// Categories are those present in either input. When nothing is present at all the
/// result is a vacuous 100.
pub fn evaluate(dets: &DetectionMap, gt: &GroundTruthMap, protocol: &EvalProtocol) -> EvalReport {
    let mut categories: BTreeSet<&Category> = BTreeSet::new();
    categories.extend(dets.values().flatten().map(|d| &d.category));
    categories.extend(gt.values().flatten().map(|g| &g.category));
    let ids: BTreeSet<&ImageId> = dets.keys().chain(gt.keys()).collect();

    let mut reports = BTreeMap::new();
    for category in categories {
        let thr = protocol.iou_threshold(category);
        // (confidence, image, detection index, tp?)
        let mut scored: Vec<(f64, &ImageId, usize, bool)> = Vec::new();
        let mut rep = CategoryReport {
            ap: 0.0,
            num_gt: 0,
            tp: 0,
            fp: 0,
            fn_: 0,
            ignored_gt: 0,
            ignored_dets: 0,
        };
        for id in &ids {
            let img_dets: Vec<DetectionRecord> = dets
                .get(*id)
                .into_iter()
                .flatten()
                .filter(|d| &d.category == category)
                .cloned()
                .collect();
            let img_gt = gt
                .get(*id)
                .into_iter()
                .flatten()
                .filter(|g| &g.category == category)
                .map(|g| &g.bbox);
            let split = filter_difficulty(img_gt, protocol.min_height);
            let m = match_detections(&img_dets, &split.evaluated, &split.ignored, thr);
            rep.num_gt += split.evaluated.len();
            rep.ignored_gt += split.ignored.len();
            rep.fn_ += m.num_missed();
            for (i, o) in m.detections.iter().enumerate() {
                match o {
                    DetectionOutcome::Ignored => rep.ignored_dets += 1,
                    _ => scored.push((img_dets[i].confidence, *id, i, o.is_tp())),
                }
            }
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));
        let flags: Vec<bool> = scored.iter().map(|s| s.3).collect();
        rep.tp = flags.iter().filter(|f| **f).count();
        rep.fp = flags.len() - rep.tp;
        rep.ap = 100.0 * average_precision(&flags, rep.num_gt, protocol.recall_points);
        reports.insert(category.clone(), rep);
    }
    let aps: BTreeMap<Category, f64> = reports.iter().map(|(c, r)| (c.clone(), r.ap)).collect();
    EvalReport {
        map: mean_ap(&aps).unwrap_or(100.0),
        categories: reports,
    }
}

/// Ground truth view of a pseudo-label set; confidences are dropped.
pub fn as_ground_truth(set: &PseudoLabelSet) -> GroundTruthMap {
    set.entries
        .iter()
        .map(|(id, dets)| {
            let boxes = dets
                .iter()
                .map(|d| GtBox {
                    category: d.category.clone(),
                    bbox: d.bbox,
                })
                .collect();
            (id.clone(), boxes)
        })
        .collect()
}

/// Similarity of consecutive pseudo-label sets: `old` plays ground truth and `new` the
/// results under evaluation, with no difficulty filtering.
pub fn stop_metric_map(old: &PseudoLabelSet, new: &PseudoLabelSet, protocol: &EvalProtocol) -> f64 {
    let protocol = protocol.clone().with_min_height(0.0);
    evaluate(&new.entries, &as_ground_truth(old), &protocol).map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::View;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn gt(cat: &str, b: BoundingBox) -> GtBox {
        GtBox {
            category: cat.into(),
            bbox: b,
        }
    }

    fn sample_gt() -> GroundTruthMap {
        let mut g = GroundTruthMap::new();
        g.insert("a".into(), vec![gt("vehicle", bx(0.0, 0.0, 50.0, 40.0)), gt("pedestrian", bx(100.0, 0.0, 120.0, 60.0))]);
        g.insert("b".into(), vec![gt("vehicle", bx(10.0, 10.0, 80.0, 60.0))]);
        g
    }

    fn as_dets(g: &GroundTruthMap, conf: f64) -> DetectionMap {
        g.iter()
            .map(|(id, v)| {
                (id.clone(), v.iter().map(|g| DetectionRecord::new(g.category.clone(), g.bbox, conf)).collect())
            })
            .collect()
    }

    #[test]
    fn mean_ap_examples() {
        let m: BTreeMap<Category, f64> =
            [(Category::vehicle(), 83.43), (Category::pedestrian(), 67.77)].into_iter().collect();
        assert!((mean_ap(&m).unwrap() - 75.60).abs() < 1e-9);
        let single: BTreeMap<_, _> = [(Category::vehicle(), 42.0)].into_iter().collect();
        assert_eq!(mean_ap(&single).unwrap(), 42.0);
        let zeros: BTreeMap<_, _> =
            [(Category::vehicle(), 0.0), (Category::pedestrian(), 0.0)].into_iter().collect();
        assert_eq!(mean_ap(&zeros).unwrap(), 0.0);
        assert!(mean_ap(&BTreeMap::new()).is_err());
    }

    #[test]
    fn perfect_and_empty() {
        let g = sample_gt();
        let p = EvalProtocol::kitti(25.0);
        assert_eq!(evaluate(&as_dets(&g, 1.0), &g, &p).map, 100.0);
        let r = evaluate(&DetectionMap::new(), &g, &p);
        assert_eq!(r.map, 0.0);
        assert_eq!(r.categories[&Category::vehicle()].fn_, 2);
    }

    #[test]
    fn min_height_only_changes_gt() {
        let g = sample_gt();
        let d = as_dets(&g, 0.9);
        let r25 = evaluate(&d, &g, &EvalProtocol::kitti(25.0));
        let r50 = evaluate(&d, &g, &EvalProtocol::kitti(50.0));
        // the 40-px vehicle becomes don't-care at 50 px; its detection is ignored, not FP
        assert_eq!(r25.categories[&Category::vehicle()].num_gt, 2);
        assert_eq!(r50.categories[&Category::vehicle()].num_gt, 1);
        assert_eq!(r50.categories[&Category::vehicle()].ignored_dets, 1);
        assert_eq!(r50.categories[&Category::vehicle()].fp, 0);
        assert_eq!(r50.map, 100.0);
    }

    #[test]
    fn stop_metric_examples() {
        let g = sample_gt();
        let set = PseudoLabelSet { producing_view: View::One, cycle: 1, entries: as_dets(&g, 0.9) };
        let p = EvalProtocol::default();
        assert_eq!(stop_metric_map(&set, &set, &p), 100.0);
        let empty = PseudoLabelSet::empty(View::One, 2);
        assert_eq!(stop_metric_map(&set, &empty, &p), 0.0);
        assert_eq!(stop_metric_map(&empty, &empty, &p), 100.0);

        // old has 3 boxes over 2 images, new drops the vehicle in `b`
        let mut new = set.clone();
        new.entries.get_mut("b").unwrap().clear();
        let v = stop_metric_map(&set, &new, &p);
        // vehicles: 1 of 2 found at precision 1 -> levels 0..0.5 (6 of 11); pedestrians: 100
        let expected = (100.0 * 6.0 / 11.0 + 100.0) / 2.0;
        assert!((v - expected).abs() < 1e-9, "{v} vs {expected}");
    }

    #[test]
    fn report_csv_shape() {
        let g = sample_gt();
        let r = evaluate(&as_dets(&g, 1.0), &g, &EvalProtocol::default());
        let csv = r.to_csv();
        assert!(csv.starts_with("category,ap,num_gt,tp,fp,fn,ignored_gt,ignored_dets\n"));
        assert!(csv.contains("vehicle,100,2,2,0,0,0,0"));
        assert!(csv.trim_end().ends_with("mAP,100,,,,,,"));
    }
}
