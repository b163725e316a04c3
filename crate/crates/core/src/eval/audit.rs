use serde::Serialize;

use super::{match_detections, DetectionOutcome, EvalProtocol, GroundTruthMap};
use crate::error::{Error, Result};
use crate::labels::PseudoLabelSet;
use crate::types::{BoundingBox, Category, DetectionRecord};

/// False-positive count of a pseudo-label set and its three corrected variants:
/// false positives removed (FP), matched boxes snapped to ground truth (BB), and both.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub num_fp: usize,
    pub fp_percent: f64,
    pub num_pseudo_boxes: usize,
    pub labeled_pool_size: usize,
    #[serde(skip)]
    pub fp_removed: PseudoLabelSet,
    #[serde(skip)]
    pub bb_replaced: PseudoLabelSet,
    #[serde(skip)]
    pub fp_removed_bb_replaced: PseudoLabelSet,
}

/// Matches every pseudo box against ground truth with the evaluator's greedy rule (all
/// ground truth evaluated, per-category IoU thresholds from `protocol`).
pub fn audit_pseudo_labels(
    pl: &PseudoLabelSet,
    gt: &GroundTruthMap,
    labeled_pool_size: usize,
    protocol: &EvalProtocol,
) -> Result<AuditReport> {
    let mut fp_removed = PseudoLabelSet::empty(pl.producing_view, pl.cycle);
    let mut bb_replaced = fp_removed.clone();
    let mut both = fp_removed.clone();
    let mut num_fp = 0;
    for (id, dets) in &pl.entries {
        let truth = gt.get(id).ok_or_else(|| {
            Error::validation(format!("pseudo-labels for `{id}`"), "no ground truth for image")
        })?;
        // None = false positive, Some(box) = geometry of the matched ground truth
        let mut matched: Vec<Option<BoundingBox>> = vec![None; dets.len()];
        let mut categories: Vec<&Category> = dets.iter().map(|d| &d.category).collect();
        categories.sort();
        categories.dedup();
        for cat in categories {
            let idx: Vec<usize> = (0..dets.len()).filter(|&i| &dets[i].category == cat).collect();
            let sub: Vec<DetectionRecord> = idx.iter().map(|&i| dets[i].clone()).collect();
            let gt_boxes: Vec<BoundingBox> =
                truth.iter().filter(|g| &g.category == cat).map(|g| g.bbox).collect();
            let m = match_detections(&sub, &gt_boxes, &[], protocol.iou_threshold(cat));
            for (k, o) in m.detections.iter().enumerate() {
                if let DetectionOutcome::TruePositive { gt } = o {
                    matched[idx[k]] = Some(gt_boxes[*gt]);
                }
            }
        }
        let mut keep = Vec::new();
        let mut snapped = Vec::new();
        let mut keep_snapped = Vec::new();
        for (d, m) in dets.iter().zip(&matched) {
            match m {
                Some(b) => {
                    let s = DetectionRecord { bbox: *b, ..d.clone() };
                    keep.push(d.clone());
                    snapped.push(s.clone());
                    keep_snapped.push(s);
                }
                None => {
                    num_fp += 1;
                    snapped.push(d.clone());
                }
            }
        }
        fp_removed.entries.insert(id.clone(), keep);
        bb_replaced.entries.insert(id.clone(), snapped);
        both.entries.insert(id.clone(), keep_snapped);
    }
    let num_pseudo_boxes = pl.num_boxes();
    let denom = labeled_pool_size + num_pseudo_boxes;
    let fp_percent = if denom == 0 { 0.0 } else { num_fp as f64 / denom as f64 * 100.0 };
    Ok(AuditReport {
        num_fp,
        fp_percent,
        num_pseudo_boxes,
        labeled_pool_size,
        fp_removed,
        bb_replaced,
        fp_removed_bb_replaced: both,
    })
}

#[cfg(test)]
mod tests {
    use super::super::GtBox;
    use super::*;
    use crate::types::View;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn fixture() -> (PseudoLabelSet, GroundTruthMap) {
        let mut pl = PseudoLabelSet::empty(View::One, 3);
        pl.entries.insert(
            "a".into(),
            vec![
                DetectionRecord::new("vehicle", bx(0.0, 0.0, 100.0, 72.0), 0.9),
                DetectionRecord::new("vehicle", bx(300.0, 0.0, 340.0, 40.0), 0.85),
            ],
        );
        pl.entries.insert(
            "b".into(),
            vec![DetectionRecord::new("pedestrian", bx(10.0, 10.0, 30.0, 70.0), 0.95)],
        );
        let mut gt = GroundTruthMap::new();
        gt.insert("a".into(), vec![GtBox { category: "vehicle".into(), bbox: bx(0.0, 0.0, 100.0, 100.0) }]);
        gt.insert("b".into(), vec![GtBox { category: "pedestrian".into(), bbox: bx(10.0, 10.0, 30.0, 70.0) }]);
        (pl, gt)
    }

    #[test]
    fn counts_and_corrections() {
        let (pl, gt) = fixture();
        let r = audit_pseudo_labels(&pl, &gt, 7, &EvalProtocol::default()).unwrap();
        assert_eq!(r.num_fp, 1);
        assert_eq!(r.fp_removed.num_boxes(), 2);
        // 1 / (7 labeled + 3 pseudo)
        assert_eq!(r.fp_percent, 10.0);
        // IoU 0.72 against the 100x100 box, so BB snaps the geometry exactly
        let snapped = &r.bb_replaced.entries["a"];
        assert_eq!(snapped[0].bbox, bx(0.0, 0.0, 100.0, 100.0));
        assert_eq!(snapped[1].bbox, bx(300.0, 0.0, 340.0, 40.0));
        assert_eq!(r.fp_removed_bb_replaced.entries["a"].len(), 1);
        assert_eq!(r.fp_removed_bb_replaced.entries["a"][0].bbox, bx(0.0, 0.0, 100.0, 100.0));
    }

    #[test]
    fn exact_geometry_is_a_fixed_point() {
        let (_, gt) = fixture();
        let mut pl = PseudoLabelSet::empty(View::One, 1);
        for (id, g) in &gt {
            pl.entries.insert(id.clone(), g.iter().map(|g| DetectionRecord::new(g.category.clone(), g.bbox, 0.9)).collect());
        }
        let r = audit_pseudo_labels(&pl, &gt, 0, &EvalProtocol::default()).unwrap();
        assert_eq!(r.num_fp, 0);
        assert_eq!(r.bb_replaced, pl);
        assert_eq!(r.fp_removed, pl);
        assert_eq!(r.fp_removed_bb_replaced, pl);
    }

    #[test]
    fn missing_ground_truth() {
        let (pl, mut gt) = fixture();
        gt.remove("b");
        let err = audit_pseudo_labels(&pl, &gt, 0, &EvalProtocol::default()).unwrap_err();
        assert!(err.to_string().contains("`b`"));
    }
}
