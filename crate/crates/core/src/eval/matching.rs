use std::cmp::Ordering;

use crate::types::{BoundingBox, DetectionRecord};

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Ground truth split by the minimum-height rule.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DifficultySplit {
    pub evaluated: Vec<BoundingBox>,
    pub ignored: Vec<BoundingBox>,
}

/// Boxes at least `min_height` tall are evaluated; shorter ones become don't-care regions.
pub fn filter_difficulty<'a, I>(gt: I, min_height: f64) -> DifficultySplit
where
    I: IntoIterator<Item = &'a BoundingBox>,
{
    let mut split = DifficultySplit::default();
    for b in gt {
        if b.height() >= min_height {
            split.evaluated.push(*b);
        } else {
            split.ignored.push(*b);
        }
    }
    split
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionOutcome {
    TruePositive { gt: usize },
    FalsePositive,
    Ignored,
}

impl DetectionOutcome {
    pub fn is_tp(self) -> bool {
        matches!(self, DetectionOutcome::TruePositive { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Outcome per detection, in input order.
    pub detections: Vec<DetectionOutcome>,
    /// Matching detection index per evaluated ground-truth box; `None` means missed.
    pub gt_matches: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn num_tp(&self) -> usize {
        self.detections.iter().filter(|o| o.is_tp()).count()
    }

    pub fn num_fp(&self) -> usize {
        self.detections
            .iter()
            .filter(|o| **o == DetectionOutcome::FalsePositive)
            .count()
    }

    pub fn num_missed(&self) -> usize {
        self.gt_matches.iter().filter(|m| m.is_none()).count()
    }
}

/// Indices of `dets` by decreasing confidence; equal confidences keep input order.
pub(crate) fn confidence_order(dets: &[DetectionRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy confidence-ordered matching for one image and one category.
///
/// Each detection claims the unmatched evaluated box with the highest IoU at or above
/// `iou_threshold`. Failing that, overlapping a don't-care box makes it ignored; any
/// other detection is a false positive.
pub fn match_detections(
    dets: &[DetectionRecord],
    gt_evaluated: &[BoundingBox],
    gt_ignored: &[BoundingBox],
    iou_threshold: f64,
) -> MatchResult {
    let mut detections = vec![DetectionOutcome::FalsePositive; dets.len()];
    let mut gt_matches = vec![None; gt_evaluated.len()];
    for i in confidence_order(dets) {
        let d = &dets[i].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gt_evaluated.iter().enumerate() {
            if gt_matches[g].is_some() {
                continue;
            }
            let o = iou(d, gt);
            if o >= iou_threshold
                && best.is_none_or(|(_, b)| o.partial_cmp(&b) == Some(Ordering::Greater))
            {
                best = Some((g, o));
            }
        }
        detections[i] = match best {
            Some((g, _)) => {
                gt_matches[g] = Some(i);
                DetectionOutcome::TruePositive { gt: g }
            }
            None if gt_ignored.iter().any(|gt| iou(d, gt) >= iou_threshold) => {
                DetectionOutcome::Ignored
            }
            None => DetectionOutcome::FalsePositive,
        };
    }
    MatchResult {
        detections,
        gt_matches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det(b: BoundingBox, c: f64) -> DetectionRecord {
        DetectionRecord::new("vehicle", b, c)
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert!((iou(&a, &bx(5.0, 0.0, 15.0, 10.0)) - 50.0 / 150.0).abs() < 1e-12);
        // touching edges do not overlap
        assert_eq!(iou(&a, &bx(10.0, 0.0, 20.0, 10.0)), 0.0);
    }

    #[test]
    fn difficulty_examples() {
        let boxes: Vec<_> = [24.9, 25.0, 60.0].iter().map(|&h| bx(0.0, 0.0, 5.0, h)).collect();
        let s = filter_difficulty(&boxes, 25.0);
        let heights = |v: &[BoundingBox]| v.iter().map(|b| b.height()).collect::<Vec<_>>();
        assert_eq!(heights(&s.evaluated), vec![25.0, 60.0]);
        assert_eq!(heights(&s.ignored), vec![24.9]);
        assert_eq!(filter_difficulty(&boxes, 0.0).evaluated.len(), 3);
        let small: Vec<_> = [30.0, 49.9].iter().map(|&h| bx(0.0, 0.0, 5.0, h)).collect();
        assert_eq!(filter_difficulty(&small, 50.0).ignored.len(), 2);
    }

    #[test]
    fn single_match() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        // 10x8 inside 10x10: IoU 0.8
        let r = match_detections(&[det(bx(0.0, 0.0, 10.0, 8.0), 0.9)], &[gt], &[], 0.7);
        assert_eq!(r.detections, vec![DetectionOutcome::TruePositive { gt: 0 }]);
    }

    #[test]
    fn two_detections_one_box() {
        // exhaustive over both confidence orders: the more confident detection wins
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        for (ca, cb) in [(0.9, 0.6), (0.6, 0.9)] {
            let dets = [det(bx(0.0, 0.0, 10.0, 9.0), ca), det(bx(0.0, 0.0, 9.0, 10.0), cb)];
            let r = match_detections(&dets, &[gt], &[], 0.7);
            let winner = if ca > cb { 0 } else { 1 };
            assert_eq!(r.detections[winner], DetectionOutcome::TruePositive { gt: 0 });
            assert_eq!(r.detections[1 - winner], DetectionOutcome::FalsePositive);
            assert_eq!(r.gt_matches, vec![Some(winner)]);
        }
    }

    #[test]
    fn dont_care_absorbs_detection() {
        let small = bx(0.0, 0.0, 10.0, 10.0);
        let r = match_detections(&[det(small, 0.9)], &[], &[small], 0.5);
        assert_eq!(r.detections, vec![DetectionOutcome::Ignored]);
        assert_eq!(r.num_fp(), 0);
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0f64..40.0, 0.0f64..40.0, 1.0f64..20.0, 1.0f64..20.0)
            .prop_map(|(x, y, w, h)| bx(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_properties(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn greedy_matching_is_one_to_one(
            dets in prop::collection::vec((arb_box(), 0.0f64..1.0), 0..8),
            gts in prop::collection::vec(arb_box(), 0..8),
            thr in 0.1f64..0.9,
        ) {
            let dets: Vec<_> = dets.into_iter().map(|(b, c)| det(b, c)).collect();
            let r = match_detections(&dets, &gts, &[], thr);
            prop_assert!(r.num_tp() <= dets.len().min(gts.len()));
            let mut claimed = vec![false; gts.len()];
            for o in &r.detections {
                if let DetectionOutcome::TruePositive { gt } = o {
                    prop_assert!(!claimed[*gt]);
                    claimed[*gt] = true;
                }
            }
            prop_assert_eq!(r.num_tp() + r.num_missed(), gts.len());
        }
    }
}
