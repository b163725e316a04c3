use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Limit, SeqConfig};
use crate::dataset::ViewPairedDataset;
use crate::detector::{self, DetectorBackend, ModelHandle};
use crate::error::Result;
use crate::labels::{image_confidence, PseudoLabelSet, Thresholds};
use crate::types::ImageId;

/// Frames already sent by one view, per sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SelectionHistory(pub BTreeMap<String, BTreeSet<i64>>);

impl SelectionHistory {
    fn far_from_all(&self, seq: &str, frame: i64, min_gap: i64) -> bool {
        min_gap <= 0
            || self
                .0
                .get(seq)
                .is_none_or(|fs| fs.range(frame - min_gap + 1..frame + min_gap).next().is_none())
    }
}

/// Ids of `fresh` that satisfy the frame-distance constraints, in id order.
///
/// Within each sequence frames are scanned in order; a frame is kept when it lies at least
/// `delta_t1` after the last kept frame and at least `delta_t2` away from every frame in
/// `history`. Images outside sequences are always eligible.
pub fn eligible_ids(
    fresh: &PseudoLabelSet,
    data: &ViewPairedDataset,
    seq: &SeqConfig,
    history: &SelectionHistory,
) -> Vec<ImageId> {
    let mut free = Vec::new();
    let mut by_seq: BTreeMap<&str, Vec<(i64, &ImageId)>> = BTreeMap::new();
    for id in fresh.entries.keys() {
        match data.image(id).and_then(|img| img.frame()) {
            Some((s, f)) => by_seq.entry(s).or_default().push((f, id)),
            None => free.push(id.clone()),
        }
    }
    for (s, mut frames) in by_seq {
        frames.sort();
        let mut last: Option<i64> = None;
        for (f, id) in frames {
            let spaced = last.is_none_or(|l| f - l >= seq.delta_t1);
            if spaced && history.far_from_all(s, f, seq.delta_t2) {
                last = Some(f);
                free.push(id.clone());
            }
        }
    }
    free.sort();
    free
}

/// Draws up to `n` images of `fresh` uniformly without replacement, after applying the
/// frame-distance constraints when `seq` is set. Frames drawn are added to `history`.
pub fn rand_select<R: Rng + ?Sized>(
    fresh: &PseudoLabelSet,
    n: usize,
    data: &ViewPairedDataset,
    seq: Option<&SeqConfig>,
    history: &mut SelectionHistory,
    rng: &mut R,
) -> PseudoLabelSet {
    let pool: Vec<ImageId> = match seq {
        Some(s) => eligible_ids(fresh, data, s, history),
        None => fresh.entries.keys().cloned().collect(),
    };
    let chosen: Vec<&ImageId> = if pool.len() <= n {
        pool.iter().collect()
    } else {
        let mut idx = sample(rng, pool.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| &pool[i]).collect()
    };
    if seq.is_some() {
        for id in &chosen {
            if let Some((s, f)) = data.image(id).and_then(|img| img.frame()) {
                history.0.entry(s.to_string()).or_default().insert(f);
            }
        }
    }
    fresh.restrict(chosen)
}

/// The `m` images with the highest image confidence; ties go to the smaller id.
pub fn select_top_m(set: &PseudoLabelSet, m: Limit) -> PseudoLabelSet {
    let keep = m.min_with(set.len());
    if keep == set.len() {
        return set.clone();
    }
    let mut scored: Vec<(f64, &ImageId)> = set
        .entries
        .iter()
        .map(|(id, d)| (image_confidence(d), id))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    set.restrict(scored.into_iter().take(keep).map(|(_, id)| id))
}

/// The receiver's opinion of images shared by the other view.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossScores {
    /// Receiver image confidence per shared image (0 when it finds nothing).
    pub scores: BTreeMap<ImageId, f64>,
    /// Receiver's own thresholded detections on the shared images.
    pub detections: PseudoLabelSet,
}

/// Runs the receiver model on the images of `shared`.
pub fn cross_score<B: DetectorBackend + ?Sized>(
    backend: &B,
    receiver: &ModelHandle,
    data: &ViewPairedDataset,
    shared: &PseudoLabelSet,
    thresholds: &Thresholds,
) -> Result<CrossScores> {
    let ids: Vec<ImageId> = shared.entries.keys().cloned().collect();
    let detections = detector::detect(backend, receiver, data, &ids, thresholds)?;
    let scores = ids
        .into_iter()
        .map(|id| {
            let s = detections.get(&id).map_or(0.0, |d| image_confidence(d));
            (id, s)
        })
        .collect();
    Ok(CrossScores { scores, detections })
}

/// The `n` ids with the lowest score, ties broken by id.
pub fn select_bottom_n(scores: &BTreeMap<ImageId, f64>, n: usize) -> Vec<ImageId> {
    let mut v: Vec<(f64, &ImageId)> = scores.iter().map(|(id, &s)| (s, id)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    v.into_iter().take(n).map(|(_, id)| id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ImageRecord;
    use crate::transform::ViewTransform;
    use crate::types::{BoundingBox, DetectionRecord, View};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn det(c: f64) -> DetectionRecord {
        DetectionRecord::new("vehicle", BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), c)
    }

    fn set_of(confs: &[f64]) -> PseudoLabelSet {
        PseudoLabelSet {
            producing_view: View::One,
            cycle: 0,
            entries: confs
                .iter()
                .enumerate()
                .map(|(i, &c)| (format!("img{i:03}"), vec![det(c)]))
                .collect(),
        }
    }

    fn seq_data(seqs: usize, len: usize) -> ViewPairedDataset {
        let mut images = Vec::new();
        for s in 0..seqs {
            for f in 0..len {
                let mut r = ImageRecord::new(format!("s{s}_f{f:03}"), 100, 100);
                r.sequence_id = Some(format!("s{s}"));
                r.frame_index = Some(f as i64);
                images.push(r);
            }
        }
        images.push(ImageRecord::new("loose", 100, 100));
        ViewPairedDataset::new(images, BTreeMap::new(), ViewTransform::IDENTITY).unwrap()
    }

    fn all_fresh(data: &ViewPairedDataset) -> PseudoLabelSet {
        PseudoLabelSet {
            producing_view: View::One,
            cycle: 0,
            entries: data.images().iter().map(|i| (i.id.clone(), vec![det(0.9)])).collect(),
        }
    }

    #[test]
    fn top_m_orders_by_confidence_then_id() {
        let s = set_of(&[0.5, 0.9, 0.9, 0.1]);
        let top = select_top_m(&s, Limit::Finite(2));
        assert_eq!(top.ids().into_iter().collect::<Vec<_>>(), ["img001", "img002"]);
        let top = select_top_m(&set_of(&[0.5, 0.9, 0.7, 0.9]), Limit::Finite(1));
        assert_eq!(top.ids().into_iter().collect::<Vec<_>>(), ["img001"]);
        assert_eq!(select_top_m(&s, Limit::Infinite), s);
    }

    #[test]
    fn bottom_n_orders_by_score_then_id() {
        let scores: BTreeMap<ImageId, f64> =
            [("b", 0.2), ("a", 0.2), ("c", 0.0), ("d", 0.9)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        assert_eq!(select_bottom_n(&scores, 3), ["c", "a", "b"]);
        assert_eq!(select_bottom_n(&scores, 10).len(), 4);
    }

    #[test]
    fn frame_constraints() {
        let data = seq_data(1, 30);
        let fresh = all_fresh(&data);
        let cfg = SeqConfig { delta_t1: 5, delta_t2: 10 };
        let mut hist = SelectionHistory::default();
        let ids = eligible_ids(&fresh, &data, &cfg, &hist);
        assert_eq!(ids, ["loose", "s0_f000", "s0_f005", "s0_f010", "s0_f015", "s0_f020", "s0_f025"]);
        hist.0.insert("s0".into(), [12].into_iter().collect());
        let ids = eligible_ids(&fresh, &data, &cfg, &hist);
        assert_eq!(ids, ["loose", "s0_f000", "s0_f022", "s0_f027"]);
    }

    proptest! {
        #[test]
        fn rand_select_respects_constraints(seed in any::<u64>(), n in 0usize..40, cycles in 1usize..5,
                                            t1 in 0i64..8, t2 in 0i64..12) {
            let data = seq_data(3, 25);
            let fresh = all_fresh(&data);
            let cfg = SeqConfig { delta_t1: t1, delta_t2: t2 };
            let mut hist = SelectionHistory::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..cycles {
                let before = hist.clone();
                let pick = rand_select(&fresh, n, &data, Some(&cfg), &mut hist, &mut rng);
                prop_assert!(pick.len() <= n);
                prop_assert!(pick.ids().is_subset(&fresh.ids()));
                let mut frames: BTreeMap<&str, Vec<i64>> = BTreeMap::new();
                for id in pick.entries.keys() {
                    if let Some((s, f)) = data.image(id).unwrap().frame() {
                        frames.entry(s).or_default().push(f);
                        if let Some(old) = before.0.get(s) {
                            prop_assert!(old.iter().all(|&h| (h - f).abs() >= t2));
                        }
                    }
                }
                for fs in frames.values() {
                    for w in fs.windows(2) {
                        prop_assert!(w[1] - w[0] >= t1.max(1));
                    }
                }
            }
        }

        #[test]
        fn rand_select_size_without_sequences(seed in any::<u64>(), k in 0usize..30, n in 0usize..40) {
            let s = set_of(&vec![0.9; k]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pick = rand_select(&s, n, &seq_data(0, 0), None, &mut SelectionHistory::default(), &mut rng);
            prop_assert_eq!(pick.len(), n.min(k));
            prop_assert!(pick.ids().is_subset(&s.ids()));
        }

        #[test]
        fn top_m_is_the_confident_prefix(confs in prop::collection::vec(0.0f64..1.0, 0..30), m in 1usize..40) {
            let s = set_of(&confs);
            let top = select_top_m(&s, Limit::Finite(m));
            prop_assert_eq!(top.len(), m.min(s.len()));
            let min_kept = top.image_confidences().values().cloned().fold(f64::INFINITY, f64::min);
            for (id, c) in s.image_confidences() {
                if !top.entries.contains_key(&id) {
                    prop_assert!(c <= min_kept);
                }
            }
        }
    }
}
