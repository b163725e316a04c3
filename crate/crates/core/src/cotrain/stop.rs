use serde::{Deserialize, Serialize};

use crate::config::StopConfig;
use crate::eval::{stop_metric_map, EvalProtocol};
use crate::labels::PseudoLabelSet;

/// Running state of the stop rule: the previous metric and how many consecutive
/// cycles changed it by less than the threshold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StopTracker {
    pub prev_metric: Option<f64>,
    pub stable_count: u32,
}

impl StopTracker {
    /// Records the metric of cycle `k` and decides whether to stop after it.
    pub fn observe(&mut self, cfg: &StopConfig, k: u32, metric: f64) -> bool {
        let stable = self
            .prev_metric
            .is_some_and(|p| (metric - p).abs() < cfg.t_delta_map);
        self.stable_count = if stable { self.stable_count + 1 } else { 0 };
        self.prev_metric = Some(metric);
        k >= cfg.k_max || (k >= cfg.k_min && self.stable_count >= cfg.delta_k)
    }
}

/// Compares the fresh view-1 pseudo-labels before and after cycle `k` and updates
/// `tracker`. Returns the metric and the decision.
pub fn should_stop(
    old: &PseudoLabelSet,
    new: &PseudoLabelSet,
    k: u32,
    tracker: &mut StopTracker,
    cfg: &StopConfig,
    protocol: &EvalProtocol,
) -> (f64, bool) {
    let metric = stop_metric_map(old, new, protocol);
    (metric, tracker.observe(cfg, k, metric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn first_stop(cfg: &StopConfig, metrics: &[f64]) -> Option<u32> {
        let mut t = StopTracker::default();
        metrics
            .iter()
            .enumerate()
            .find(|(i, &m)| t.observe(cfg, *i as u32 + 1, m))
            .map(|(i, _)| i as u32 + 1)
    }

    #[test]
    fn constant_metric_stops_at_k_min() {
        let cfg = StopConfig::default();
        assert_eq!(first_stop(&cfg, &[50.0; 40]), Some(20));
    }

    #[test]
    fn oscillating_metric_stops_at_k_max() {
        let cfg = StopConfig::default();
        let m: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 10.0 } else { 90.0 }).collect();
        assert_eq!(first_stop(&cfg, &m), Some(30));
    }

    #[test]
    fn instability_resets_the_counter() {
        let cfg = StopConfig { k_min: 3, k_max: 30, delta_k: 3, t_delta_map: 2.0 };
        let mut m = vec![50.0; 4];
        m.push(80.0);
        m.extend([80.0; 10]);
        // stable at 2,3,4; reset at 5; stable again 6,7,8
        assert_eq!(first_stop(&cfg, &m), Some(4));
        let m2 = [50.0, 50.0, 90.0, 90.0, 90.0, 90.0, 90.0];
        assert_eq!(first_stop(&cfg, &m2), Some(6));
    }

    #[test]
    fn exact_threshold_is_not_stable() {
        let cfg = StopConfig { k_min: 1, k_max: 10, delta_k: 1, t_delta_map: 2.0 };
        assert_eq!(first_stop(&cfg, &[10.0, 12.0, 14.0, 15.0]), Some(4));
    }

    proptest! {
        #[test]
        fn stop_bounds(k_min in 1u32..15, span in 0u32..15, dk_frac in 0.0f64..=1.0,
                       t in 0.0f64..10.0, metrics in prop::collection::vec(0.0f64..100.0, 40)) {
            let k_max = k_min + span;
            let delta_k = (dk_frac * k_min as f64) as u32;
            let cfg = StopConfig { k_min, k_max, delta_k, t_delta_map: t };
            let k = first_stop(&cfg, &metrics).unwrap();
            prop_assert!(k <= k_max);
            prop_assert!(k >= k_min || k == k_max);
            if k < k_max {
                // the last delta_k changes were all below the threshold
                for i in (k - delta_k)..k {
                    let (a, b) = (metrics[i as usize - 1], metrics[i as usize]);
                    prop_assert!((b - a).abs() < t, "i={}", i);
                }
            }
        }
    }
}
