//! Statistical stand-in for a trained detector, driven by a simulated world whose
//! objects have a hidden difficulty per view.

mod backend;
mod world;

pub use backend::{sim_detect, sim_train, SimBackend, SkillTable, FINAL_CYCLE};
pub use world::{
    generate_world, split_labeled, CategorySpec, SequenceSpec, SimObject, World, WorldConfig,
    WorldTruth,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Skill with no training data.
    pub s0: f64,
    pub s_max: f64,
    /// Rate at which effective training boxes raise skill.
    pub lambda: f64,
    /// Steepness of the detection probability in skill minus difficulty.
    pub gain: f64,
    /// Weight of a false-positive pseudo-label against a true one.
    pub beta: f64,
    /// How much a true pseudo-label's weight depends on the object's difficulty in the
    /// training view: weight = 1 - a + 2 a d. At 0 every true box counts once.
    pub difficulty_weight: f64,
    pub sigma_conf: f64,
    /// Corner jitter as a fraction of box height, scaled by (1 - skill).
    pub sigma_loc: f64,
    /// Mean spurious boxes per image and category at zero skill.
    pub mu_fp: f64,
    pub fp_conf_low: f64,
    pub fp_conf_high: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            s0: 0.3,
            s_max: 0.95,
            lambda: 0.008,
            gain: 12.0,
            beta: 0.5,
            difficulty_weight: 1.0,
            sigma_conf: 0.1,
            sigma_loc: 0.05,
            mu_fp: 0.2,
            fp_conf_low: 0.5,
            fp_conf_high: 0.95,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.s0)
            && (self.s0..=1.0).contains(&self.s_max)
            && self.lambda >= 0.0
            && self.gain > 0.0
            && self.beta >= 0.0
            && (0.0..=1.0).contains(&self.difficulty_weight)
            && self.sigma_conf >= 0.0
            && self.sigma_loc >= 0.0
            && self.mu_fp >= 0.0
            && (0.0..=1.0).contains(&self.fp_conf_low)
            && (self.fp_conf_low..=1.0).contains(&self.fp_conf_high);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid simulator parameters: {self:?}")))
        }
    }

    /// Skill reached with `n_eff` effective training boxes.
    pub fn skill(&self, n_eff: f64) -> f64 {
        self.s0 + (self.s_max - self.s0) * -(-self.lambda * n_eff.max(0.0)).exp_m1()
    }

    /// Probability that a model with skill `s` finds an object of difficulty `d`.
    pub fn detection_probability(&self, s: f64, d: f64) -> f64 {
        1.0 / (1.0 + (-self.gain * (s - d)).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skill_limits() {
        let p = SimParams::default();
        assert_eq!(p.skill(0.0), p.s0);
        assert_eq!(p.skill(-5.0), p.s0);
        assert!((p.skill(1e9) - p.s_max).abs() < 1e-12);
        assert!(p.skill(100.0) < p.skill(200.0));
    }

    #[test]
    fn detection_probability_is_monotone() {
        let p = SimParams::default();
        assert!((p.detection_probability(0.5, 0.5) - 0.5).abs() < 1e-12);
        assert!(p.detection_probability(0.9, 0.5) > p.detection_probability(0.6, 0.5));
        assert!(p.detection_probability(0.6, 0.2) > p.detection_probability(0.6, 0.5));
    }
}
