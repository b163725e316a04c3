use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::world::poisson_from_uniform;
use super::{SimParams, WorldTruth};
use crate::detector::{DetectRequest, DetectorBackend, ModelHandle, TrainRequest};
use crate::error::{Error, Result};
use crate::eval::{match_detections, DetectionMap, DetectionOutcome, EvalProtocol};
use crate::seeding::{self, hash_str};
use crate::types::{BoundingBox, Category, DetectionRecord, ImageId, View};

/// Cycle tag of the final detector trained after co-training.
pub const FINAL_CYCLE: u32 = u32::MAX;

/// What the simulated detector "learned": one skill value per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillTable {
    pub skill: BTreeMap<Category, f64>,
    pub n_eff: BTreeMap<Category, f64>,
}

/// Counts effective training boxes per category. Human and virtual boxes count fully;
/// pseudo-labels count +1 when they match a true object and -beta otherwise.
pub fn sim_train(params: &SimParams, truth: &WorldTruth, request: &TrainRequest) -> Result<SkillTable> {
    let protocol = EvalProtocol::default();
    let mut n_eff: BTreeMap<Category, f64> =
        truth.categories.iter().map(|c| (c.name.clone(), 0.0)).collect();
    for img in &request.images {
        let mut pseudo: BTreeMap<&Category, Vec<DetectionRecord>> = BTreeMap::new();
        for l in &img.labels {
            let entry = n_eff.entry(l.category.clone()).or_insert(0.0);
            if l.source.is_pseudo() {
                pseudo
                    .entry(&l.category)
                    .or_default()
                    .push(DetectionRecord::new(l.category.clone(), l.bbox, 1.0));
            } else {
                *entry += 1.0;
            }
        }
        if pseudo.is_empty() {
            continue;
        }
        let objects = truth.objects.get(&img.id).ok_or_else(|| Error::Backend {
            view: request.view,
            message: format!("image `{}` is not part of the simulated world", img.id),
        })?;
        for (cat, dets) in pseudo {
            let gt = objects
                .iter()
                .filter(|o| &o.category == cat)
                .map(|o| truth.box_in_view(&o.bbox, request.view))
                .collect::<Result<Vec<BoundingBox>>>()?;
            let objs: Vec<&super::SimObject> = objects.iter().filter(|o| &o.category == cat).collect();
            let m = match_detections(&dets, &gt, &[], protocol.iou_threshold(cat));
            let a = params.difficulty_weight;
            let gain: f64 = m
                .detections
                .iter()
                .map(|o| match o {
                    DetectionOutcome::TruePositive { gt } => 1.0 - a + 2.0 * a * objs[*gt].difficulty(request.view),
                    _ => -params.beta,
                })
                .sum();
            *n_eff.get_mut(cat).expect("inserted above") += gain;
        }
    }
    for v in n_eff.values_mut() {
        *v = v.max(0.0);
    }
    let skill = n_eff.iter().map(|(c, &n)| (c.clone(), params.skill(n))).collect();
    Ok(SkillTable { skill, n_eff })
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Simulated detections for `ids` in the frame of `view`. Every object consumes the same
/// random draws whether or not it is detected, so two models evaluated with the same
/// seed see common random numbers: a better model finds a superset of the objects.
pub fn sim_detect(
    params: &SimParams,
    skills: &SkillTable,
    truth: &WorldTruth,
    view: View,
    ids: &[ImageId],
    seed: u64,
) -> Result<DetectionMap> {
    let mut out = DetectionMap::new();
    let cats = truth.categories.clone();
    for id in ids {
        let objects = truth.objects.get(id).ok_or_else(|| Error::Backend {
            view,
            message: format!("image `{id}` is not part of the simulated world"),
        })?;
        let mut dets = Vec::new();
        let mut rng = seeding::rng(seed, &[hash_str(id)]);
        for o in objects {
            let u: f64 = rng.random();
            let conf_noise = normal(&mut rng);
            let jitter = [normal(&mut rng), normal(&mut rng), normal(&mut rng), normal(&mut rng)];
            let s = skills.skill.get(&o.category).copied().unwrap_or(params.s0);
            let p = params.detection_probability(s, o.difficulty(view));
            if u >= p {
                continue;
            }
            let b = truth.box_in_view(&o.bbox, view)?;
            let scale = params.sigma_loc * (1.0 - s) * b.height();
            let mut j = [b.x1 + scale * jitter[0], b.y1 + scale * jitter[1], b.x2 + scale * jitter[2], b.y2 + scale * jitter[3]];
            j[0] = j[0].clamp(0.0, truth.image_width - 1.0);
            j[1] = j[1].clamp(0.0, truth.image_height - 1.0);
            j[2] = j[2].clamp(j[0] + 1.0, truth.image_width);
            j[3] = j[3].clamp(j[1] + 1.0, truth.image_height);
            let bbox = BoundingBox { x1: j[0], y1: j[1], x2: j[2], y2: j[3] };
            let confidence = (p + params.sigma_conf * conf_noise).clamp(0.0, 1.0);
            dets.push(DetectionRecord { category: o.category.clone(), bbox, confidence });
        }
        for spec in &cats {
            let mut rng = seeding::rng(seed, &[hash_str(id), hash_str("spurious"), hash_str(spec.name.as_str())]);
            let s = skills.skill.get(&spec.name).copied().unwrap_or(params.s0);
            let count = poisson_from_uniform(params.mu_fp * (1.0 - s), rng.random());
            for _ in 0..count {
                let bbox = super::world::random_box(&mut rng, spec, truth.image_width, truth.image_height);
                let confidence = params.fp_conf_low + (params.fp_conf_high - params.fp_conf_low) * rng.random::<f64>();
                dets.push(DetectionRecord { category: spec.name.clone(), bbox, confidence });
            }
        }
        out.insert(id.clone(), dets);
    }
    Ok(out)
}

/// In-process backend over a simulated world. Models are serialized skill tables.
/// Detection noise is a property of the image and view, so it does not change between
/// cycles; only the skill does.
#[derive(Debug, Clone)]
pub struct SimBackend {
    pub params: SimParams,
    pub truth: Arc<WorldTruth>,
    pub seed: u64,
}

impl SimBackend {
    pub fn new(params: SimParams, truth: Arc<WorldTruth>, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(SimBackend { params, truth, seed })
    }

    pub fn skills(&self, model: &ModelHandle) -> Result<SkillTable> {
        serde_json::from_str(&model.token).map_err(|e| Error::Backend {
            view: model.view,
            message: format!("model token is not a skill table: {e}"),
        })
    }
}

impl DetectorBackend for SimBackend {
    fn train(&self, request: &TrainRequest, _model_dir: Option<&Path>) -> Result<ModelHandle> {
        let table = sim_train(&self.params, &self.truth, request)?;
        Ok(ModelHandle {
            token: serde_json::to_string(&table).expect("skill table serializes"),
            path: None,
            view: request.view,
            cycle: request.cycle,
        })
    }

    fn detect(&self, model: &ModelHandle, request: &DetectRequest) -> Result<DetectionMap> {
        let skills = self.skills(model)?;
        let ids: Vec<ImageId> = request.images.iter().map(|i| i.id.clone()).collect();
        let seed = seeding::derive(self.seed, &[hash_str("detect"), model.view.index() as u64]);
        sim_detect(&self.params, &skills, &self.truth, request.view, &ids, seed)
    }
}
