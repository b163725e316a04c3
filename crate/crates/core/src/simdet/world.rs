use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{ImageRecord, ViewPairedDataset, ViewRefs};
use crate::error::{Error, Result};
use crate::eval::{GroundTruthMap, GtBox};
use crate::seeding::{self, hash_str};
use crate::transform::ViewTransform;
use crate::types::{BoundingBox, Category, ImageId, LabelRecord, LabelSource, View};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: Category,
    /// Relative frequency among generated objects.
    pub weight: f64,
    /// Median box height in pixels; heights are log-normal.
    pub median_height: f64,
    pub log_height_sd: f64,
    /// Width / height ratio.
    pub aspect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub num_sequences: usize,
    pub length: usize,
    /// Standard deviation of per-object horizontal drift, in pixels per frame.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Training images. Ignored when `sequences` is set (sequences x length instead).
    pub num_images: usize,
    pub num_test_images: usize,
    pub image_width: f64,
    pub image_height: f64,
    /// Mean objects per image; every image has at least one.
    pub mean_objects: f64,
    pub categories: Vec<CategorySpec>,
    /// Correlation of the two views' latent difficulties.
    pub rho: f64,
    /// Added to the view-2 latent difficulty.
    pub view2_difficulty_offset: f64,
    pub view2_transform: ViewTransform,
    pub sequences: Option<SequenceSpec>,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            num_images: 200,
            num_test_images: 200,
            image_width: 1240.0,
            image_height: 375.0,
            mean_objects: 3.0,
            categories: vec![
                CategorySpec {
                    name: Category::vehicle(),
                    weight: 0.7,
                    median_height: 55.0,
                    log_height_sd: 0.5,
                    aspect: 1.6,
                },
                CategorySpec {
                    name: Category::pedestrian(),
                    weight: 0.3,
                    median_height: 65.0,
                    log_height_sd: 0.4,
                    aspect: 0.4,
                },
            ],
            rho: 0.2,
            view2_difficulty_offset: 0.0,
            view2_transform: ViewTransform::IDENTITY,
            sequences: None,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [-1,1], got {}", self.rho)));
        }
        if self.categories.is_empty() || self.categories.iter().any(|c| !(c.weight > 0.0)) {
            return Err(Error::Config("world needs categories with positive weights".into()));
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return Err(Error::Config("image size must be positive".into()));
        }
        if !(self.mean_objects >= 1.0) {
            return Err(Error::Config("mean_objects must be at least 1".into()));
        }
        if let Some(s) = &self.sequences {
            if s.length == 0 || s.num_sequences == 0 {
                return Err(Error::Config("sequence count and length must be at least 1".into()));
            }
        }
        self.view2_transform.validate()
    }
}

/// A ground-truth object with its per-view difficulty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub category: Category,
    /// View-1 frame.
    pub bbox: BoundingBox,
    /// Correlated standard-normal latents; difficulty is their logistic image.
    pub latent: [f64; 2],
    pub difficulty: [f64; 2],
}

impl SimObject {
    pub fn difficulty(&self, view: View) -> f64 {
        self.difficulty[(view.index() - 1) as usize]
    }
}

/// Hidden truth of a simulated world. Only evaluation, audits and the simulated
/// backend read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldTruth {
    pub version: u32,
    pub image_width: f64,
    pub image_height: f64,
    pub view2_transform: ViewTransform,
    pub categories: Vec<CategorySpec>,
    pub objects: BTreeMap<ImageId, Vec<SimObject>>,
    pub test_images: Vec<ImageRecord>,
}

impl WorldTruth {
    /// Ground-truth boxes of the given images in the view-1 frame.
    pub fn ground_truth<'a, I>(&self, ids: I) -> GroundTruthMap
    where
        I: IntoIterator<Item = &'a ImageId>,
    {
        ids.into_iter()
            .filter_map(|id| {
                self.objects.get(id).map(|objs| {
                    let boxes = objs
                        .iter()
                        .map(|o| GtBox {
                            category: o.category.clone(),
                            bbox: o.bbox,
                        })
                        .collect();
                    (id.clone(), boxes)
                })
            })
            .collect()
    }

    pub fn test_ids(&self) -> Vec<ImageId> {
        self.test_images.iter().map(|i| i.id.clone()).collect()
    }

    pub fn category_names(&self) -> Vec<Category> {
        self.categories.iter().map(|c| c.name.clone()).collect()
    }

    /// An object's box in the frame of `view`.
    pub fn box_in_view(&self, b: &BoundingBox, view: View) -> Result<BoundingBox> {
        match view {
            View::One => Ok(*b),
            View::Two => self.view2_transform.apply(b),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Protocol(e.to_string()))?;
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    /// Every training image with its full ground truth as human labels.
    pub dataset: ViewPairedDataset,
    pub truth: WorldTruth,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn pick_category<'a, R: Rng>(rng: &mut R, cats: &'a [CategorySpec]) -> &'a CategorySpec {
    let total: f64 = cats.iter().map(|c| c.weight).sum();
    let mut u = rng.random::<f64>() * total;
    for c in cats {
        if u < c.weight {
            return c;
        }
        u -= c.weight;
    }
    cats.last().expect("non-empty")
}

/// Poisson draw by CDF inversion of a single uniform.
pub(crate) fn poisson_from_uniform(mean: f64, u: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let mut k = 0usize;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u > cdf && k < 1000 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}

pub(crate) fn random_box<R: Rng>(rng: &mut R, spec: &CategorySpec, w_img: f64, h_img: f64) -> BoundingBox {
    let z: f64 = rng.sample(StandardNormal);
    let za: f64 = rng.sample(StandardNormal);
    let h = (spec.median_height.ln() + spec.log_height_sd * z)
        .exp()
        .clamp(8.0, h_img - 1.0);
    let w = (h * spec.aspect * (0.1 * za).exp()).clamp(4.0, w_img - 1.0);
    let x1 = rng.random::<f64>() * (w_img - w);
    let y1 = rng.random::<f64>() * (h_img - h);
    BoundingBox {
        x1,
        y1,
        x2: x1 + w,
        y2: y1 + h,
    }
}

fn draw_object<R: Rng>(rng: &mut R, cfg: &WorldConfig) -> SimObject {
    let spec = pick_category(rng, &cfg.categories);
    let bbox = random_box(rng, spec, cfg.image_width, cfg.image_height);
    let z1: f64 = rng.sample(StandardNormal);
    let e: f64 = rng.sample(StandardNormal);
    let z2 = cfg.rho * z1 + (1.0 - cfg.rho * cfg.rho).max(0.0).sqrt() * e + cfg.view2_difficulty_offset;
    SimObject {
        category: spec.name.clone(),
        bbox,
        latent: [z1, z2],
        difficulty: [logistic(z1), logistic(z2)],
    }
}

fn draw_image<R: Rng>(rng: &mut R, cfg: &WorldConfig) -> Vec<SimObject> {
    let n = 1 + poisson_from_uniform(cfg.mean_objects - 1.0, rng.random());
    (0..n).map(|_| draw_object(rng, cfg)).collect()
}

fn image_record(id: &str, cfg: &WorldConfig) -> ImageRecord {
    ImageRecord {
        id: id.to_string(),
        width: cfg.image_width.round() as u32,
        height: cfg.image_height.round() as u32,
        sequence_id: None,
        frame_index: None,
        views: ViewRefs {
            v1: format!("sim://{id}/v1"),
            v2: Some(format!("sim://{id}/v2")),
        },
    }
}

/// Generates a world deterministically from `cfg.seed`. Each image draws from its own
/// derived stream.
pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let mut images = Vec::new();
    let mut objects = BTreeMap::new();
    match &cfg.sequences {
        None => {
            for i in 0..cfg.num_images {
                let id = format!("img_{i:06}");
                let mut rng = seeding::rng(cfg.seed, &[hash_str("train"), i as u64]);
                objects.insert(id.clone(), draw_image(&mut rng, cfg));
                images.push(image_record(&id, cfg));
            }
        }
        Some(seq) => {
            for s in 0..seq.num_sequences {
                let mut rng = seeding::rng(cfg.seed, &[hash_str("sequence"), s as u64]);
                let base = draw_image(&mut rng, cfg);
                let drift: Vec<f64> = base
                    .iter()
                    .map(|_| seq.jitter * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                for f in 0..seq.length {
                    let id = format!("seq_{s:03}_{f:05}");
                    let mut frame_objs = Vec::new();
                    for (o, dx) in base.iter().zip(&drift) {
                        let shift = dx * f as f64;
                        let x1 = (o.bbox.x1 + shift).max(0.0);
                        let x2 = (o.bbox.x2 + shift).min(cfg.image_width);
                        if x2 - x1 >= 2.0 {
                            frame_objs.push(SimObject {
                                bbox: BoundingBox { x1, x2, ..o.bbox },
                                ..o.clone()
                            });
                        }
                    }
                    objects.insert(id.clone(), frame_objs);
                    let mut rec = image_record(&id, cfg);
                    rec.sequence_id = Some(format!("seq_{s:03}"));
                    rec.frame_index = Some(f as i64);
                    images.push(rec);
                }
            }
        }
    }
    let mut test_images = Vec::new();
    for i in 0..cfg.num_test_images {
        let id = format!("test_{i:06}");
        let mut rng = seeding::rng(cfg.seed, &[hash_str("test"), i as u64]);
        objects.insert(id.clone(), draw_image(&mut rng, cfg));
        test_images.push(image_record(&id, cfg));
    }
    let labels = images
        .iter()
        .map(|img| {
            let recs = objects[&img.id]
                .iter()
                .map(|o: &SimObject| LabelRecord {
                    category: o.category.clone(),
                    bbox: o.bbox,
                    source: LabelSource::Human,
                })
                .collect();
            (img.id.clone(), recs)
        })
        .collect();
    let dataset = ViewPairedDataset::new(images, labels, cfg.view2_transform)?;
    Ok(World {
        dataset,
        truth: WorldTruth {
            version: 1,
            image_width: cfg.image_width,
            image_height: cfg.image_height,
            view2_transform: cfg.view2_transform,
            categories: cfg.categories.clone(),
            objects,
            test_images,
        },
    })
}

/// Keeps human labels on a random `percent`% of the images (rounded, at least one) and
/// moves the rest to the unlabeled split. The choice is frozen by `seed`.
pub fn split_labeled(full: &ViewPairedDataset, percent: f64, seed: u64) -> Result<ViewPairedDataset> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::Config(format!("labeled percentage must lie in (0,100], got {percent}")));
    }
    let mut ids: Vec<&ImageId> = full.images().iter().map(|i| &i.id).collect();
    ids.sort();
    let count = ((percent / 100.0 * ids.len() as f64).round() as usize).clamp(1, ids.len().max(1));
    let mut rng = seeding::rng(seed, &[hash_str("split")]);
    ids.shuffle(&mut rng);
    let labels = ids
        .into_iter()
        .take(count)
        .map(|id| (id.clone(), full.labels().get(id).cloned().unwrap_or_default()))
        .collect();
    ViewPairedDataset::new(full.images().to_vec(), labels, *full.view2_transform())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_worlds_are_identical() {
        let cfg = WorldConfig { num_images: 20, num_test_images: 5, ..WorldConfig::default() };
        assert_eq!(generate_world(&cfg).unwrap(), generate_world(&cfg).unwrap());
        let other = WorldConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_world(&cfg).unwrap().truth, generate_world(&other).unwrap().truth);
    }

    #[test]
    fn perfect_correlation_duplicates_difficulty() {
        let cfg = WorldConfig { rho: 1.0, num_images: 50, ..WorldConfig::default() };
        let w = generate_world(&cfg).unwrap();
        for o in w.truth.objects.values().flatten() {
            assert_eq!(o.difficulty[0], o.difficulty[1]);
        }
    }

    #[test]
    fn uncorrelated_latents() {
        let cfg = WorldConfig { rho: 0.0, num_images: 3400, num_test_images: 0, ..WorldConfig::default() };
        let w = generate_world(&cfg).unwrap();
        let lat: Vec<[f64; 2]> = w.truth.objects.values().flatten().map(|o| o.latent).collect();
        assert!(lat.len() >= 10_000, "{}", lat.len());
        let n = lat.len() as f64;
        let (ma, mb) = lat.iter().fold((0.0, 0.0), |(a, b), l| (a + l[0] / n, b + l[1] / n));
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for l in &lat {
            sab += (l[0] - ma) * (l[1] - mb);
            saa += (l[0] - ma).powi(2);
            sbb += (l[1] - mb).powi(2);
        }
        let corr = sab / (saa * sbb).sqrt();
        assert!(corr.abs() <= 0.05, "corr = {corr}");
    }

    #[test]
    fn split_sizes_and_determinism() {
        let w = generate_world(&WorldConfig::default()).unwrap();
        let s = split_labeled(&w.dataset, 5.0, 3).unwrap();
        assert_eq!(s.labeled_ids().len(), 10);
        assert_eq!(s.unlabeled_ids().len(), 190);
        assert_eq!(s, split_labeled(&w.dataset, 5.0, 3).unwrap());
        let all = split_labeled(&w.dataset, 100.0, 3).unwrap();
        assert!(all.unlabeled_ids().is_empty());
        assert!(split_labeled(&w.dataset, 0.0, 3).is_err());
    }

    #[test]
    fn sequences_carry_frames() {
        let cfg = WorldConfig {
            sequences: Some(SequenceSpec { num_sequences: 3, length: 12, jitter: 2.0 }),
            num_test_images: 2,
            ..WorldConfig::default()
        };
        let w = generate_world(&cfg).unwrap();
        assert_eq!(w.dataset.images().len(), 36);
        let img = w.dataset.image("seq_001_00004").unwrap();
        assert_eq!(img.frame(), Some(("seq_001", 4)));
    }

    #[test]
    fn poisson_inversion_mean() {
        let n = 20_000;
        let total: usize = (0..n).map(|i| poisson_from_uniform(2.0, (i as f64 + 0.5) / n as f64)).sum();
        assert!((total as f64 / n as f64 - 2.0).abs() < 0.01);
    }
}
