//! Lower bound / upper bound / co-training comparisons on simulated worlds, and the
//! manifest format that describes a batch of such runs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_pseudo_labels, RunDir};
use crate::config::CoTrainConfig;
use crate::cotrain::{self, train_final, ExchangeLabels, RunOptions};
use crate::dataset::{load_dataset, ViewPairedDataset};
use crate::files::save_json;
use crate::detector::{detect_images, DetectImage, DetectorBackend};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalProtocol, EvalReport};
use crate::labels::{PseudoLabelSet, Thresholds};
use crate::simdet::{generate_world, split_labeled, SimBackend, SimParams, World, WorldConfig, WorldTruth, FINAL_CYCLE};
use crate::transform::ViewTransform;

/// How the second view relates to the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    /// A separate sensor seeing the scene in the same frame; weakly correlated errors.
    RgbD,
    /// The mirrored image; strongly correlated errors.
    RgbMirror,
}

impl ViewMode {
    pub fn default_rho(self) -> f64 {
        match self {
            ViewMode::RgbD => 0.2,
            ViewMode::RgbMirror => 0.95,
        }
    }

    pub fn transform(self, image_width: f64) -> ViewTransform {
        match self {
            ViewMode::RgbD => ViewTransform::IDENTITY,
            ViewMode::RgbMirror => ViewTransform::mirror(image_width),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub name: String,
    /// Percentage of training images with human labels.
    pub p: f64,
    pub mode: ViewMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// A batch of simulated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub simulator: SimParams,
    /// Co-training configuration file; built-in defaults when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<PathBuf>,
    pub cells: Vec<CellSpec>,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut de = serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: format!("at `{}`: {}", e.path(), e.inner()),
        })
    }
}

/// Outcome of one cell. Upper bound and gap recovery are absent for fully labeled cells,
/// where only the upper bound is computed (reported as `lb`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub name: String,
    pub p: f64,
    pub mode: ViewMode,
    pub rho: f64,
    pub seed: u64,
    pub lb: f64,
    pub ub: Option<f64>,
    pub cotrain: Option<f64>,
    pub gap_recovery: Option<f64>,
    pub cycles: Option<u32>,
}

/// A world prepared for one cell: the labeled split and a simulated backend.
pub struct SimSetup {
    pub world: World,
    pub split: ViewPairedDataset,
    pub backend: SimBackend,
}

impl SimSetup {
    pub fn new(world_cfg: &WorldConfig, params: &SimParams, p: f64) -> Result<Self> {
        let world = generate_world(world_cfg)?;
        let split = split_labeled(&world.dataset, p, world_cfg.seed)?;
        let backend = SimBackend::new(params.clone(), Arc::new(world.truth.clone()), world_cfg.seed)?;
        Ok(SimSetup { world, split, backend })
    }

    pub fn truth(&self) -> &WorldTruth {
        &self.world.truth
    }
}

/// How to rebuild the simulated backend of a run; stored as `setup.json` in its run
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunSetup {
    Generated {
        world: WorldConfig,
        simulator: SimParams,
        p: f64,
    },
    Files {
        dataset: PathBuf,
        truth: PathBuf,
        simulator: SimParams,
        seed: u64,
    },
}

impl RunSetup {
    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join("setup.json")
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = RunSetup::path(run_dir);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { path, message: e.to_string() })
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
        save_json(&RunSetup::path(run_dir), self)
    }

    /// The labeled split, the simulated backend and the hidden truth.
    pub fn materialize(&self) -> Result<(ViewPairedDataset, SimBackend)> {
        match self {
            RunSetup::Generated { world, simulator, p } => {
                let s = SimSetup::new(world, simulator, *p)?;
                Ok((s.split, s.backend))
            }
            RunSetup::Files { dataset, truth, simulator, seed } => {
                let data = load_dataset(dataset)?;
                let truth = WorldTruth::load(truth)?;
                let backend = SimBackend::new(simulator.clone(), Arc::new(truth), *seed)?;
                Ok((data, backend))
            }
        }
    }
}

/// World configuration for a cell: the mode fixes the view transform and default rho.
pub fn cell_world(base: &WorldConfig, cell: &CellSpec) -> WorldConfig {
    WorldConfig {
        rho: cell.rho.unwrap_or_else(|| cell.mode.default_rho()),
        view2_transform: cell.mode.transform(base.image_width),
        seed: cell.seed.unwrap_or(base.seed),
        ..base.clone()
    }
}

/// Trains the final view-1 detector on `data` plus `pseudo` and scores it on the test
/// split of `truth`. All detections are kept so the precision-recall curve is complete.
pub fn evaluate_final<B: DetectorBackend + ?Sized>(
    backend: &B,
    data: &ViewPairedDataset,
    pseudo: Option<&PseudoLabelSet>,
    truth: &WorldTruth,
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    let model = train_final(backend, data, pseudo, FINAL_CYCLE)?;
    let images = truth
        .test_images
        .iter()
        .map(|img| DetectImage { id: img.id.clone(), payload_ref: img.views.v1.clone() })
        .collect();
    let all = Thresholds::uniform(truth.category_names(), 0.0);
    let dets = detect_images(backend, &model, images, &all)?;
    let ids = truth.test_ids();
    Ok(evaluate(&dets.entries, &truth.ground_truth(&ids), protocol))
}

/// Test mAP of the final detector after each cycle of a finished run (cycle 0 uses no
/// pseudo-labels, i.e. the lower bound).
pub fn cycle_curve<B: DetectorBackend + ?Sized>(
    backend: &B,
    data: &ViewPairedDataset,
    truth: &WorldTruth,
    history: &[(u32, PseudoLabelSet)],
    protocol: &EvalProtocol,
) -> Result<Vec<(u32, f64)>> {
    history
        .iter()
        .map(|(k, fresh)| {
            let pseudo = (*k > 0).then_some(fresh);
            Ok((*k, evaluate_final(backend, data, pseudo, truth, protocol)?.map))
        })
        .collect()
}

/// View-1 fresh pseudo-labels of every checkpoint in `run_dir`.
pub fn checkpoint_history(run_dir: &RunDir) -> Result<Vec<(u32, PseudoLabelSet)>> {
    run_dir
        .checkpoints()?
        .into_iter()
        .map(|k| Ok((k, run_dir.load(k)?.fresh[0].clone())))
        .collect()
}

/// Writes `<stem>.json` and `<stem>.csv` into `dir`.
pub fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (ext, text) in [("json", report.to_json()), ("csv", report.to_csv())] {
        let p = dir.join(format!("{stem}.{ext}"));
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

pub fn gap_recovery(lb: f64, ub: f64, cotrain: f64) -> Option<f64> {
    (ub > lb).then(|| (cotrain - lb) / (ub - lb))
}

/// Runs one cell: lower bound, upper bound and co-training with the final detector.
pub fn run_cell(
    base: &WorldConfig,
    params: &SimParams,
    cfg: &CoTrainConfig,
    cell: &CellSpec,
    run_dir: Option<&Path>,
    resume: bool,
) -> Result<CellResult> {
    let wc = cell_world(base, cell);
    let protocol = EvalProtocol::default();
    let mut result = CellResult {
        name: cell.name.clone(),
        p: cell.p,
        mode: cell.mode,
        rho: wc.rho,
        seed: wc.seed,
        lb: 0.0,
        ub: None,
        cotrain: None,
        gap_recovery: None,
        cycles: None,
    };
    let full = SimSetup::new(&wc, params, 100.0)?;
    let ub_report = evaluate_final(&full.backend, &full.split, None, full.truth(), &protocol)?;
    let ub = ub_report.map;
    if cell.p >= 100.0 {
        if let Some(dir) = run_dir {
            write_report(dir, "final_eval", &ub_report)?;
        }
        result.lb = ub;
        return Ok(result);
    }
    let setup = SimSetup::new(&wc, params, cell.p)?;
    let lb = evaluate_final(&setup.backend, &setup.split, None, setup.truth(), &protocol)?.map;
    let cfg = CoTrainConfig {
        view2_transform: wc.view2_transform,
        ..cfg.clone()
    };
    let opts = RunOptions {
        exchange: ExchangeLabels::Sender,
        protocol: protocol.clone(),
        run_dir: run_dir.map(Path::to_path_buf),
        resume,
        max_cycles: None,
    };
    if let Some(dir) = run_dir {
        RunSetup::Generated { world: wc.clone(), simulator: params.clone(), p: cell.p }.save(dir)?;
    }
    let out = cotrain::run(&setup.backend, &setup.split, &cfg, &opts)?;
    let report = evaluate_final(&setup.backend, &setup.split, Some(&out.pseudo_labels), setup.truth(), &protocol)?;
    let co = report.map;
    if let Some(dir) = run_dir {
        write_report(dir, "final_eval", &report)?;
    }
    result.lb = lb;
    result.ub = Some(ub);
    result.cotrain = Some(co);
    result.gap_recovery = gap_recovery(lb, ub, co);
    result.cycles = Some(out.state.k);
    Ok(result)
}

/// Loads a finished run's final labels, or the latest fresh view-1 set if it never stopped.
pub fn final_labels(run_dir: &RunDir) -> Result<PseudoLabelSet> {
    let path = run_dir.final_labels_path();
    if path.exists() {
        return load_pseudo_labels(&path);
    }
    let k = run_dir.latest_checkpoint()?.ok_or_else(|| Error::Checkpoint {
        path: run_dir.root().to_path_buf(),
        message: "no checkpoints".into(),
    })?;
    Ok(run_dir.load(k)?.fresh[0].clone())
}

/// One CSV line per cell.
pub fn results_csv(results: &[CellResult]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    let mut out = String::from("cell,p,mode,rho,seed,lb,ub,cotrain,gap_recovery,cycles\n");
    for r in results {
        let mode = match r.mode {
            ViewMode::RgbD => "rgb_d",
            ViewMode::RgbMirror => "rgb_mirror",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{:.4},{},{},{},{}\n",
            r.name,
            r.p,
            mode,
            r.rho,
            r.seed,
            r.lb,
            opt(r.ub),
            opt(r.cotrain),
            opt(r.gap_recovery),
            r.cycles.map(|k| k.to_string()).unwrap_or_default()
        ));
    }
    out
}
