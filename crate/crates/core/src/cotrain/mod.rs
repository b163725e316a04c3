//! The co-training loop: two detectors, one per view, exchange the images they are
//! sure about and the receiver keeps the ones it is least sure about.

mod fuse;
mod select;
mod stop;

use std::path::PathBuf;
use std::time::Instant;

use log::info;

pub use fuse::fuse;
pub use select::{
    cross_score, eligible_ids, rand_select, select_bottom_n, select_top_m, CrossScores,
    SelectionHistory,
};
pub use stop::{should_stop, StopTracker};

use crate::checkpoint::{CycleLogRow, CycleState, RunDir};
use crate::config::CoTrainConfig;
use crate::dataset::ViewPairedDataset;
use crate::detector::{self, DetectorBackend, ModelHandle, TrainRequest};
use crate::error::{Error, Result};
use crate::eval::EvalProtocol;
use crate::labels::PseudoLabelSet;
use crate::seeding::{self, hash_str};
use crate::transform::ViewTransform;
use crate::types::{DetectionRecord, ImageId, View};

const VIEWS: [View; 2] = [View::One, View::Two];

/// Whose boxes a receiver keeps for the images it accepts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ExchangeLabels {
    /// The sender's boxes, mapped into the receiver's frame.
    #[default]
    Sender,
    /// The receiver's own thresholded detections.
    Receiver,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub exchange: ExchangeLabels,
    pub protocol: EvalProtocol,
    /// Where checkpoints, the log and model directories go. Without it the run is
    /// purely in memory.
    pub run_dir: Option<PathBuf>,
    /// Continue from the latest checkpoint in `run_dir` if there is one.
    pub resume: bool,
    /// Return after this many cycles in this call even if the stop rule has not fired.
    pub max_cycles: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// View-1 fresh pseudo-labels of the last cycle: the output of the method.
    pub pseudo_labels: PseudoLabelSet,
    pub state: CycleState,
    /// View-1 fresh pseudo-labels after each cycle, starting with the initial state.
    /// Only cycles run in this call (or present in memory) are included.
    pub fresh_history: Vec<(u32, PseudoLabelSet)>,
}

impl RunOutcome {
    pub fn stopped(&self) -> bool {
        self.state.stopped
    }
}

/// Maps boxes from the frame of `from` to the frame of `to`. The supported transforms are
/// involutions, so one mapping serves both directions.
pub fn reframe(set: &PseudoLabelSet, to: View, transform: &ViewTransform) -> Result<PseudoLabelSet> {
    let mut out = PseudoLabelSet {
        producing_view: to,
        cycle: set.cycle,
        entries: Default::default(),
    };
    for (id, dets) in &set.entries {
        let mapped = dets
            .iter()
            .map(|d| {
                let bbox = if set.producing_view == to { d.bbox } else { transform.apply(&d.bbox)? };
                Ok(DetectionRecord { bbox, ..d.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        out.entries.insert(id.clone(), mapped);
    }
    Ok(out)
}

fn idx(v: View) -> usize {
    v.index() as usize - 1
}

fn log_row(k: u32, stop_map: Option<f64>, fresh: &[PseudoLabelSet; 2], n_up: usize, n_down: usize) -> CycleLogRow {
    CycleLogRow {
        k,
        stop_map,
        n_img_1: fresh[0].len(),
        n_box_1: fresh[0].num_boxes(),
        n_img_2: fresh[1].len(),
        n_box_2: fresh[1].num_boxes(),
        n_up,
        n_down,
    }
}

struct Engine<'a, B: ?Sized> {
    backend: &'a B,
    data: &'a ViewPairedDataset,
    cfg: &'a CoTrainConfig,
    opts: &'a RunOptions,
    run_dir: Option<RunDir>,
    unlabeled: Vec<ImageId>,
}

impl<B: DetectorBackend + ?Sized> Engine<'_, B> {
    fn train(&self, view: View, k: u32, pseudo: Option<&PseudoLabelSet>) -> Result<ModelHandle> {
        let req = TrainRequest::build(self.data, view, k, pseudo)?;
        let dir = self.run_dir.as_ref().map(|r| r.model_dir(view, k));
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        detector::train(self.backend, &req, dir.as_deref())
    }

    fn detect(&self, model: &ModelHandle) -> Result<PseudoLabelSet> {
        detector::detect(self.backend, model, self.data, &self.unlabeled, &self.cfg.thresholds)
    }

    fn initialize(&self) -> Result<CycleState> {
        let m1 = self.train(View::One, 0, None)?;
        let m2 = self.train(View::Two, 0, None)?;
        let fresh = [self.detect(&m1)?, self.detect(&m2)?];
        let log = vec![log_row(0, None, &fresh, 0, 0)];
        Ok(CycleState {
            k: 0,
            rng_seed: self.cfg.rng_seed,
            stopped: false,
            models: [m1, m2],
            fresh,
            accumulated: [PseudoLabelSet::empty(View::One, 0), PseudoLabelSet::empty(View::Two, 0)],
            history: Default::default(),
            tracker: StopTracker::default(),
            log,
        })
    }

    fn step(&self, s: &mut CycleState) -> Result<()> {
        let k = s.k + 1;
        let old = s.fresh[0].clone();
        let mut up: Vec<PseudoLabelSet> = Vec::with_capacity(2);
        for v in VIEWS {
            let mut rng = seeding::rng(s.rng_seed, &[hash_str("rand_select"), k as u64, v.index() as u64]);
            let sampled = rand_select(
                &s.fresh[idx(v)],
                self.cfg.sample_size,
                self.data,
                self.cfg.seq.as_ref(),
                &mut s.history[idx(v)],
                &mut rng,
            );
            up.push(select_top_m(&sampled, self.cfg.share_most_confident));
        }
        let transform = self.data.view2_transform();
        let mut n_down = 0;
        for receiver in VIEWS {
            let sent = &up[idx(receiver.other())];
            let cross = cross_score(self.backend, &s.models[idx(receiver)], self.data, sent, &self.cfg.thresholds)?;
            let keep = select_bottom_n(&cross.scores, self.cfg.keep_least_confident);
            n_down += keep.len();
            let mut down = match self.opts.exchange {
                ExchangeLabels::Sender => reframe(&sent.restrict(&keep), receiver, transform)?,
                ExchangeLabels::Receiver => cross.detections.restrict(&keep),
            };
            down.producing_view = receiver;
            down.cycle = k;
            s.accumulated[idx(receiver)] = fuse(&s.accumulated[idx(receiver)], &down)?;
        }
        for v in VIEWS {
            s.models[idx(v)] = self.train(v, k, Some(&s.accumulated[idx(v)]))?;
            s.fresh[idx(v)] = self.detect(&s.models[idx(v)])?;
        }
        let (metric, stop) = should_stop(&old, &s.fresh[0], k, &mut s.tracker, &self.cfg.stop, &self.opts.protocol);
        let n_up = up.iter().map(PseudoLabelSet::len).sum();
        s.log.push(log_row(k, Some(metric), &s.fresh, n_up, n_down));
        s.k = k;
        s.stopped = stop;
        Ok(())
    }

    fn persist(&self, s: &CycleState, started: Instant) -> Result<()> {
        if let Some(rd) = &self.run_dir {
            rd.save(s)?;
            rd.append_log(s.log.last().expect("log has the initial row"), started.elapsed().as_secs_f64())?;
            if s.stopped {
                rd.save_final(&s.fresh[0])?;
            }
        }
        Ok(())
    }
}

/// Runs co-training on `data` until the stop rule fires (or `opts.max_cycles` cycles
/// have run in this call), checkpointing every cycle when a run directory is given.
pub fn run<B: DetectorBackend + ?Sized>(
    backend: &B,
    data: &ViewPairedDataset,
    cfg: &CoTrainConfig,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    cfg.validate()?;
    opts.protocol.validate()?;
    if cfg.view2_transform != *data.view2_transform() {
        return Err(Error::Config(
            "view2_transform of the configuration and the dataset differ".into(),
        ));
    }
    if data.labeled_ids().is_empty() {
        return Err(Error::Config("the dataset has no labeled images".into()));
    }
    let engine = Engine {
        backend,
        data,
        cfg,
        opts,
        run_dir: opts.run_dir.as_ref().map(RunDir::new),
        unlabeled: data.unlabeled_ids().iter().cloned().collect(),
    };
    let mut history = Vec::new();
    let resumed = match (&engine.run_dir, opts.resume) {
        (Some(rd), true) => match rd.latest_checkpoint()? {
            Some(k) => {
                let s = rd.load(k)?;
                if s.rng_seed != cfg.rng_seed {
                    return Err(Error::Checkpoint {
                        path: rd.cycle_dir(k),
                        message: format!("checkpoint seed {} differs from configured seed {}", s.rng_seed, cfg.rng_seed),
                    });
                }
                rd.truncate_log(k)?;
                info!("resuming after cycle {k}");
                Some(s)
            }
            None => None,
        },
        _ => None,
    };
    if resumed.is_none() {
        if let Some(rd) = &engine.run_dir {
            if rd.latest_checkpoint()?.is_some() {
                return Err(Error::Checkpoint {
                    path: rd.cycles_dir(),
                    message: "run directory already holds checkpoints; resume it or use a new directory".into(),
                });
            }
        }
    }
    let mut state = match resumed {
        Some(s) => s,
        None => {
            let started = Instant::now();
            if let Some(rd) = &engine.run_dir {
                rd.reset_log()?;
            }
            let s = engine.initialize()?;
            engine.persist(&s, started)?;
            s
        }
    };
    history.push((state.k, state.fresh[0].clone()));
    let mut ran = 0;
    while !state.stopped && opts.max_cycles.is_none_or(|m| ran < m) {
        let started = Instant::now();
        engine.step(&mut state)?;
        engine.persist(&state, started)?;
        let row = state.log.last().expect("row just pushed");
        info!(
            "cycle {}: stop mAP {:.2}, view 1 {} images / {} boxes, kept {}",
            row.k,
            row.stop_map.unwrap_or(f64::NAN),
            row.n_img_1,
            row.n_box_1,
            row.n_down
        );
        history.push((state.k, state.fresh[0].clone()));
        ran += 1;
    }
    Ok(RunOutcome {
        pseudo_labels: state.fresh[0].clone(),
        state,
        fresh_history: history,
    })
}

/// Trains the final view-1 detector on the labeled data plus `pseudo`. `cycle` tags the
/// model; backends that care about random streams key them on it.
pub fn train_final<B: DetectorBackend + ?Sized>(
    backend: &B,
    data: &ViewPairedDataset,
    pseudo: Option<&PseudoLabelSet>,
    cycle: u32,
) -> Result<ModelHandle> {
    let req = TrainRequest::build(data, View::One, cycle, pseudo)?;
    detector::train(backend, &req, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::BoundingBox;

    #[test]
    fn reframe_mirrors_only_across_views() {
        let mut s = PseudoLabelSet::empty(View::Two, 3);
        s.entries.insert(
            "a".into(),
            vec![DetectionRecord::new("vehicle", BoundingBox::new(1130.0, 20.0, 1230.0, 220.0).unwrap(), 0.9)],
        );
        let t = ViewTransform::mirror(1242.0);
        let r = reframe(&s, View::One, &t).unwrap();
        assert_eq!(r.producing_view, View::One);
        assert_eq!(r.get("a").unwrap()[0].bbox, BoundingBox::new(12.0, 20.0, 112.0, 220.0).unwrap());
        assert_eq!(reframe(&s, View::Two, &t).unwrap(), s);
    }
}
