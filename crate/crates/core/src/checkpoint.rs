//! Per-cycle checkpoints and the run log.
//!
//! A run directory holds `cycles/<k>/{state.json,dpl1.json,dpl2.json}`, `log.csv` and,
//! once the loop stops, `dpl.json`. Each cycle directory is written under a temporary
//! name and renamed into place, so a directory that exists is complete.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cotrain::{SelectionHistory, StopTracker};
use crate::detector::ModelHandle;
use crate::error::{Error, Result};
use crate::labels::PseudoLabelSet;
use crate::types::View;

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleLogRow {
    pub k: u32,
    /// Stop metric of this cycle; absent for the initial state.
    pub stop_map: Option<f64>,
    pub n_img_1: usize,
    pub n_box_1: usize,
    pub n_img_2: usize,
    pub n_box_2: usize,
    /// Images shared by both senders together.
    pub n_up: usize,
    /// Images kept by both receivers together.
    pub n_down: usize,
}

/// Everything needed to continue the loop after cycle `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleState {
    pub k: u32,
    pub rng_seed: u64,
    pub stopped: bool,
    pub models: [ModelHandle; 2],
    pub fresh: [PseudoLabelSet; 2],
    pub accumulated: [PseudoLabelSet; 2],
    pub history: [SelectionHistory; 2],
    pub tracker: StopTracker,
    pub log: Vec<CycleLogRow>,
}

impl CycleState {
    pub fn fresh(&self, view: View) -> &PseudoLabelSet {
        &self.fresh[view.index() as usize - 1]
    }
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    k: u32,
    rng_seed: u64,
    stopped: bool,
    model_1: ModelHandle,
    model_2: ModelHandle,
    fresh_1: PseudoLabelSet,
    fresh_2: PseudoLabelSet,
    history_1: SelectionHistory,
    history_2: SelectionHistory,
    tracker: StopTracker,
    log: Vec<CycleLogRow>,
}

pub(crate) fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory value serializes");
    s.push('\n');
    s
}

/// Writes `contents` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

const LOG_HEADER: &str = "k,stop_map,n_img_1,n_box_1,n_img_2,n_box_2,n_up,n_down,seconds";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn cycles_dir(&self) -> PathBuf {
        self.root.join("cycles")
    }

    pub fn cycle_dir(&self, k: u32) -> PathBuf {
        self.cycles_dir().join(k.to_string())
    }

    pub fn model_dir(&self, view: View, k: u32) -> PathBuf {
        self.root
            .join("models")
            .join(format!("v{}", view.index()))
            .join(format!("c{k}"))
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join("log.csv")
    }

    pub fn final_labels_path(&self) -> PathBuf {
        self.root.join("dpl.json")
    }

    /// Cycle numbers with a complete checkpoint, ascending.
    pub fn checkpoints(&self) -> Result<Vec<u32>> {
        let dir = self.cycles_dir();
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut ks = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if let Some(k) = entry.file_name().to_str().and_then(|s| s.parse::<u32>().ok()) {
                ks.push(k);
            }
        }
        ks.sort_unstable();
        Ok(ks)
    }

    pub fn latest_checkpoint(&self) -> Result<Option<u32>> {
        Ok(self.checkpoints()?.last().copied())
    }

    pub fn save(&self, state: &CycleState) -> Result<()> {
        let cycles = self.cycles_dir();
        fs::create_dir_all(&cycles).map_err(|e| Error::io(&cycles, e))?;
        let tmp = cycles.join(format!(".tmp-{}", state.k));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let [m1, m2] = state.models.clone();
        let [f1, f2] = state.fresh.clone();
        let [h1, h2] = state.history.clone();
        let file = StateFile {
            k: state.k,
            rng_seed: state.rng_seed,
            stopped: state.stopped,
            model_1: m1,
            model_2: m2,
            fresh_1: f1,
            fresh_2: f2,
            history_1: h1,
            history_2: h2,
            tracker: state.tracker.clone(),
            log: state.log.clone(),
        };
        for (name, text) in [
            ("state.json", to_pretty_json(&file)),
            ("dpl1.json", to_pretty_json(&state.accumulated[0])),
            ("dpl2.json", to_pretty_json(&state.accumulated[1])),
        ] {
            let p = tmp.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        let dest = self.cycle_dir(state.k);
        if dest.exists() {
            fs::remove_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
        }
        fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))
    }

    pub fn load(&self, k: u32) -> Result<CycleState> {
        let dir = self.cycle_dir(k);
        let f: StateFile = read_json(&dir.join("state.json"))?;
        let a1: PseudoLabelSet = read_json(&dir.join("dpl1.json"))?;
        let a2: PseudoLabelSet = read_json(&dir.join("dpl2.json"))?;
        if f.k != k {
            return Err(Error::Checkpoint {
                path: dir,
                message: format!("state records cycle {} in directory of cycle {k}", f.k),
            });
        }
        Ok(CycleState {
            k: f.k,
            rng_seed: f.rng_seed,
            stopped: f.stopped,
            models: [f.model_1, f.model_2],
            fresh: [f.fresh_1, f.fresh_2],
            accumulated: [a1, a2],
            history: [f.history_1, f.history_2],
            tracker: f.tracker,
            log: f.log,
        })
    }

    /// Starts `log.csv` afresh with only its header.
    pub fn reset_log(&self) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        write_atomic(&self.log_path(), &format!("{LOG_HEADER}\n"))
    }

    pub fn append_log(&self, row: &CycleLogRow, seconds: f64) -> Result<()> {
        let path = self.log_path();
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let stop = row.stop_map.map(|m| format!("{m:.6}")).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{:.3}",
            row.k, stop, row.n_img_1, row.n_box_1, row.n_img_2, row.n_box_2, row.n_up, row.n_down, seconds
        )
        .map_err(|e| Error::io(&path, e))
    }

    /// Drops log rows of cycles after `k`, e.g. ones written before a crash whose
    /// checkpoint never completed. A missing log is recreated from the header.
    pub fn truncate_log(&self, k: u32) -> Result<()> {
        let path = self.log_path();
        if !path.exists() {
            return self.reset_log();
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = format!("{LOG_HEADER}\n");
        for line in text.lines().skip(1) {
            let row_k = line.split(',').next().and_then(|s| s.parse::<u32>().ok());
            if row_k.is_some_and(|rk| rk <= k) {
                out.push_str(line);
                out.push('\n');
            }
        }
        write_atomic(&path, &out)
    }

    pub fn save_final(&self, labels: &PseudoLabelSet) -> Result<()> {
        write_atomic(&self.final_labels_path(), &to_pretty_json(labels))
    }
}

pub fn load_pseudo_labels(path: &Path) -> Result<PseudoLabelSet> {
    read_json(path)
}
