use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};

use super::wire::{self, DetectRequestFile, DetectionsFile, TrainRequestFile};
use super::{DetectRequest, DetectorBackend, ModelHandle, TrainRequest};
use crate::error::{Error, Result};
use crate::eval::DetectionMap;
use crate::types::View;

/// Backend that shells out to a stateless worker executable, one process per call:
///
/// ```text
/// <worker> train --request <train.json> --model-out <dir>
/// <worker> detect --model <dir> --request <detect.json> --out <detections.json>
/// ```
#[derive(Debug)]
pub struct ExternalWorker {
    executable: PathBuf,
    scratch: PathBuf,
    calls: AtomicU64,
}

impl ExternalWorker {
    pub fn new(executable: impl Into<PathBuf>, scratch: impl Into<PathBuf>) -> Self {
        ExternalWorker {
            executable: executable.into(),
            scratch: scratch.into(),
            calls: AtomicU64::new(0),
        }
    }

    pub fn executable(&self) -> &Path {
        &self.executable
    }

    fn scratch_file(&self, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.scratch).map_err(|e| Error::io(&self.scratch, e))?;
        let n = self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(self.scratch.join(format!("{stem}-{n:06}.json")))
    }

    fn invoke(&self, view: View, args: &[&std::ffi::OsStr]) -> Result<()> {
        let output = Command::new(&self.executable)
            .args(args)
            .output()
            .map_err(|e| Error::Backend {
                view,
                message: format!("cannot start {}: {e}", self.executable.display()),
            })?;
        if !output.status.success() {
            return Err(Error::Backend {
                view,
                message: format!(
                    "worker {} exited with {}: {}",
                    self.executable.display(),
                    output.status,
                    String::from_utf8_lossy(&output.stderr).trim()
                ),
            });
        }
        Ok(())
    }
}

impl DetectorBackend for ExternalWorker {
    fn train(&self, request: &TrainRequest, model_dir: Option<&Path>) -> Result<ModelHandle> {
        let view = request.view;
        let model_dir = model_dir.ok_or_else(|| Error::Backend {
            view,
            message: "external workers need a model directory".into(),
        })?;
        fs::create_dir_all(model_dir).map_err(|e| Error::io(model_dir, e))?;
        let req_path = self.scratch_file(&format!("train-v{view}"))?;
        let body = wire::encode(&TrainRequestFile::from(request));
        fs::write(&req_path, body).map_err(|e| Error::io(&req_path, e))?;
        self.invoke(
            view,
            &[
                "train".as_ref(),
                "--request".as_ref(),
                req_path.as_os_str(),
                "--model-out".as_ref(),
                model_dir.as_os_str(),
            ],
        )?;
        Ok(ModelHandle {
            token: model_dir.display().to_string(),
            path: Some(model_dir.to_path_buf()),
            view,
            cycle: request.cycle,
        })
    }

    fn detect(&self, model: &ModelHandle, request: &DetectRequest) -> Result<DetectionMap> {
        let view = request.view;
        let model_dir = model.path.as_ref().ok_or_else(|| Error::Backend {
            view,
            message: "model handle has no storage path".into(),
        })?;
        let req_path = self.scratch_file(&format!("detect-v{view}"))?;
        let out_path = self.scratch_file(&format!("detections-v{view}"))?;
        fs::write(&req_path, wire::encode(&DetectRequestFile::from(request)))
            .map_err(|e| Error::io(&req_path, e))?;
        self.invoke(
            view,
            &[
                "detect".as_ref(),
                "--model".as_ref(),
                model_dir.as_os_str(),
                "--request".as_ref(),
                req_path.as_os_str(),
                "--out".as_ref(),
                out_path.as_os_str(),
            ],
        )?;
        let text = fs::read_to_string(&out_path).map_err(|e| Error::Backend {
            view,
            message: format!("worker wrote no output at {}: {e}", out_path.display()),
        })?;
        let file: DetectionsFile = wire::decode(&text)?;
        Ok(file.results)
    }
}
