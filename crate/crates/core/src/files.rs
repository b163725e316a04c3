//! Readers and writers for the JSON files the command line tool exchanges with users.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::checkpoint::{to_pretty_json, write_atomic};
use crate::dataset::load_kitti_dir;
use crate::error::{Error, Result};
use crate::eval::{DetectionMap, GroundTruthMap, GtBox};
use crate::labels::PseudoLabelSet;
use crate::simdet::WorldTruth;
use crate::types::View;

fn parse_error(path: &Path, e: serde_path_to_error::Error<serde_json::Error>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: format!("at `{}`: {}", e.path(), e.inner()),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a pseudo-label set. Also accepts a plain `{image_id: [detections]}` map or a
/// worker detections file, which become a view-1 set of cycle 0.
pub fn load_labels(path: &Path) -> Result<PseudoLabelSet> {
    let text = read(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let is_set = value.get("entries").is_some() && value.get("producing_view").is_some();
    let is_wire = value.get("results").is_some() && value.get("version").is_some();
    #[derive(Deserialize)]
    struct Wire {
        results: DetectionMap,
    }
    let plain = |entries| PseudoLabelSet { producing_view: View::One, cycle: 0, entries };
    let set = if is_set {
        serde_path_to_error::deserialize(value)
    } else if is_wire {
        serde_path_to_error::deserialize(value).map(|w: Wire| plain(w.results))
    } else {
        serde_path_to_error::deserialize(value).map(plain)
    }
    .map_err(|e| parse_error(path, e))?;
    for (id, dets) in &set.entries {
        for (i, d) in dets.iter().enumerate() {
            d.bbox
                .validate()
                .map_err(|e| Error::validation(format!("{}: {id}[{i}]", path.display()), e.to_string()))?;
        }
    }
    Ok(set)
}

pub fn load_detection_map(path: &Path) -> Result<DetectionMap> {
    Ok(load_labels(path)?.entries)
}

/// Reads ground truth from a KITTI label directory, a simulator `truth.json`, or a JSON
/// map in the detections layout (confidences optional and ignored).
pub fn load_ground_truth(path: &Path) -> Result<GroundTruthMap> {
    if path.is_dir() {
        let labels = load_kitti_dir(path)?;
        return Ok(labels
            .into_iter()
            .map(|(id, recs)| {
                let boxes = recs
                    .into_iter()
                    .map(|r| GtBox { category: r.category, bbox: r.bbox })
                    .collect();
                (id, boxes)
            })
            .collect());
    }
    let text = read(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if value.get("objects").is_some() && value.get("test_images").is_some() {
        let truth: WorldTruth = serde_path_to_error::deserialize(value).map_err(|e| parse_error(path, e))?;
        return Ok(truth.ground_truth(truth.objects.keys()));
    }
    let gt: GroundTruthMap = serde_path_to_error::deserialize(value).map_err(|e| parse_error(path, e))?;
    for (id, boxes) in &gt {
        for (i, g) in boxes.iter().enumerate() {
            g.bbox
                .validate()
                .map_err(|e| Error::validation(format!("{}: {id}[{i}]", path.display()), e.to_string()))?;
        }
    }
    Ok(gt)
}

pub fn save_labels(path: &Path, set: &PseudoLabelSet) -> Result<()> {
    write_atomic(path, &to_pretty_json(set))
}

pub fn save_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_pretty_json(value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_all_detection_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let det = r#"[{"category":"vehicle","bbox":[0,0,10,10],"confidence":0.9}]"#;
        let plain = format!(r#"{{"a":{det}}}"#);
        let wire = format!(r#"{{"version":1,"results":{{"a":{det}}}}}"#);
        let set = format!(r#"{{"producing_view":2,"cycle":4,"entries":{{"a":{det}}}}}"#);
        for (name, text, view) in [("p.json", plain, View::One), ("w.json", wire, View::One), ("s.json", set, View::Two)] {
            let p = dir.path().join(name);
            fs::write(&p, text).unwrap();
            let s = load_labels(&p).unwrap();
            assert_eq!(s.producing_view, view);
            assert_eq!(s.get("a").unwrap()[0].confidence, 0.9);
        }
    }

    #[test]
    fn parse_errors_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        fs::write(&p, r#"{"a":[{"category":"vehicle","bbox":[0,0,10,10]}]}"#).unwrap();
        let msg = load_labels(&p).unwrap_err().to_string();
        assert!(msg.contains("a[0]"), "{msg}");
        fs::write(&p, r#"{"a":[{"category":"vehicle","bbox":[10,0,0,10],"confidence":0.5}]}"#).unwrap();
        assert!(load_labels(&p).is_err());
    }

    #[test]
    fn ground_truth_without_confidence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.json");
        fs::write(&p, r#"{"a":[{"category":"pedestrian","bbox":[0,0,10,30]}],"b":[]}"#).unwrap();
        let gt = load_ground_truth(&p).unwrap();
        assert_eq!(gt.len(), 2);
        assert_eq!(gt["a"][0].category.as_str(), "pedestrian");
    }
}
