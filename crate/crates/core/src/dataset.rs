//! View-paired datasets: manifest ingestion, validation and the KITTI label importer.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::ViewTransform;
use crate::types::{BoundingBox, Category, ImageId, LabelRecord, LabelSource, View};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRefs {
    pub v1: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v2: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: ImageId,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<i64>,
    pub views: ViewRefs,
}

impl ImageRecord {
    pub fn new(id: impl Into<ImageId>, width: u32, height: u32) -> Self {
        let id = id.into();
        ImageRecord {
            views: ViewRefs {
                v1: format!("{id}.png"),
                v2: None,
            },
            id,
            width,
            height,
            sequence_id: None,
            frame_index: None,
        }
    }

    /// Opaque payload reference for a view. A missing view-2 reference falls back to
    /// view 1, which is how mirrored pairs are stored.
    pub fn payload_ref(&self, view: View) -> &str {
        match view {
            View::One => &self.views.v1,
            View::Two => self.views.v2.as_deref().unwrap_or(&self.views.v1),
        }
    }

    pub fn frame(&self) -> Option<(&str, i64)> {
        match (&self.sequence_id, self.frame_index) {
            (Some(s), Some(f)) => Some((s.as_str(), f)),
            _ => None,
        }
    }
}

/// On-disk dataset manifest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub images: Vec<ImageRecord>,
    #[serde(default)]
    pub labels: BTreeMap<ImageId, Vec<LabelRecord>>,
    #[serde(default)]
    pub view2_transform: ViewTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPairedDataset {
    images: Vec<ImageRecord>,
    index: HashMap<ImageId, usize>,
    labels: BTreeMap<ImageId, Vec<LabelRecord>>,
    view2_transform: ViewTransform,
    labeled: BTreeSet<ImageId>,
    unlabeled: BTreeSet<ImageId>,
}

impl ViewPairedDataset {
    /// Builds and validates a dataset. Images with an entry in `labels` form the labeled
    /// split, everything else is unlabeled. Labels are given in the view-1 frame.
    pub fn new(
        images: Vec<ImageRecord>,
        labels: BTreeMap<ImageId, Vec<LabelRecord>>,
        view2_transform: ViewTransform,
    ) -> Result<Self> {
        view2_transform.validate()?;
        let mut index = HashMap::with_capacity(images.len());
        let mut frames: HashSet<(String, i64)> = HashSet::new();
        for (i, img) in images.iter().enumerate() {
            let rec = || format!("image `{}`", img.id);
            if img.id.is_empty() {
                return Err(Error::validation(format!("image #{i}"), "empty id"));
            }
            if index.insert(img.id.clone(), i).is_some() {
                return Err(Error::validation(rec(), "duplicate image id"));
            }
            if img.width == 0 || img.height == 0 {
                return Err(Error::validation(rec(), "width and height must be positive"));
            }
            match (&img.sequence_id, img.frame_index) {
                (Some(_), None) => {
                    return Err(Error::validation(rec(), "sequence_id without frame_index"))
                }
                (Some(seq), Some(f)) if !frames.insert((seq.clone(), f)) => {
                    return Err(Error::validation(
                        rec(),
                        format!("frame_index {f} repeated in sequence `{seq}`"),
                    ));
                }
                _ => {}
            }
        }
        for (id, recs) in &labels {
            if !index.contains_key(id) {
                return Err(Error::validation(
                    format!("labels for `{id}`"),
                    "image id not present in images",
                ));
            }
            for (j, r) in recs.iter().enumerate() {
                let rec = || format!("labels[{id}][{j}]");
                r.bbox.validate().map_err(|e| Error::validation(rec(), e.to_string()))?;
                if r.source.is_pseudo() {
                    return Err(Error::validation(
                        rec(),
                        "dataset labels must be human or virtual",
                    ));
                }
            }
        }
        let labeled: BTreeSet<ImageId> = labels.keys().cloned().collect();
        let unlabeled = images
            .iter()
            .filter(|img| !labeled.contains(&img.id))
            .map(|img| img.id.clone())
            .collect();
        Ok(ViewPairedDataset {
            images,
            index,
            labels,
            view2_transform,
            labeled,
            unlabeled,
        })
    }

    pub fn from_manifest(m: Manifest) -> Result<Self> {
        ViewPairedDataset::new(m.images, m.labels, m.view2_transform)
    }

    pub fn to_manifest(&self) -> Manifest {
        Manifest {
            images: self.images.clone(),
            labels: self.labels.clone(),
            view2_transform: self.view2_transform,
        }
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn image(&self, id: &str) -> Option<&ImageRecord> {
        self.index.get(id).map(|&i| &self.images[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn view2_transform(&self) -> &ViewTransform {
        &self.view2_transform
    }

    pub fn labeled_ids(&self) -> &BTreeSet<ImageId> {
        &self.labeled
    }

    pub fn unlabeled_ids(&self) -> &BTreeSet<ImageId> {
        &self.unlabeled
    }

    /// Labels in the view-1 frame.
    pub fn labels(&self) -> &BTreeMap<ImageId, Vec<LabelRecord>> {
        &self.labels
    }

    /// Labels of one image expressed in the requested view's frame.
    pub fn labels_in_view(&self, id: &str, view: View) -> Result<Vec<LabelRecord>> {
        let Some(recs) = self.labels.get(id) else {
            return Ok(Vec::new());
        };
        match view {
            View::One => Ok(recs.clone()),
            View::Two => recs
                .iter()
                .map(|r| {
                    Ok(LabelRecord {
                        bbox: self.view2_transform.apply(&r.bbox)?,
                        ..r.clone()
                    })
                })
                .collect(),
        }
    }

    pub fn num_labeled_boxes(&self) -> usize {
        self.labels.values().map(Vec::len).sum()
    }

    pub fn categories(&self) -> BTreeSet<Category> {
        self.labels
            .values()
            .flatten()
            .map(|r| r.category.clone())
            .collect()
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: format!("at `{}`: {}", e.path(), e.inner()),
    })
}

/// Reads and validates a dataset manifest.
pub fn load_dataset(path: &Path) -> Result<ViewPairedDataset> {
    ViewPairedDataset::from_manifest(load_manifest(path)?)
}

pub fn save_dataset(ds: &ViewPairedDataset, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&ds.to_manifest())
        .map_err(|e| Error::Protocol(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Maps KITTI object types onto the two evaluated categories. Everything else
/// (vans, trucks, cyclists, don't-care regions, ...) is dropped.
pub fn kitti_category(kitti_type: &str) -> Option<Category> {
    match kitti_type {
        "Car" => Some(Category::vehicle()),
        "Pedestrian" => Some(Category::pedestrian()),
        _ => None,
    }
}

/// Parses one KITTI label line. Returns `Ok(None)` for object types outside the
/// category map.
pub fn parse_kitti_line(line: &str) -> Result<Option<LabelRecord>> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 8 {
        return Err(Error::validation(
            format!("KITTI line `{line}`"),
            format!("expected at least 8 fields, found {}", fields.len()),
        ));
    }
    let Some(category) = kitti_category(fields[0]) else {
        return Ok(None);
    };
    let mut coords = [0.0; 4];
    for (c, f) in coords.iter_mut().zip(&fields[4..8]) {
        *c = f.parse().map_err(|_| {
            Error::validation(format!("KITTI line `{line}`"), format!("bad coordinate `{f}`"))
        })?;
    }
    let bbox = BoundingBox::new(coords[0], coords[1], coords[2], coords[3])
        .map_err(|e| Error::validation(format!("KITTI line `{line}`"), e.to_string()))?;
    Ok(Some(LabelRecord {
        category,
        bbox,
        source: LabelSource::Human,
    }))
}

pub fn parse_kitti_labels(text: &str) -> Result<Vec<LabelRecord>> {
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        if let Some(r) = parse_kitti_line(line)? {
            out.push(r);
        }
    }
    Ok(out)
}

/// Reads every `<image_id>.txt` in a KITTI `label_2` directory.
pub fn load_kitti_dir(dir: &Path) -> Result<BTreeMap<ImageId, Vec<LabelRecord>>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let recs = parse_kitti_labels(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?;
        out.insert(stem.to_string(), recs);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const KITTI_LINES: [&str; 3] = [
        "Pedestrian 0.00 0 -0.20 712.40 143.00 810.73 307.92 1.89 0.48 1.20 1.84 1.47 8.41 0.01",
        "Car 0.00 0 1.85 387.63 181.54 423.81 203.12 1.67 1.87 3.69 -16.53 2.39 58.49 1.57",
        "Truck 0.00 0 -1.57 599.41 156.40 629.75 189.25 2.85 2.63 12.34 0.47 1.49 69.44 -1.56",
    ];

    // naive reference: left/top/right/bottom sit right after type, truncation, occlusion, alpha
    fn reference_box(line: &str) -> (String, [f64; 4]) {
        let mut it = line.split(' ');
        let ty = it.next().unwrap().to_string();
        let rest: Vec<f64> = it.map(|s| s.parse().unwrap()).collect();
        (ty, [rest[3], rest[4], rest[5], rest[6]])
    }

    fn manifest(json: &str) -> Result<ViewPairedDataset> {
        ViewPairedDataset::from_manifest(serde_json::from_str(json).unwrap())
    }

    #[test]
    fn two_images_one_labeled() {
        let ds = manifest(
            r#"{"images":[
                {"id":"a","width":1240,"height":375,"views":{"v1":"a.png","v2":"a_d.png"}},
                {"id":"b","width":1240,"height":375,"views":{"v1":"b.png"}}],
               "labels":{"a":[{"category":"vehicle","bbox":[10,20,110,220],"source":"human"}]},
               "view2_transform":{"kind":"identity"}}"#,
        )
        .unwrap();
        assert_eq!(ds.labeled_ids().len(), 1);
        assert_eq!(ds.unlabeled_ids().len(), 1);
        assert_eq!(ds.image("b").unwrap().payload_ref(View::Two), "b.png");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = manifest(
            r#"{"images":[
                {"id":"a","width":10,"height":10,"views":{"v1":"a"}},
                {"id":"a","width":10,"height":10,"views":{"v1":"a"}}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("image `a`"), "{err}");
    }

    #[test]
    fn sequence_invariants() {
        let err = manifest(
            r#"{"images":[{"id":"a","width":10,"height":10,"sequence_id":"s","views":{"v1":"a"}}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("frame_index"));
        let err = manifest(
            r#"{"images":[
              {"id":"a","width":10,"height":10,"sequence_id":"s","frame_index":3,"views":{"v1":"a"}},
              {"id":"b","width":10,"height":10,"sequence_id":"s","frame_index":3,"views":{"v1":"b"}}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("image `b`"));
    }

    #[test]
    fn labels_must_reference_images_and_not_be_pseudo() {
        let err = manifest(
            r#"{"images":[{"id":"a","width":10,"height":10,"views":{"v1":"a"}}],
               "labels":{"zz":[]}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("zz"));
        let err = manifest(
            r#"{"images":[{"id":"a","width":10,"height":10,"views":{"v1":"a"}}],
               "labels":{"a":[{"category":"vehicle","bbox":[0,0,1,1],"source":"pseudo","cycle":1}]}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("labels[a][0]"));
    }

    #[test]
    fn mirrored_labels_in_view_two() {
        let ds = manifest(
            r#"{"images":[{"id":"a","width":1240,"height":375,"views":{"v1":"a"}}],
               "labels":{"a":[{"category":"vehicle","bbox":[10,20,110,220],"source":"human"}]},
               "view2_transform":{"kind":"horizontal_mirror","image_width":1240}}"#,
        )
        .unwrap();
        let v2 = ds.labels_in_view("a", View::Two).unwrap();
        assert_eq!(v2[0].bbox.as_array(), [1130.0, 20.0, 1230.0, 220.0]);
    }

    #[test]
    fn kitti_fields_match_reference_parser() {
        for line in KITTI_LINES {
            let (ty, coords) = reference_box(line);
            match parse_kitti_line(line).unwrap() {
                Some(rec) => {
                    assert_eq!(rec.bbox.as_array(), coords);
                    assert_eq!(Some(rec.category), kitti_category(&ty));
                }
                None => assert_eq!(ty, "Truck"),
            }
        }
        let rec = parse_kitti_line("Car 0 0 0 10 20 110 220 1 1 1 0 0 0 0")
            .unwrap()
            .unwrap();
        assert_eq!(rec.bbox.as_array(), [10.0, 20.0, 110.0, 220.0]);
        assert_eq!(rec.category, Category::vehicle());
        assert!(parse_kitti_line("Car 0 0").is_err());
    }
}
