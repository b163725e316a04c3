use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::types::{BoundingBox, Category, DetectionRecord};

/// Scales each box about its center by its category's factor, to align labeling styles
/// (box margins) between datasets before evaluation.
pub fn resize_boxes_per_category(
    dets: &[DetectionRecord],
    factors: &BTreeMap<Category, f64>,
) -> Result<Vec<DetectionRecord>> {
    dets.iter()
        .map(|d| {
            let f = *factors
                .get(&d.category)
                .ok_or_else(|| Error::UnknownCategory(d.category.clone()))?;
            if !(f > 0.0) || !f.is_finite() {
                return Err(Error::Config(format!(
                    "resize factor for `{}` must be positive, got {f}",
                    d.category
                )));
            }
            let (cx, cy) = d.bbox.center();
            let hw = d.bbox.width() / 2.0 * f;
            let hh = d.bbox.height() / 2.0 * f;
            Ok(DetectionRecord {
                bbox: BoundingBox {
                    x1: cx - hw,
                    y1: cy - hh,
                    x2: cx + hw,
                    y2: cy + hh,
                },
                ..d.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(cat: &str, f: f64) -> BTreeMap<Category, f64> {
        [(Category::new(cat), f)].into_iter().collect()
    }

    #[test]
    fn center_scaling() {
        let d = DetectionRecord::new("vehicle", BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), 0.7);
        assert_eq!(resize_boxes_per_category(std::slice::from_ref(&d), &one("vehicle", 1.0)).unwrap(), vec![d.clone()]);
        let big = resize_boxes_per_category(std::slice::from_ref(&d), &one("vehicle", 2.0)).unwrap();
        assert_eq!(big[0].bbox.as_array(), [-5.0, -5.0, 15.0, 15.0]);
        assert_eq!(big[0].confidence, 0.7);
        let half = resize_boxes_per_category(std::slice::from_ref(&d), &one("vehicle", 0.5)).unwrap();
        let back = resize_boxes_per_category(&half, &one("vehicle", 2.0)).unwrap();
        assert_eq!(back, vec![d.clone()]);
    }

    #[test]
    fn errors() {
        let d = DetectionRecord::new("vehicle", BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), 0.7);
        assert!(resize_boxes_per_category(std::slice::from_ref(&d), &one("pedestrian", 1.0)).is_err());
        assert!(resize_boxes_per_category(&[d], &one("vehicle", 0.0)).is_err());
    }
}
