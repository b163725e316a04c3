//! Geometry mapping between the two views. Depth views share pixel geometry with
//! the RGB view; mirrored views flip boxes horizontally.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Identity,
    HorizontalMirror,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewTransform {
    pub kind: TransformKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_width: Option<f64>,
}

impl ViewTransform {
    pub const IDENTITY: ViewTransform = ViewTransform {
        kind: TransformKind::Identity,
        image_width: None,
    };

    pub fn mirror(image_width: f64) -> Self {
        ViewTransform {
            kind: TransformKind::HorizontalMirror,
            image_width: Some(image_width),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.image_width) {
            (TransformKind::HorizontalMirror, None) => Err(Error::Config(
                "horizontal_mirror transform requires image_width".into(),
            )),
            (_, Some(w)) if !(w > 0.0) => {
                Err(Error::Config(format!("image_width must be positive, got {w}")))
            }
            _ => Ok(()),
        }
    }

    /// Maps a box into the other view's frame. The transform is an involution, so the
    /// same call maps view 2 back into view 1.
    pub fn apply(&self, b: &BoundingBox) -> Result<BoundingBox> {
        match self.kind {
            TransformKind::Identity => Ok(*b),
            TransformKind::HorizontalMirror => {
                let w = self.image_width.ok_or_else(|| {
                    Error::Config("horizontal_mirror transform requires image_width".into())
                })?;
                Ok(BoundingBox {
                    x1: w - b.x2,
                    y1: b.y1,
                    x2: w - b.x1,
                    y2: b.y2,
                })
            }
        }
    }
}

impl Default for ViewTransform {
    fn default() -> Self {
        ViewTransform::IDENTITY
    }
}

pub fn transform_box(b: &BoundingBox, t: &ViewTransform) -> Result<BoundingBox> {
    t.apply(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn identity_and_mirror_examples() {
        let b = bx(10.0, 20.0, 110.0, 220.0);
        assert_eq!(transform_box(&b, &ViewTransform::IDENTITY).unwrap(), b);
        let m = ViewTransform::mirror(1240.0);
        let once = transform_box(&b, &m).unwrap();
        assert_eq!(once, bx(1130.0, 20.0, 1230.0, 220.0));
        assert_eq!(transform_box(&once, &m).unwrap(), b);
    }

    #[test]
    fn mirror_without_width_fails() {
        let t = ViewTransform {
            kind: TransformKind::HorizontalMirror,
            image_width: None,
        };
        assert!(t.validate().is_err());
        assert!(transform_box(&bx(0.0, 0.0, 1.0, 1.0), &t).is_err());
    }

    #[test]
    fn serde_shape() {
        let t: ViewTransform =
            serde_json::from_str(r#"{"kind":"horizontal_mirror","image_width":1240}"#).unwrap();
        assert_eq!(t, ViewTransform::mirror(1240.0));
        assert_eq!(
            serde_json::to_string(&ViewTransform::IDENTITY).unwrap(),
            r#"{"kind":"identity"}"#
        );
    }

    proptest! {
        #[test]
        fn transform_is_an_involution(
            x1 in 0i32..1000, y1 in 0i32..300, w in 1i32..200, h in 1i32..70, mirror in any::<bool>()
        ) {
            // integer-valued coordinates keep W - (W - x) exact
            let b = bx(x1 as f64, y1 as f64, (x1 + w) as f64, (y1 + h) as f64);
            let t = if mirror { ViewTransform::mirror(1240.0) } else { ViewTransform::IDENTITY };
            let back = t.apply(&t.apply(&b).unwrap()).unwrap();
            prop_assert_eq!(back, b);
        }
    }
}
