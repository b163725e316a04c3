//! Boxes, categories and detection/label records shared by every module.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Object category token, e.g. `vehicle` or `pedestrian`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Category(pub String);

impl Category {
    pub fn new(name: impl Into<String>) -> Self {
        Category(name.into())
    }

    pub fn vehicle() -> Self {
        Category::new("vehicle")
    }

    pub fn pedestrian() -> Self {
        Category::new("pedestrian")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Category {
    fn from(s: &str) -> Self {
        Category::new(s)
    }
}

pub type ImageId = String;

/// One of the two data views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum View {
    One,
    Two,
}

impl View {
    pub fn index(self) -> u8 {
        match self {
            View::One => 1,
            View::Two => 2,
        }
    }

    pub fn other(self) -> View {
        match self {
            View::One => View::Two,
            View::Two => View::One,
        }
    }

    pub fn from_index(i: u8) -> Option<View> {
        match i {
            1 => Some(View::One),
            2 => Some(View::Two),
            _ => None,
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

impl Serialize for View {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.index())
    }
}

impl<'de> Deserialize<'de> for View {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let i = u8::deserialize(d)?;
        View::from_index(i)
            .ok_or_else(|| serde::de::Error::custom(format!("view must be 1 or 2, got {i}")))
    }
}

/// Axis-aligned box in continuous pixel coordinates. Area is `(x2-x1)*(y2-y1)`
/// with no +1 pixel correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BoundingBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.x1 < self.x2) || !(self.y1 < self.y2) {
            return Err(Error::validation(
                "box",
                format!(
                    "({}, {}, {}, {}) must satisfy x1<x2 and y1<y2",
                    self.x1, self.y1, self.x2, self.y2
                ),
            ));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

// Boxes travel as `[x1, y1, x2, y2]` in every file format.
impl Serialize for BoundingBox {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.as_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x1, y1, x2, y2] = <[f64; 4]>::deserialize(d)?;
        BoundingBox::new(x1, y1, x2, y2).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub category: Category,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl DetectionRecord {
    pub fn new(category: impl Into<Category>, bbox: BoundingBox, confidence: f64) -> Self {
        DetectionRecord {
            category: category.into(),
            bbox,
            confidence,
        }
    }
}

/// Where a training label came from. Pseudo-labels remember the cycle that produced them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    Human,
    Virtual,
    Pseudo { cycle: u32 },
}

impl LabelSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            LabelSource::Human => "human",
            LabelSource::Virtual => "virtual",
            LabelSource::Pseudo { .. } => "pseudo",
        }
    }

    pub fn is_pseudo(&self) -> bool {
        matches!(self, LabelSource::Pseudo { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub category: Category,
    pub bbox: BoundingBox,
    pub source: LabelSource,
}

#[derive(Serialize, Deserialize)]
struct LabelRecordRepr {
    category: Category,
    bbox: BoundingBox,
    source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cycle: Option<u32>,
}

impl Serialize for LabelRecord {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let cycle = match self.source {
            LabelSource::Pseudo { cycle } => Some(cycle),
            _ => None,
        };
        LabelRecordRepr {
            category: self.category.clone(),
            bbox: self.bbox,
            source: self.source.as_str().to_string(),
            cycle,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabelRecord {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = LabelRecordRepr::deserialize(d)?;
        let source = match (r.source.as_str(), r.cycle) {
            ("human", _) => LabelSource::Human,
            ("virtual", _) => LabelSource::Virtual,
            ("pseudo", Some(cycle)) => LabelSource::Pseudo { cycle },
            ("pseudo", None) => {
                return Err(serde::de::Error::custom(
                    "pseudo label must carry its producing cycle",
                ))
            }
            (other, _) => {
                return Err(serde::de::Error::custom(format!(
                    "unknown label source `{other}`"
                )))
            }
        };
        Ok(LabelRecord {
            category: r.category,
            bbox: r.bbox,
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 5.0).is_err());
        assert!(BoundingBox::new(0.0, 5.0, 3.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        let b = BoundingBox::new(10.0, 20.0, 110.0, 220.0).unwrap();
        assert_eq!(b.area(), 20_000.0);
        assert_eq!(b.height(), 200.0);
    }

    #[test]
    fn pseudo_labels_need_a_cycle() {
        let bad = r#"{"category":"vehicle","bbox":[0,0,1,1],"source":"pseudo"}"#;
        assert!(serde_json::from_str::<LabelRecord>(bad).is_err());
        let good = r#"{"category":"vehicle","bbox":[0,0,1,1],"source":"pseudo","cycle":4}"#;
        let r: LabelRecord = serde_json::from_str(good).unwrap();
        assert_eq!(r.source, LabelSource::Pseudo { cycle: 4 });
    }

    #[test]
    fn view_serializes_as_index() {
        assert_eq!(serde_json::to_string(&View::Two).unwrap(), "2");
        assert!(serde_json::from_str::<View>("3").is_err());
    }
}
