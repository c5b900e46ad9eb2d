//! Axis-aligned box arithmetic: areas, intersections, IoU, feathering.
//!
//! Boxes are closed rectangles in continuous pixel coordinates, stored as
//! `[x, y, w, h]` with `(x, y)` the top-left corner. Boxes that share only
//! an edge have intersection area 0.

use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeTuple;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An axis-aligned bounding box in `[x, y, width, height]` form.
///
/// Serialized as a flat 4-element JSON array, matching the COCO `bbox` field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    /// Left edge in pixels.
    pub x: f64,
    /// Top edge in pixels.
    pub y: f64,
    /// Width in pixels; must be positive for pipeline stages.
    pub w: f64,
    /// Height in pixels; must be positive for pipeline stages.
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Right edge (`x + w`).
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    /// Bottom edge (`y + h`).
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// True when width and height are positive and all coordinates finite.
    pub fn is_valid(&self) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
    }

    /// Intersection area with `other`; 0 for disjoint or edge-touching boxes.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let ix = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let iy = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        ix * iy
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut tup = serializer.serialize_tuple(4)?;
        tup.serialize_element(&self.x)?;
        tup.serialize_element(&self.y)?;
        tup.serialize_element(&self.w)?;
        tup.serialize_element(&self.h)?;
        tup.end()
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct BBoxVisitor;
        impl<'de> Visitor<'de> for BBoxVisitor {
            type Value = BBox;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a [x, y, width, height] array")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<BBox, A::Error> {
                let x = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::invalid_length(0, &self))?;
                let y = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::invalid_length(1, &self))?;
                let w = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::invalid_length(2, &self))?;
                let h = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::invalid_length(3, &self))?;
                if seq.next_element::<f64>()?.is_some() {
                    return Err(serde::de::Error::invalid_length(5, &self));
                }
                Ok(BBox { x, y, w, h })
            }
        }
        deserializer.deserialize_seq(BBoxVisitor)
    }
}

/// Intersection over union of two boxes. Total on valid boxes; 0 when
/// disjoint; exactly 1 for identical boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter / union
}

/// Expand a box about its center: width scales by `1 + fx`, height by `1 + fy`.
///
/// No clamping is applied; feathered boxes may extend into negative
/// coordinates when they cross the page edge.
pub fn feather(b: &BBox, fx: f64, fy: f64) -> BBox {
    let nw = b.w * (1.0 + fx);
    let nh = b.h * (1.0 + fy);
    BBox {
        x: b.x - (nw - b.w) / 2.0,
        y: b.y - (nh - b.h) / 2.0,
        w: nw,
        h: nh,
    }
}
