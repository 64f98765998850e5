//! Patch boxes, joint normalization and visibility.
//!
//! Coordinates are continuous (sub-pixel) throughout; pixel indices only
//! appear at resampling and heatmap rasterization. Image origin is the
//! top-left corner, x grows rightward, y downward.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("patch dimensions must be positive and finite, got {w}x{h}")]
    InvalidPatch { w: f64, h: f64 },
    #[error("joint coordinates must be finite")]
    NonFiniteJoint,
    #[error("patches do not overlap with positive area")]
    EmptyIntersection,
}

/// A 2D point in image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// A human pose: the 2D locations of all `L` joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    joints: Vec<Point>,
}

impl Pose {
    pub fn new(joints: Vec<Point>) -> Result<Self, GeometryError> {
        if joints.iter().any(|j| !j.x.is_finite() || !j.y.is_finite()) {
            return Err(GeometryError::NonFiniteJoint);
        }
        Ok(Pose { joints })
    }

    pub fn joints(&self) -> &[Point] {
        &self.joints
    }

    pub fn joint(&self, i: usize) -> Point {
        self.joints[i]
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }
}

/// An axis-aligned patch given by width, height and center, all in image
/// pixels. Width and height are strictly positive; the box may extend
/// beyond image bounds (resampling edge-replicates).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    w: f64,
    h: f64,
    cx: f64,
    cy: f64,
}

impl Patch {
    pub fn new(w: f64, h: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite() && cx.is_finite() && cy.is_finite())
        {
            return Err(GeometryError::InvalidPatch { w, h });
        }
        Ok(Patch { w, h, cx, cy })
    }

    pub fn from_bounds(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self, GeometryError> {
        Patch::new(
            right - left,
            bottom - top,
            (left + right) / 2.0,
            (top + bottom) / 2.0,
        )
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn is_square(&self) -> bool {
        self.w == self.h
    }

    /// Closed-box membership, consistent with the inclusive visibility rule.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.left() && p.x <= self.right() && p.y >= self.top() && p.y <= self.bottom()
    }
}

/// Joint coordinates relative to a patch: offsets from the patch center
/// divided by the patch width and height. Dimensionless; a joint is inside
/// the patch exactly when both components lie in [-0.5, 0.5].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedJoint {
    pub x: f64,
    pub y: f64,
}

impl NormalizedJoint {
    pub fn new(x: f64, y: f64) -> Self {
        NormalizedJoint { x, y }
    }

    pub fn is_visible(&self) -> bool {
        self.x.abs() <= 0.5 && self.y.abs() <= 0.5
    }

    pub fn norm_sq(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }
}

/// Per-joint visibility flags for one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityVector(Vec<bool>);

impl VisibilityVector {
    pub fn visible(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|v| **v).count()
    }

    pub fn all_visible(&self) -> bool {
        self.0.iter().all(|v| *v)
    }

    pub fn any_visible(&self) -> bool {
        self.0.iter().any(|v| *v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Joint coordinates relative to a patch: ((x - x_c)/w, (y - y_c)/h).
pub fn normalize_joint(joint: Point, patch: &Patch) -> NormalizedJoint {
    NormalizedJoint::new(
        (joint.x - patch.cx) / patch.w,
        (joint.y - patch.cy) / patch.h,
    )
}

/// Exact inverse of [`normalize_joint`].
pub fn denormalize_joint(n: NormalizedJoint, patch: &Patch) -> Point {
    Point::new(n.x * patch.w + patch.cx, n.y * patch.h + patch.cy)
}

/// Visibility of every joint of `pose` in `patch`; the boundary is
/// inclusive, so a joint exactly on a patch edge counts as visible.
pub fn visibility(pose: &Pose, patch: &Patch) -> VisibilityVector {
    VisibilityVector(
        pose.joints()
            .iter()
            .map(|j| normalize_joint(*j, patch).is_visible())
            .collect(),
    )
}

/// Extend the short side of a patch to make it a square, keeping the
/// center unchanged. Idempotent; the result may exceed image bounds.
pub fn extend_to_square(patch: &Patch) -> Patch {
    let side = patch.w.max(patch.h);
    Patch {
        w: side,
        h: side,
        cx: patch.cx,
        cy: patch.cy,
    }
}

/// Crop a part patch by removing the portion located outside the body
/// patch, i.e. the intersection box of the two.
pub fn crop_to_body(part: &Patch, body: &Patch) -> Result<Patch, GeometryError> {
    let left = part.left().max(body.left());
    let right = part.right().min(body.right());
    let top = part.top().max(body.top());
    let bottom = part.bottom().min(body.bottom());
    if right <= left || bottom <= top {
        return Err(GeometryError::EmptyIntersection);
    }
    Patch::from_bounds(left, top, right, bottom)
}
