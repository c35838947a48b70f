use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::Frame;
use crate::error::{Error, Result};

/// Default IoU threshold for fusing predictions.
pub const DEFAULT_NMS_IOU: f64 = 0.25;

/// Axis-aligned box with full extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub class_id: usize,
    #[serde(default = "one")]
    pub score: f64,
}

fn one() -> f64 {
    1.0
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], class_id: usize, score: f64) -> Self {
        Self { center, size, class_id, score }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.size.iter().any(|s| !(*s > 0.0 && s.is_finite())) || self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation(format!("degenerate box {self:?}")));
        }
        if self.class_id >= num_classes {
            return Err(Error::Validation(format!("class id {} outside [0,{num_classes})", self.class_id)));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Validation(format!("score {} outside [0,1]", self.score)));
        }
        Ok(())
    }

    pub fn min_corner(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.center[a] - 0.5 * self.size[a])
    }

    pub fn max_corner(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.center[a] + 0.5 * self.size[a])
    }

    /// Volume from the corner extents, consistent with the IoU intersection.
    pub fn volume(&self) -> f64 {
        let (lo, hi) = (self.min_corner(), self.max_corner());
        (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2])
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| (p[a] - self.center[a]).abs() <= 0.5 * self.size[a])
    }
}

/// Intersection over union of two axis-aligned boxes.
pub fn box_iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let mut inter = 1.0;
    for k in 0..3 {
        let lo = (a.center[k] - 0.5 * a.size[k]).max(b.center[k] - 0.5 * b.size[k]);
        let hi = (a.center[k] + 0.5 * a.size[k]).min(b.center[k] + 0.5 * b.size[k]);
        if hi <= lo {
            return 0.0;
        }
        inter *= hi - lo;
    }
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Per-class greedy suppression in descending score order.
///
/// A box is dropped when its IoU with an already kept box of the same class
/// exceeds `iou_threshold`. Equal scores keep the lower index first. The kept
/// indices are returned in selection order.
pub fn nms_3d(boxes: &[Box3D], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| match boxes[j].score.total_cmp(&boxes[i].score) {
        Ordering::Equal => i.cmp(&j),
        o => o,
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let b = &boxes[i];
        let suppressed = kept
            .iter()
            .any(|&k| boxes[k].class_id == b.class_id && box_iou_3d(&boxes[k], b) > iou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

/// Ground-truth boxes whose centers project inside the frame's raster.
pub fn boxes_in_view(gt: &[Box3D], frame: &Frame) -> Vec<Box3D> {
    gt.iter()
        .filter(|b| {
            let pc = frame.pose.apply_inverse(b.center);
            match frame.intrinsics.project(pc) {
                Some((u, v, _)) => {
                    u >= 0.0 && u < frame.intrinsics.width as f64 && v >= 0.0 && v < frame.intrinsics.height as f64
                }
                None => false,
            }
        })
        .copied()
        .collect()
}
