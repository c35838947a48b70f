use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cloud::PointCloud;
use crate::error::{Error, Result};

/// Tolerance on `RᵀR = I` and `det R = 1`.
pub const POSE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Validation(format!("focal lengths must be positive: {self:?}")));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::Validation(format!("principal point outside raster: {self:?}")));
        }
        Ok(())
    }

    /// Pixel `(u, v)` at depth `d` to a camera-frame point.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, d: f64) -> [f64; 3] {
        [(u - self.cx) * d / self.fx, (v - self.cy) * d / self.fy, d]
    }

    /// Camera-frame point to `(u, v, z)`; `None` when `z ≤ 0`.
    #[inline]
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64, f64)> {
        if p[2] <= 0.0 {
            return None;
        }
        Some((self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy, p[2]))
    }

    /// Intrinsics of the same camera resampled to another raster size.
    pub fn rescaled(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }
}

/// Camera-to-world rigid transform `p_w = R p_c + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > POSE_TOLERANCE || (det - 1.0).abs() > POSE_TOLERANCE {
            return Err(Error::Validation(format!(
                "rotation is not orthonormal: |RᵀR − I|max = {ortho:.3e}, det = {det:.12}"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::from(t) }
    }

    /// Rotation about `axis` by `angle` radians followed by translation `t`.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64, t: [f64; 3]) -> Self {
        let axis = nalgebra::Unit::new_normalize(Vector3::from(axis));
        let r = Rotation3::from_axis_angle(&axis, angle);
        Self { rotation: *r.matrix(), translation: Vector3::from(t) }
    }

    /// Row-major rotation entries and translation, as stored on disk.
    pub fn from_parts(r: [f64; 9], t: [f64; 3]) -> Result<Self> {
        Self::new(Matrix3::from_row_slice(&r), Vector3::from(t))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]]
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.rotation * Vector3::from(p) + self.translation;
        [q.x, q.y, q.z]
    }

    /// World-to-camera direction of this pose.
    #[inline]
    pub fn apply_inverse(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.rotation.transpose() * (Vector3::from(p) - self.translation);
        [q.x, q.y, q.z]
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }
}

/// Depth raster in meters, row-major, 0 marking invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dim("DepthMap::new", format!("{width}x{height} vs {}", data.len())));
        }
        if data.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::Validation("depth values must be finite and non-negative".into()));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0).count()
    }

    /// Nearest-neighbor resampling; never interpolates across depth edges.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            let sv = ((v as f64 + 0.5) * self.height as f64 / height as f64).floor() as usize;
            let sv = sv.min(self.height - 1);
            for u in 0..width {
                let su = ((u as f64 + 0.5) * self.width as f64 / width as f64).floor() as usize;
                data.push(self.at(su.min(self.width - 1), sv));
            }
        }
        Self { width, height, data }
    }
}

/// Samples `k` camera-frame points from the valid pixels of `depth`.
///
/// Pixels are drawn uniformly without replacement. When fewer than `k` pixels
/// are valid, every valid pixel is used once and the remainder is drawn with
/// replacement so the cloud always has exactly `k` points.
pub fn unproject_depth(
    depth: &DepthMap,
    intr: &CameraIntrinsics,
    k: usize,
    seed: u64,
) -> Result<PointCloud> {
    if depth.width != intr.width || depth.height != intr.height {
        return Err(Error::dim(
            "unproject_depth",
            format!("raster {}x{} vs intrinsics {}x{}", depth.width, depth.height, intr.width, intr.height),
        ));
    }
    let valid: Vec<usize> = (0..depth.data.len()).filter(|&i| depth.data[i] > 0.0).collect();
    if valid.is_empty() {
        return Err(Error::EmptyView);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = if valid.len() >= k {
        let mut p: Vec<usize> = index::sample(&mut rng, valid.len(), k).into_iter().collect();
        p.sort_unstable();
        p
    } else {
        let mut p: Vec<usize> = (0..valid.len()).collect();
        p.extend((valid.len()..k).map(|_| rng.random_range(0..valid.len())));
        p
    };
    let coords = picks
        .drain(..)
        .map(|i| {
            let pix = valid[i];
            let (u, v) = (pix % depth.width, pix / depth.width);
            intr.unproject(u as f64, v as f64, depth.data[pix])
        })
        .collect();
    Ok(PointCloud::new(coords))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(3.0, 3.0, 4.0, 3.0, 8, 6).unwrap()
    }

    #[test]
    fn principal_point_and_offset_pixel() {
        let k = CameraIntrinsics::new(3.0, 2.0, 2.0, 1.0, 6, 4).unwrap();
        assert_eq!(k.unproject(2.0, 1.0, 2.0), [0.0, 0.0, 2.0]);
        assert_eq!(k.unproject(4.0, 1.0, 3.0), [2.0, 0.0, 3.0]);
    }

    #[test]
    fn projection_inverts_unprojection() {
        let k = intr();
        for (u, v, d) in [(0.0, 0.0, 1.0), (7.0, 5.0, 3.7), (4.5, 1.25, 0.3)] {
            let p = k.unproject(u, v, d);
            let (pu, pv, pz) = k.project(p).unwrap();
            assert!((pu - u).abs() < 1e-9 && (pv - v).abs() < 1e-9 && (pz - d).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_counts() {
        let k = intr();
        let mut data = vec![0.0; 48];
        for d in data.iter_mut().take(30) {
            *d = 2.0;
        }
        let depth = DepthMap::new(8, 6, data).unwrap();
        assert_eq!(unproject_depth(&depth, &k, 10, 1).unwrap().len(), 10);
        // more points than valid pixels: resampled
        let pc = unproject_depth(&depth, &k, 50, 1).unwrap();
        assert_eq!(pc.len(), 50);
        assert!(pc.coords().iter().all(|p| p[2] == 2.0));
        let empty = DepthMap::new(8, 6, vec![0.0; 48]).unwrap();
        assert!(matches!(unproject_depth(&empty, &k, 4, 0), Err(Error::EmptyView)));
    }

    #[test]
    fn invalid_rotation_reports_deviation() {
        let mut r = Matrix3::identity();
        r[(2, 2)] = -1.0;
        let err = Pose::new(r, Vector3::zeros()).unwrap_err();
        assert!(err.to_string().contains("det"));
        assert!(CameraIntrinsics::new(-1.0, 1.0, 0.0, 0.0, 2, 2).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 2.0, 0.0, 2, 2).is_err());
    }

    #[test]
    fn nearest_resize_keeps_values() {
        let d = DepthMap::new(4, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let r = d.resize_nearest(2, 1);
        assert_eq!(r.data, vec![6.0, 8.0]);
        let up = d.resize_nearest(8, 4);
        assert!(up.data.iter().all(|v| d.data.contains(v)));
    }
}
