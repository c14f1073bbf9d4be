use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::datamodel::{Mask, SparseDepthMap};
use crate::error::{Error, Result};

/// Points closer than this (metres) are dropped before projection.
pub const NEAR_PLANE: f64 = 0.1;

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
        let cam = CameraIntrinsics { fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Pixel `(row, col)` hit by a camera-frame point, if in front of the
    /// near plane and inside the image. Pixel centres sit on integers.
    pub fn project(&self, p: [f64; 3]) -> Option<(usize, usize)> {
        let [x, y, z] = p;
        if z <= NEAR_PLANE {
            return None;
        }
        let u = (self.fx * x / z + self.cx).round();
        let v = (self.fy * y / z + self.cy).round();
        let inside = u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64;
        inside.then_some((v as usize, u as usize))
    }

    /// Unnormalised ray through a pixel centre, with unit z component.
    pub fn ray(&self, row: usize, col: usize) -> [f64; 3] {
        [(col as f64 - self.cx) / self.fx, (row as f64 - self.cy) / self.fy, 1.0]
    }
}

/// Camera-frame points (x right, y down, z forward), metres.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("point {p:?}")));
        }
        Ok(PointCloud { points })
    }

    pub fn from_array(a: ArrayView2<f64>) -> Result<Self> {
        if a.ncols() != 3 {
            return Err(Error::ShapeMismatch(format!("point array has {} columns", a.ncols())));
        }
        Self::new(a.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect())
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub depth: SparseDepthMap,
    /// Points behind the near plane or outside the image.
    pub dropped: usize,
}

/// Z-buffered pinhole projection: each pixel keeps the nearest point.
pub fn project_points(cloud: &PointCloud, cam: &CameraIntrinsics) -> Projection {
    let (h, w) = (cam.height, cam.width);
    let mut best = Array2::<f64>::from_elem((h, w), f64::INFINITY);
    let mut dropped = 0;
    for &p in cloud.points() {
        match cam.project(p) {
            Some(px) => {
                if p[2] < best[px] {
                    best[px] = p[2];
                }
            }
            None => dropped += 1,
        }
    }
    let mask = Mask::from_fn(h, w, |i, j| best[[i, j]].is_finite());
    let depth = best.mapv(|z| if z.is_finite() { z as f32 } else { 0.0 });
    Projection { depth: SparseDepthMap::from_parts_unchecked(depth, mask), dropped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(200.0, 200.0, 128.0, 128.0, 256, 256).unwrap()
    }

    #[test]
    fn principal_ray_point() {
        let p = project_points(&PointCloud::new(vec![[0.0, 0.0, 10.0]]).unwrap(), &cam());
        assert_eq!(p.depth.depth()[[128, 128]], 10.0);
        assert_eq!(p.depth.mask().count(), 1);
        assert_eq!(p.dropped, 0);
        p.depth.validate().unwrap();
    }

    #[test]
    fn empty_cloud() {
        let p = project_points(&PointCloud::default(), &cam());
        assert!(p.depth.depth().iter().all(|&v| v == 0.0));
        assert_eq!(p.depth.mask().count(), 0);
    }

    #[test]
    fn nearest_point_wins() {
        let pts = vec![[0.5, -0.5, 9.0], [0.5 * 5.0 / 9.0, -0.5 * 5.0 / 9.0, 5.0]];
        let c = cam();
        assert_eq!(c.project(pts[0]), c.project(pts[1]));
        let p = project_points(&PointCloud::new(pts).unwrap(), &c);
        let (i, j) = c.project([0.5, -0.5, 9.0]).unwrap();
        assert_eq!(p.depth.depth()[[i, j]], 5.0);
        assert_eq!(p.depth.mask().count(), 1);
    }

    #[test]
    fn drops_are_counted() {
        let pts = vec![[0.0, 0.0, 0.05], [0.0, 0.0, -3.0], [100.0, 0.0, 1.0], [0.0, 0.0, 2.0]];
        let p = project_points(&PointCloud::new(pts).unwrap(), &cam());
        assert_eq!(p.dropped, 3);
        assert_eq!(p.depth.mask().count(), 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 1.0]]).is_err());
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
    }

    fn cloud_strategy() -> impl Strategy<Value = Vec<[f64; 3]>> {
        prop::collection::vec((-20.0..20.0f64, -10.0..10.0f64, 0.0..60.0f64).prop_map(|(x, y, z)| [x, y, z]), 0..200)
    }

    proptest! {
        #[test]
        fn permutation_invariant(pts in cloud_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = pts.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = project_points(&PointCloud::new(pts).unwrap(), &cam());
            let b = project_points(&PointCloud::new(shuffled).unwrap(), &cam());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn depth_scales_with_points(pts in cloud_strategy()) {
            let scaled: Vec<[f64; 3]> = pts.iter().map(|p| [2.0 * p[0], 2.0 * p[1], 2.0 * p[2]]).collect();
            // only points that survive the near plane at both scales
            let keep: Vec<[f64; 3]> = pts.into_iter().filter(|p| p[2] > NEAR_PLANE).collect();
            let scaled: Vec<[f64; 3]> = scaled.into_iter().filter(|p| p[2] > 2.0 * NEAR_PLANE).collect();
            let a = project_points(&PointCloud::new(keep).unwrap(), &cam());
            let b = project_points(&PointCloud::new(scaled).unwrap(), &cam());
            prop_assert_eq!(a.depth.mask(), b.depth.mask());
            prop_assert_eq!(a.depth.depth().mapv(|v| 2.0 * v), b.depth.depth().clone());
        }
    }
}
