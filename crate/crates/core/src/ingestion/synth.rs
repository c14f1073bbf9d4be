use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::camera::CameraIntrinsics;
use super::layout::Layout;
use super::{Sample, SampleMeta};
use crate::datamodel::{Mask, SparseDepthMap};
use crate::error::{Error, Result};

pub const DEFAULT_SPARSITY: f64 = 0.07;
pub const CAMERA_HEIGHT: f64 = 1.6;
/// Distance of the backdrop plane behind everything; the sky is painted on it.
pub const BACKDROP_Z: f64 = 200.0;

const GROUND_RGB: [f32; 3] = [0.33, 0.32, 0.30];
const SKY_TOP: [f32; 3] = [0.30, 0.50, 0.85];
const SKY_HORIZON: [f32; 3] = [0.75, 0.82, 0.92];

pub const LABEL_SKY: u16 = 0;
pub const LABEL_GROUND: u16 = 1;

/// Axis-aligned box standing on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cuboid {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub color: [f32; 3],
}

impl Cuboid {
    /// Entry distance along a ray from the origin and the axis of the entry face.
    fn hit(&self, d: [f64; 3]) -> Option<(f64, usize)> {
        let mut t_in = f64::NEG_INFINITY;
        let mut t_out = f64::INFINITY;
        let mut axis = 0;
        for a in 0..3 {
            if d[a] == 0.0 {
                if self.min[a] > 0.0 || self.max[a] < 0.0 {
                    return None;
                }
                continue;
            }
            let (t0, t1) = {
                let (p, q) = (self.min[a] / d[a], self.max[a] / d[a]);
                if p < q { (p, q) } else { (q, p) }
            };
            if t0 > t_in {
                t_in = t0;
                axis = a;
            }
            t_out = t_out.min(t1);
        }
        (t_in <= t_out && t_in > 0.0).then_some((t_in, axis))
    }
}

/// Rendered scene before sparsification.
#[derive(Debug, Clone)]
pub struct Scene {
    pub rgb: Array3<f32>,
    /// Exact z of the visible surface at every pixel centre.
    pub depth: Array2<f32>,
    /// Per-face region labels: sky, ground, then three faces per cuboid.
    pub labels: Array2<u16>,
    pub cuboids: Vec<Cuboid>,
    pub intrinsics: CameraIntrinsics,
}

/// Cuboid index owning a label, if any.
pub fn cuboid_of(label: u16) -> Option<usize> {
    (label >= 2).then(|| (label as usize - 2) / 3)
}

pub fn intrinsics_for(layout: Layout) -> CameraIntrinsics {
    let f = layout.width as f64 / 2.0;
    CameraIntrinsics {
        fx: f,
        fy: f,
        cx: layout.width as f64 / 2.0,
        cy: 0.45 * layout.height as f64,
        width: layout.width,
        height: layout.height,
    }
}

fn luma(c: [f32; 3]) -> f32 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn random_cuboids(rng: &mut ChaCha8Rng) -> Vec<Cuboid> {
    let n = rng.gen_range(2..=6);
    (0..n)
        .map(|_| {
            let cx = rng.gen_range(-14.0..14.0);
            let half_w = rng.gen_range(1.0..4.5);
            let z0 = rng.gen_range(5.0..45.0);
            let len = rng.gen_range(2.0..12.0);
            let height = rng.gen_range(1.4..12.0);
            let color = loop {
                let c = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
                if (luma(c) - luma(GROUND_RGB)).abs() >= 0.15 {
                    break c;
                }
            };
            Cuboid {
                min: [cx - half_w, CAMERA_HEIGHT - height, z0],
                max: [cx + half_w, CAMERA_HEIGHT, z0 + len],
                color,
            }
        })
        .collect()
}

fn shade(c: [f32; 3], axis: usize) -> [f32; 3] {
    let k = match axis {
        0 => 0.7,
        1 => 1.15,
        _ => 1.0,
    };
    c.map(|v| (v * k).min(1.0))
}

/// Ray-casts a street scene: ground plane, sky backdrop and 2–6 cuboids.
pub fn render_scene(layout: Layout, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cuboids = random_cuboids(&mut rng);
    let cam = intrinsics_for(layout);
    let (h, w) = (layout.height, layout.width);
    let horizon = cam.cy + cam.fy * CAMERA_HEIGHT / BACKDROP_Z;
    let mut rgb = Array3::zeros((3, h, w));
    let mut depth = Array2::zeros((h, w));
    let mut labels = Array2::zeros((h, w));
    for i in 0..h {
        let sky_t = (i as f64 / horizon).clamp(0.0, 1.0) as f32;
        let sky: [f32; 3] = std::array::from_fn(|c| SKY_TOP[c] + (SKY_HORIZON[c] - SKY_TOP[c]) * sky_t);
        for j in 0..w {
            let d = cam.ray(i, j);
            let mut best = (BACKDROP_Z, LABEL_SKY, sky);
            if d[1] > 0.0 {
                let t = CAMERA_HEIGHT / d[1];
                if t < best.0 {
                    best = (t, LABEL_GROUND, GROUND_RGB);
                }
            }
            for (b, cub) in cuboids.iter().enumerate() {
                if let Some((t, axis)) = cub.hit(d) {
                    if t < best.0 {
                        best = (t, (2 + 3 * b + axis) as u16, shade(cub.color, axis));
                    }
                }
            }
            depth[[i, j]] = best.0 as f32;
            labels[[i, j]] = best.1;
            for c in 0..3 {
                rgb[[c, i, j]] = best.2[c];
            }
        }
    }
    Scene { rgb, depth, labels, cuboids, intrinsics: cam }
}

/// Pixels with a 4-neighbour of a different label.
pub fn label_boundaries(labels: &Array2<u16>) -> Mask {
    let (h, w) = labels.dim();
    Mask::from_fn(h, w, |i, j| {
        let l = labels[[i, j]];
        (i > 0 && labels[[i - 1, j]] != l)
            || (i + 1 < h && labels[[i + 1, j]] != l)
            || (j > 0 && labels[[i, j - 1]] != l)
            || (j + 1 < w && labels[[i, j + 1]] != l)
    })
}

/// Keeps each dense depth pixel independently with probability `sparsity`.
/// If a side of the layout ends up empty, its first dense pixel is kept so
/// the sample always carries depth both inside and outside the known region.
pub fn sparsify(dense: &Array2<f32>, known: &Mask, sparsity: f64, seed: u64) -> Result<SparseDepthMap> {
    if !(sparsity > 0.0 && sparsity <= 1.0) {
        return Err(Error::InvalidInput(format!("sparsity {sparsity} outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (h, w) = dense.dim();
    let mut keep = Array2::<u8>::zeros((h, w));
    for ((i, j), &z) in dense.indexed_iter() {
        let draw = rng.gen::<f64>() < sparsity;
        keep[[i, j]] = (draw && z > 0.0) as u8;
    }
    for side in [true, false] {
        let any = keep.indexed_iter().any(|((i, j), &k)| k == 1 && known.get(i, j) == side);
        if !any {
            if let Some(((i, j), _)) = dense.indexed_iter().find(|&((i, j), &z)| z > 0.0 && known.get(i, j) == side) {
                keep[[i, j]] = 1;
            }
        }
    }
    let mask = Mask::from_array(keep)?;
    let depth = dense * &mask.to_real::<f32>();
    SparseDepthMap::new(depth, mask)
}

/// Synthetic sample on an arbitrary layout.
pub fn synth_scene_with(layout: Layout, seed: u64, sparsity: f64) -> Result<Sample> {
    let scene = render_scene(layout, seed);
    let input_rgb = layout.apply(&scene.rgb)?;
    let depth = sparsify(&scene.depth, input_rgb.mask(), sparsity, seed)?;
    let sample = Sample {
        full_rgb: scene.rgb,
        input_rgb,
        depth,
        meta: SampleMeta { seed, sparsity, intrinsics: scene.intrinsics },
    };
    sample.validate()?;
    Ok(sample)
}

/// Synthetic 256×512 sample.
pub fn synth_scene(seed: u64, sparsity: f64) -> Result<Sample> {
    synth_scene_with(Layout::STANDARD, seed, sparsity)
}
