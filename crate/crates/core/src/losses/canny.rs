//! Canny edge detection on [0, 1] images.
//!
//! Pipeline: luma → 5×5 Gaussian (σ = 1.4) → Sobel → non-maximum
//! suppression along the gradient direction quantised to 45° → double
//! threshold with 8-connected hysteresis. Borders replicate.

use std::collections::VecDeque;

use ndarray::{Array2, Array3};

use crate::datamodel::Mask;
use crate::error::{Error, Result};
use crate::real::Real;

pub const CANNY_SIGMA: f64 = 1.4;
pub const DEFAULT_LOW: f64 = 0.1;
pub const DEFAULT_HIGH: f64 = 0.2;

/// Binary edge map.
pub type EdgeMap = Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    Replicate,
    Zero,
}

pub fn gaussian_kernel(radius: usize, sigma: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable 2-D correlation with a symmetric 1-D kernel.
pub fn separable_blur<T: Real>(img: &Array2<T>, kernel: &[f64], border: Border) -> Array2<T> {
    let (h, w) = img.dim();
    let r = (kernel.len() / 2) as isize;
    let k: Vec<T> = kernel.iter().map(|&v| T::of(v)).collect();
    let fetch = |a: &Array2<T>, i: isize, j: isize| -> T {
        match border {
            Border::Replicate => a[[i.clamp(0, h as isize - 1) as usize, j.clamp(0, w as isize - 1) as usize]],
            Border::Zero => {
                if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
                    T::zero()
                } else {
                    a[[i as usize, j as usize]]
                }
            }
        }
    };
    let tmp = Array2::from_shape_fn((h, w), |(i, j)| {
        k.iter()
            .enumerate()
            .fold(T::zero(), |acc, (t, &kv)| acc + kv * fetch(img, i as isize, j as isize + t as isize - r))
    });
    Array2::from_shape_fn((h, w), |(i, j)| {
        k.iter()
            .enumerate()
            .fold(T::zero(), |acc, (t, &kv)| acc + kv * fetch(&tmp, i as isize + t as isize - r, j as isize))
    })
}

pub fn luma<T: Real>(img: &Array3<T>) -> Array2<T> {
    let (_, h, w) = img.dim();
    let (wr, wg, wb) = (T::of(0.299), T::of(0.587), T::of(0.114));
    Array2::from_shape_fn((h, w), |(i, j)| wr * img[[0, i, j]] + wg * img[[1, i, j]] + wb * img[[2, i, j]])
}

/// Sobel gradients with replicated borders.
pub fn sobel<T: Real>(img: &Array2<T>) -> (Array2<T>, Array2<T>) {
    let (h, w) = img.dim();
    let at = |i: isize, j: isize| img[[i.clamp(0, h as isize - 1) as usize, j.clamp(0, w as isize - 1) as usize]];
    let two = T::of(2.0);
    let gx = Array2::from_shape_fn((h, w), |(i, j)| {
        let (i, j) = (i as isize, j as isize);
        (at(i - 1, j + 1) + two * at(i, j + 1) + at(i + 1, j + 1))
            - (at(i - 1, j - 1) + two * at(i, j - 1) + at(i + 1, j - 1))
    });
    let gy = Array2::from_shape_fn((h, w), |(i, j)| {
        let (i, j) = (i as isize, j as isize);
        (at(i + 1, j - 1) + two * at(i + 1, j) + at(i + 1, j + 1))
            - (at(i - 1, j - 1) + two * at(i - 1, j) + at(i - 1, j + 1))
    });
    (gx, gy)
}

/// Edge map of a 3-channel image with luma thresholds `low < high`.
pub fn canny_edges<T: Real>(img: &Array3<T>, low: f64, high: f64) -> Result<EdgeMap> {
    if !(low >= 0.0 && low < high) {
        return Err(Error::InvalidInput(format!("canny thresholds need 0 <= low < high, got {low}, {high}")));
    }
    if img.dim().0 != 3 {
        return Err(Error::ShapeMismatch(format!("canny expects 3 channels, got {}", img.dim().0)));
    }
    let gray = luma(img);
    let blurred = separable_blur(&gray, &gaussian_kernel(2, CANNY_SIGMA), Border::Replicate);
    let (gx, gy) = sobel(&blurred);
    let (h, w) = gray.dim();
    let mag = Array2::from_shape_fn((h, w), |(i, j)| (gx[[i, j]] * gx[[i, j]] + gy[[i, j]] * gy[[i, j]]).sqrt().as_f64());

    let mut thin = Array2::<f64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let m = mag[[i, j]];
            if m <= 0.0 {
                continue;
            }
            let angle = gy[[i, j]].as_f64().atan2(gx[[i, j]].as_f64()).to_degrees().rem_euclid(180.0);
            let (di, dj): (isize, isize) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let get = |ii: isize, jj: isize| {
                if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                    0.0
                } else {
                    mag[[ii as usize, jj as usize]]
                }
            };
            let (ii, jj) = (i as isize, j as isize);
            let behind = get(ii - di, jj - dj);
            let ahead = get(ii + di, jj + dj);
            // ties resolve toward the +direction neighbour so plateaus thin to one pixel
            if m >= behind && m > ahead {
                thin[[i, j]] = m;
            }
        }
    }

    let mut edges = Array2::<u8>::zeros((h, w));
    let mut queue = VecDeque::new();
    for ((i, j), &m) in thin.indexed_iter() {
        if m >= high {
            edges[[i, j]] = 1;
            queue.push_back((i, j));
        }
    }
    while let Some((i, j)) = queue.pop_front() {
        for di in -1isize..=1 {
            for dj in -1isize..=1 {
                let (ii, jj) = (i as isize + di, j as isize + dj);
                if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                    continue;
                }
                let (ii, jj) = (ii as usize, jj as usize);
                if edges[[ii, jj]] == 0 && thin[[ii, jj]] >= low {
                    edges[[ii, jj]] = 1;
                    queue.push_back((ii, jj));
                }
            }
        }
    }
    Mask::from_array(edges)
}
