//! Depth and RGB encoder branches.
//!
//! The depth branch runs partial convolutions: each window's response is
//! computed from valid pixels only and rescaled by
//! `in_bounds(window) / valid(window)`; the validity mask is carried to the
//! next level, where a pixel becomes valid once any input in its window was.
//! The RGB branch runs gated convolutions over the image concatenated with
//! the known-region mask. Both branches share one channel schedule so that
//! their pyramids pair up level by level.

use ndarray::{concatenate, Array2, Array3, ArrayView3, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{FeatureMap, Mask, MaskedRGB, SparseDepthMap};
use crate::error::{Error, Result};
use crate::nn::act::{elu, elu_backward, elu_grad_from_output, sigmoid};
use crate::nn::conv::{col2im, im2col, out_len, ConvCache};
use crate::nn::{Conv2d, Grads, ParamStore};
use crate::real::Real;

/// Per-output-pixel count of valid and in-bounds inputs over each `k×k` window.
pub fn window_counts(mask: &Mask, k: usize, stride: usize) -> (Array2<u32>, Array2<u32>) {
    let (h, w) = mask.dim();
    let (ho, wo) = (out_len(h, k, stride), out_len(w, k, stride));
    let pad = (k / 2) as isize;
    let mut valid = Array2::zeros((ho, wo));
    let mut inb = Array2::zeros((ho, wo));
    let m = mask.view();
    for oi in 0..ho {
        for oj in 0..wo {
            let (mut v, mut n) = (0u32, 0u32);
            for ki in 0..k {
                let ii = (oi * stride + ki) as isize - pad;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for kj in 0..k {
                    let jj = (oj * stride + kj) as isize - pad;
                    if jj < 0 || jj >= w as isize {
                        continue;
                    }
                    n += 1;
                    v += m[[ii as usize, jj as usize]] as u32;
                }
            }
            valid[[oi, oj]] = v;
            inb[[oi, oj]] = n;
        }
    }
    (valid, inb)
}

/// Validity-only mask update: an output is valid iff its window holds a valid input.
pub fn update_mask(mask: &Mask, k: usize, stride: usize) -> Mask {
    let (valid, _) = window_counts(mask, k, stride);
    let (h, w) = valid.dim();
    Mask::from_fn(h, w, |i, j| valid[[i, j]] > 0)
}

fn masked_input<T: Real>(f: ArrayView3<T>, m: &Mask) -> Array3<T> {
    let mr = m.to_real::<T>();
    let mut x = f.to_owned();
    for mut plane in x.axis_iter_mut(Axis(0)) {
        plane *= &mr;
    }
    x
}

/// Partial convolution with a learned kernel and bias.
#[derive(Debug, Clone)]
pub struct PartialConvLayer {
    pub conv: Conv2d,
}

#[derive(Debug, Clone)]
pub struct PartialConvCache<T> {
    conv: ConvCache<T>,
    /// `in_bounds / valid` at valid outputs, 0 elsewhere.
    scale: Array2<T>,
    in_mask: Mask,
}

impl PartialConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        ps: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        PartialConvLayer { conv: Conv2d::new(ps, name, cin, cout, k, stride, gain, true, rng) }
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        f: ArrayView3<T>,
        m: &Mask,
    ) -> Result<(Array3<T>, Mask, PartialConvCache<T>)> {
        let (c, h, w) = f.dim();
        if c != self.conv.cin {
            return Err(Error::ShapeMismatch(format!(
                "partial conv expects {} channels, got {c}",
                self.conv.cin
            )));
        }
        if m.dim() != (h, w) {
            return Err(Error::ShapeMismatch(format!("mask {:?} vs feature {h}x{w}", m.dim())));
        }
        let (k, s) = (self.conv.k, self.conv.stride);
        let x = masked_input(f, m);
        let wm = self.conv.weight_matrix(ps);
        let cols = im2col(x.view(), k, s);
        let (ho, wo) = self.conv.out_dim(h, w);
        let mut y = wm.dot(&cols).into_shape_with_order((self.conv.cout, ho, wo)).expect("contiguous");
        let (valid, inb) = window_counts(m, k, s);
        let scale = Zip::from(&valid).and(&inb).map_collect(|&v, &n| {
            if v > 0 {
                T::of(n as f64) / T::of(v as f64)
            } else {
                T::zero()
            }
        });
        let bias = self.conv.bias_vector(ps);
        for (o, mut plane) in y.axis_iter_mut(Axis(0)).enumerate() {
            let b = bias.as_ref().map_or(T::zero(), |b| b[o]);
            Zip::from(&mut plane).and(&scale).and(&valid).for_each(|y, &sc, &v| {
                *y = if v > 0 { *y * sc + b } else { T::zero() };
            });
        }
        let new_mask = Mask::from_fn(ho, wo, |i, j| valid[[i, j]] > 0);
        let cache = PartialConvCache {
            conv: ConvCache { cols, in_dim: (c, h, w) },
            scale,
            in_mask: m.clone(),
        };
        Ok((y, new_mask, cache))
    }

    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        cache: &PartialConvCache<T>,
        dy: &Array3<T>,
        grads: &mut Grads<T>,
        need_dx: bool,
    ) -> Option<Array3<T>> {
        if let Some(b) = self.conv.bias {
            let gb = grads.get_mut(b);
            for (o, plane) in dy.axis_iter(Axis(0)).enumerate() {
                let s: T = Zip::from(&plane)
                    .and(&cache.scale)
                    .fold(T::zero(), |acc, &g, &sc| if sc > T::zero() { acc + g } else { acc });
                gb[o] += s;
            }
        }
        let mut draw = dy.clone();
        for mut plane in draw.axis_iter_mut(Axis(0)) {
            plane *= &cache.scale;
        }
        // bias folded in above; run the plain conv backward without it
        let plain = Conv2d { bias: None, ..self.conv.clone() };
        let dx = plain.backward(ps, &cache.conv, &draw, grads, need_dx)?;
        Some(masked_input(dx.view(), &cache.in_mask))
    }
}

/// Applies one partial convolution, returning the features and the updated mask.
pub fn partial_conv<T: Real>(
    layer: &PartialConvLayer,
    ps: &ParamStore<T>,
    f: &FeatureMap<T>,
    m: &Mask,
) -> Result<(FeatureMap<T>, Mask)> {
    let (y, mask, _) = layer.forward(ps, f.data.view(), m)?;
    let level = f.scale_level + (layer.conv.stride.trailing_zeros());
    Ok((FeatureMap { data: y, scale_level: level }, mask))
}

/// Paired feature/gate convolutions: `elu(conv_f(x)) ⊙ sigmoid(conv_g(x))`.
#[derive(Debug, Clone)]
pub struct GatedConvLayer {
    pub feature: Conv2d,
    pub gate: Conv2d,
}

#[derive(Debug, Clone)]
pub struct GatedConvCache<T> {
    cols: ndarray::Array2<T>,
    in_dim: (usize, usize, usize),
    act: Array3<T>,
    gate: Array3<T>,
}

impl GatedConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        ps: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let feature = Conv2d::new(ps, &format!("{name}.feature"), cin, cout, k, stride, gain, true, rng);
        let gate = Conv2d::new(ps, &format!("{name}.gate"), cin, cout, k, stride, gain, true, rng);
        GatedConvLayer { feature, gate }
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        x: ArrayView3<T>,
    ) -> Result<(Array3<T>, GatedConvCache<T>)> {
        let (c, h, w) = x.dim();
        if c != self.feature.cin {
            return Err(Error::ShapeMismatch(format!(
                "gated conv expects {} channels, got {c}",
                self.feature.cin
            )));
        }
        let (k, s) = (self.feature.k, self.feature.stride);
        let (ho, wo) = self.feature.out_dim(h, w);
        let cols = im2col(x, k, s);
        let pre = |conv: &Conv2d| {
            let mut y = conv.weight_matrix(ps).dot(&cols);
            if let Some(b) = conv.bias_vector(ps) {
                for (mut row, &bv) in y.axis_iter_mut(Axis(0)).zip(b.iter()) {
                    row.mapv_inplace(|v| v + bv);
                }
            }
            y.into_shape_with_order((conv.cout, ho, wo)).expect("contiguous")
        };
        let act = pre(&self.feature).mapv_into(elu);
        let gate = pre(&self.gate).mapv_into(sigmoid);
        let y = &act * &gate;
        Ok((y, GatedConvCache { cols, in_dim: (c, h, w), act, gate }))
    }

    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        cache: &GatedConvCache<T>,
        dy: &Array3<T>,
        grads: &mut Grads<T>,
        need_dx: bool,
    ) -> Option<Array3<T>> {
        let (cout, ho, wo) = dy.dim();
        let mut da = dy * &cache.gate;
        Zip::from(&mut da).and(&cache.act).for_each(|d, &a| *d *= elu_grad_from_output(a));
        let mut dg = dy * &cache.act;
        Zip::from(&mut dg).and(&cache.gate).for_each(|d, &s| *d *= s * (T::one() - s));
        let da2 = da.into_shape_with_order((cout, ho * wo)).expect("contiguous");
        let dg2 = dg.into_shape_with_order((cout, ho * wo)).expect("contiguous");
        for (conv, d2) in [(&self.feature, &da2), (&self.gate, &dg2)] {
            let dw = d2.dot(&cache.cols.t());
            *grads.get_mut(conv.weight) +=
                &dw.into_shape_with_order(ps.get(conv.weight).raw_dim()).expect("weight shape");
            if let Some(b) = conv.bias {
                *grads.get_mut(b) += &d2.sum_axis(Axis(1)).into_dyn();
            }
        }
        need_dx.then(|| {
            let mut dcols = self.feature.weight_matrix(ps).t().dot(&da2);
            dcols += &self.gate.weight_matrix(ps).t().dot(&dg2);
            col2im(dcols.view(), cache.in_dim, self.feature.k, self.feature.stride)
        })
    }
}

pub fn gated_conv<T: Real>(
    layer: &GatedConvLayer,
    ps: &ParamStore<T>,
    f: &FeatureMap<T>,
) -> Result<FeatureMap<T>> {
    let (y, _) = layer.forward(ps, f.data.view())?;
    let level = f.scale_level + layer.feature.stride.trailing_zeros();
    Ok(FeatureMap { data: y, scale_level: level })
}

/// Feature pyramid, level 0 at input resolution. `masks` is filled only by
/// the depth branch.
#[derive(Debug, Clone)]
pub struct EncoderPyramid<T> {
    pub features: Vec<FeatureMap<T>>,
    pub masks: Vec<Mask>,
}

impl<T: Real> EncoderPyramid<T> {
    pub fn levels(&self) -> usize {
        self.features.len()
    }

    pub fn bottleneck(&self) -> &FeatureMap<T> {
        self.features.last().expect("non-empty pyramid")
    }

    /// Channel and spatial pairing check between two pyramids.
    pub fn check_paired(&self, other: &EncoderPyramid<T>) -> Result<()> {
        if self.levels() != other.levels() {
            return Err(Error::ShapeMismatch(format!(
                "pyramids have {} vs {} levels",
                self.levels(),
                other.levels()
            )));
        }
        for (n, (a, b)) in self.features.iter().zip(&other.features).enumerate() {
            if a.data.dim() != b.data.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "level {n}: {:?} vs {:?}",
                    a.data.dim(),
                    b.data.dim()
                )));
            }
        }
        Ok(())
    }
}

/// Channel schedule shared by both branches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    /// Channels at levels `0..=L`; `L` stride-2 stages follow the stem.
    pub widths: Vec<usize>,
    pub kernel: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec { widths: vec![32, 64, 128, 256, 256], kernel: 3 }
    }
}

impl EncoderSpec {
    pub fn stages(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let f = 1usize << self.stages();
        if h % f != 0 || w % f != 0 || h == 0 || w == 0 {
            return Err(Error::InvalidInput(format!(
                "input {h}x{w} not divisible by 2^{}",
                self.stages()
            )));
        }
        Ok(())
    }
}

/// One depth-branch layer: partial conv, or a plain conv when partial
/// convolution is ablated. Either way the validity mask is propagated.
#[derive(Debug, Clone)]
pub enum DepthLayer {
    Partial(PartialConvLayer),
    Dense(Conv2d),
}

#[derive(Debug, Clone)]
enum DepthLayerCache<T> {
    Partial(PartialConvCache<T>),
    Dense(ConvCache<T>),
}

impl DepthLayer {
    fn conv(&self) -> &Conv2d {
        match self {
            DepthLayer::Partial(p) => &p.conv,
            DepthLayer::Dense(c) => c,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DepthEncoder {
    pub layers: Vec<DepthLayer>,
    /// Metres mapped to 1.0 before encoding.
    pub depth_scale: f64,
}

#[derive(Debug, Clone)]
pub struct DepthEncoderCache<T> {
    layers: Vec<DepthLayerCache<T>>,
    outputs: Vec<Array3<T>>,
}

impl DepthEncoder {
    pub fn new<T: Real>(
        ps: &mut ParamStore<T>,
        spec: &EncoderSpec,
        partial: bool,
        depth_scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::new();
        let mut cin = 1;
        for (n, &cout) in spec.widths.iter().enumerate() {
            let stride = if n == 0 { 1 } else { 2 };
            let name = format!("depth_enc.{n}");
            let gain = 2f64.sqrt();
            layers.push(if partial {
                DepthLayer::Partial(PartialConvLayer::new(ps, &name, cin, cout, spec.kernel, stride, gain, rng))
            } else {
                DepthLayer::Dense(Conv2d::new(ps, &name, cin, cout, spec.kernel, stride, gain, true, rng))
            });
            cin = cout;
        }
        DepthEncoder { layers, depth_scale }
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        d: &SparseDepthMap,
    ) -> Result<(EncoderPyramid<T>, DepthEncoderCache<T>)> {
        let (h, w) = d.dim();
        let f = 1usize << (self.layers.len() - 1);
        if h % f != 0 || w % f != 0 {
            return Err(Error::InvalidInput(format!("depth {h}x{w} not divisible by {f}")));
        }
        let inv = T::of(1.0 / self.depth_scale);
        let mut x: Array3<T> = d
            .depth()
            .mapv(|v| T::of(v as f64) * inv)
            .insert_axis(Axis(0));
        let mut mask = d.mask().clone();
        let mut features = Vec::new();
        let mut masks = Vec::new();
        let mut caches = Vec::new();
        let mut outputs = Vec::new();
        for (n, layer) in self.layers.iter().enumerate() {
            let (mut y, new_mask, cache) = match layer {
                DepthLayer::Partial(p) => {
                    let (y, m, c) = p.forward(ps, x.view(), &mask)?;
                    (y, m, DepthLayerCache::Partial(c))
                }
                DepthLayer::Dense(c) => {
                    let (y, cc) = c.forward(ps, x.view());
                    (y, update_mask(&mask, c.k, c.stride), DepthLayerCache::Dense(cc))
                }
            };
            y.mapv_inplace(elu);
            features.push(FeatureMap { data: y.clone(), scale_level: n as u32 });
            masks.push(new_mask.clone());
            caches.push(cache);
            outputs.push(y.clone());
            x = y;
            mask = new_mask;
        }
        Ok((EncoderPyramid { features, masks }, DepthEncoderCache { layers: caches, outputs }))
    }

    /// Backpropagates per-level feature gradients (any level may be zero).
    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        cache: &DepthEncoderCache<T>,
        mut level_grads: Vec<Array3<T>>,
        grads: &mut Grads<T>,
    ) {
        let top = self.layers.len();
        let mut carry: Option<Array3<T>> = None;
        for n in (0..top).rev() {
            let mut g = std::mem::take(&mut level_grads[n]);
            if let Some(c) = carry.take() {
                g += &c;
            }
            let dpre = elu_backward(&cache.outputs[n], &g);
            let need = n > 0;
            carry = match (&self.layers[n], &cache.layers[n]) {
                (DepthLayer::Partial(p), DepthLayerCache::Partial(c)) => p.backward(ps, c, &dpre, grads, need),
                (DepthLayer::Dense(conv), DepthLayerCache::Dense(c)) => conv.backward(ps, c, &dpre, grads, need),
                _ => unreachable!("layer/cache kinds always match"),
            };
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.conv().cout).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RgbEncoder {
    pub layers: Vec<GatedConvLayer>,
}

#[derive(Debug, Clone)]
pub struct RgbEncoderCache<T> {
    layers: Vec<GatedConvCache<T>>,
}

impl RgbEncoder {
    pub fn new<T: Real>(ps: &mut ParamStore<T>, spec: &EncoderSpec, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::new();
        let mut cin = 4;
        for (n, &cout) in spec.widths.iter().enumerate() {
            let stride = if n == 0 { 1 } else { 2 };
            layers.push(GatedConvLayer::new(
                ps,
                &format!("rgb_enc.{n}"),
                cin,
                cout,
                spec.kernel,
                stride,
                2f64.sqrt(),
                rng,
            ));
            cin = cout;
        }
        RgbEncoder { layers }
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        r: &MaskedRGB,
    ) -> Result<(EncoderPyramid<T>, RgbEncoderCache<T>)> {
        let (h, w) = r.dim();
        let f = 1usize << (self.layers.len() - 1);
        if h % f != 0 || w % f != 0 {
            return Err(Error::InvalidInput(format!("rgb {h}x{w} not divisible by {f}")));
        }
        let rgb = r.rgb().mapv(|v| T::of(v as f64));
        let m = r.mask().to_real::<T>().insert_axis(Axis(0));
        let mut x = concatenate(Axis(0), &[rgb.view(), m.view()]).expect("same spatial size");
        let mut features = Vec::new();
        let mut caches = Vec::new();
        for (n, layer) in self.layers.iter().enumerate() {
            let (y, c) = layer.forward(ps, x.view())?;
            features.push(FeatureMap { data: y.clone(), scale_level: n as u32 });
            caches.push(c);
            x = y;
        }
        Ok((EncoderPyramid { features, masks: Vec::new() }, RgbEncoderCache { layers: caches }))
    }

    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        cache: &RgbEncoderCache<T>,
        mut level_grads: Vec<Array3<T>>,
        grads: &mut Grads<T>,
    ) {
        let mut carry: Option<Array3<T>> = None;
        for n in (0..self.layers.len()).rev() {
            let mut g = std::mem::take(&mut level_grads[n]);
            if let Some(c) = carry.take() {
                g += &c;
            }
            carry = self.layers[n].backward(ps, &cache.layers[n], &g, grads, n > 0);
        }
    }
}

/// Encodes a sparse depth map into a pyramid with per-level validity masks.
pub fn encode_depth<T: Real>(
    enc: &DepthEncoder,
    ps: &ParamStore<T>,
    d: &SparseDepthMap,
) -> Result<EncoderPyramid<T>> {
    enc.forward(ps, d).map(|(p, _)| p)
}

/// Encodes the masked image (RGB + known-region mask channel).
pub fn encode_rgb<T: Real>(enc: &RgbEncoder, ps: &ParamStore<T>, r: &MaskedRGB) -> Result<EncoderPyramid<T>> {
    enc.forward(ps, r).map(|(p, _)| p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array4};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_channel(a: Array2<f64>) -> FeatureMap<f64> {
        FeatureMap { data: a.insert_axis(Axis(0)), scale_level: 0 }
    }

    fn ones_kernel(ps: &mut ParamStore<f64>) -> PartialConvLayer {
        PartialConvLayer {
            conv: Conv2d::from_weights(ps, "pc", Array4::ones((1, 1, 3, 3)), Some(Array1::zeros(1)), 1),
        }
    }

    #[test]
    fn full_mask_matches_plain_conv_at_center() {
        let mut ps = ParamStore::new();
        let layer = ones_kernel(&mut ps);
        let f = one_channel(Array2::ones((5, 5)));
        let (y, m) = partial_conv(&layer, &ps, &f, &Mask::ones(5, 5)).unwrap();
        assert_eq!(y.data[[0, 2, 2]], 9.0);
        // border windows are renormalised by their in-bounds size, so a full mask
        // reproduces the zero-padded convolution everywhere
        assert_eq!(y.data[[0, 0, 0]], 4.0);
        assert_eq!(m, Mask::ones(5, 5));
    }

    #[test]
    fn empty_mask_gives_zero() {
        let mut ps = ParamStore::new();
        let layer = ones_kernel(&mut ps);
        *ps.get_mut(layer.conv.bias.unwrap()) = Array1::from_elem(1, 0.7).into_dyn();
        let f = one_channel(Array2::from_elem((5, 5), 3.0));
        let (y, m) = partial_conv(&layer, &ps, &f, &Mask::zeros(5, 5)).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn three_valid_pixels_rescaled() {
        let mut ps = ParamStore::new();
        let layer = ones_kernel(&mut ps);
        let f = one_channel(Array2::from_elem((5, 5), 2.0));
        let valid = [(1, 1), (2, 3), (3, 2)];
        let m = Mask::from_fn(5, 5, |i, j| valid.contains(&(i, j)));
        let (y, nm) = partial_conv(&layer, &ps, &f, &m).unwrap();
        // raw 6, scale 9/3
        assert_eq!(y.data[[0, 2, 2]], 18.0);
        assert!(nm.get(2, 2));
    }

    #[test]
    fn rejects_channel_mismatch() {
        let mut ps = ParamStore::new();
        let layer = ones_kernel(&mut ps);
        let f = FeatureMap { data: Array3::<f64>::zeros((2, 5, 5)), scale_level: 0 };
        assert!(matches!(partial_conv(&layer, &ps, &f, &Mask::ones(5, 5)), Err(Error::ShapeMismatch(_))));
    }

    fn gated_1x1(fw: f64, gw: f64) -> (ParamStore<f64>, GatedConvLayer) {
        let mut ps = ParamStore::new();
        let feature = Conv2d::from_weights(&mut ps, "f", Array4::from_elem((1, 1, 1, 1), fw), Some(Array1::zeros(1)), 1);
        let gate = Conv2d::from_weights(&mut ps, "g", Array4::from_elem((1, 1, 1, 1), gw), Some(Array1::zeros(1)), 1);
        (ps, GatedConvLayer { feature, gate })
    }

    #[test]
    fn gated_closed_forms() {
        let f = one_channel(Array2::ones((2, 2)));
        let (ps, l) = gated_1x1(2.0, 0.0);
        let y = gated_conv(&l, &ps, &f).unwrap();
        assert!(y.data.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let (ps, l) = gated_1x1(2.0, 50.0);
        let y = gated_conv(&l, &ps, &f).unwrap();
        assert!(y.data.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        let (ps, l) = gated_1x1(0.0, 3.0);
        let y = gated_conv(&l, &ps, &f).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gate_zero_halves_activation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamStore::<f64>::new();
        let l = GatedConvLayer::new(&mut ps, "g", 2, 3, 3, 1, 1.0, &mut rng);
        ps.get_mut(l.gate.weight).fill(0.0);
        let x = Array3::from_shape_fn((2, 4, 5), |(c, i, j)| (c + i * j) as f64 * 0.1 - 0.3);
        let (y, _) = l.forward(&ps, x.view()).unwrap();
        let (pre, _) = l.feature.forward(&ps, x.view());
        for (a, b) in y.iter().zip(pre.iter()) {
            assert!((a - 0.5 * elu(*b)).abs() < 1e-15);
        }
    }

    #[test]
    fn dense_and_invalid_depth_pyramids() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamStore::<f64>::new();
        let spec = EncoderSpec { widths: vec![2, 3, 4], kernel: 3 };
        let enc = DepthEncoder::new(&mut ps, &spec, true, 80.0, &mut rng);
        let dense = SparseDepthMap::from_depth(Array2::from_elem((8, 16), 10.0)).unwrap();
        let p = encode_depth(&enc, &ps, &dense).unwrap();
        for (n, m) in p.masks.iter().enumerate() {
            assert_eq!(m.count(), (8 >> n) * (16 >> n));
        }
        let empty = SparseDepthMap::empty(8, 16);
        let p = encode_depth(&enc, &ps, &empty).unwrap();
        assert!(p.masks.iter().all(|m| m.count() == 0));
        assert!(p.features.iter().all(|f| f.data.iter().all(|&v| v == 0.0)));
        assert!(encode_depth(&enc, &ps, &SparseDepthMap::empty(6, 16)).is_err());
    }

    #[test]
    fn rgb_pyramid_pairs_with_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ps = ParamStore::<f64>::new();
        let spec = EncoderSpec { widths: vec![2, 3, 4], kernel: 3 };
        let denc = DepthEncoder::new(&mut ps, &spec, true, 80.0, &mut rng);
        let renc = RgbEncoder::new(&mut ps, &spec, &mut rng);
        let d = SparseDepthMap::from_depth(Array2::from_shape_fn((8, 16), |(i, j)| ((i + j) % 3) as f32)).unwrap();
        let r = MaskedRGB::new(Array3::zeros((3, 8, 16)), Mask::zeros(8, 16)).unwrap();
        let dp = encode_depth(&denc, &ps, &d).unwrap();
        let rp = encode_rgb(&renc, &ps, &r).unwrap();
        dp.check_paired(&rp).unwrap();
        assert!(rp.masks.is_empty());
        // biases are zero at init and elu(0) * sigmoid(0) = 0
        assert!(rp.features.iter().all(|f| f.data.iter().all(|&v| v == 0.0)));
    }
}
