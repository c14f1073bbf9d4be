//! Depth-guided fusion and the decoder.
//!
//! Each fusion stage builds an interaction feature
//! `F'_R = f_r + reduce([f_r, f_d, m_alpha])`, generates a per-pixel,
//! per-channel 3×3 kernel field from the depth features, filters `F'_R`
//! depthwise with it, mixes channels with a 1×1 convolution and adds the
//! result back onto `F'_R`. The decoder applies a stage at every scale,
//! bottleneck first, upsampling in between and adding the RGB encoder
//! features as skips. The known region is copied back from the input.

use ndarray::{concatenate, s, Array3, ArrayView3, Axis, Zip};
use rand::Rng;

use crate::datamodel::{downsample_mask, FeatureMap, Mask, MaskedRGB};
use crate::encoders::EncoderPyramid;
use crate::error::{Error, Result};
use crate::nn::act::{elu, elu_backward, sigmoid};
use crate::nn::conv::ConvCache;
use crate::nn::{Conv2d, Grads, ParamStore};
use crate::real::Real;

/// Side length of the generated kernels.
pub const DYN_K: usize = 3;

/// Per-pixel depthwise kernels, stored as `(C·k², H, W)` with channel-major
/// taps: entry `c·k² + ki·k + kj` is tap `(ki, kj)` for channel `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicKernelField<T> {
    pub kernels: Array3<T>,
    pub channels: usize,
}

impl<T: Real> DynamicKernelField<T> {
    pub fn k(&self) -> usize {
        DYN_K
    }

    pub fn spatial(&self) -> (usize, usize) {
        let (_, h, w) = self.kernels.dim();
        (h, w)
    }

    /// Field whose every kernel is the identity (centre tap 1).
    pub fn delta(channels: usize, h: usize, w: usize) -> Self {
        let kk = DYN_K * DYN_K;
        let mut kernels = Array3::zeros((channels * kk, h, w));
        for c in 0..channels {
            kernels.slice_mut(s![c * kk + kk / 2, .., ..]).fill(T::one());
        }
        DynamicKernelField { kernels, channels }
    }
}

/// Conv layer mapping `C` depth channels to `C·k²` kernel taps.
#[derive(Debug, Clone)]
pub struct KernelGenerator {
    pub conv: Conv2d,
}

impl KernelGenerator {
    pub fn new<T: Real>(ps: &mut ParamStore<T>, name: &str, c: usize, gain: f64, rng: &mut impl Rng) -> Self {
        KernelGenerator { conv: Conv2d::new(ps, name, c, c * DYN_K * DYN_K, 3, 1, gain, true, rng) }
    }

    fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        f_d: ArrayView3<T>,
    ) -> Result<(DynamicKernelField<T>, ConvCache<T>)> {
        if f_d.dim().0 != self.conv.cin {
            return Err(Error::ShapeMismatch(format!(
                "kernel generator expects {} channels, got {}",
                self.conv.cin,
                f_d.dim().0
            )));
        }
        let (pre, cache) = self.conv.forward(ps, f_d);
        let kernels = pre.mapv_into(|v| v.tanh());
        Ok((DynamicKernelField { kernels, channels: self.conv.cin }, cache))
    }
}

/// Emits the tanh-bounded dynamic kernel field from depth features.
pub fn generate_kernels<T: Real>(
    gen: &KernelGenerator,
    ps: &ParamStore<T>,
    f_d: &FeatureMap<T>,
) -> Result<DynamicKernelField<T>> {
    gen.forward(ps, f_d.data.view()).map(|(f, _)| f)
}

/// Spatially-variant depthwise filtering with zero padding.
pub fn depthwise_filter<T: Real>(field: &DynamicKernelField<T>, f: ArrayView3<T>) -> Array3<T> {
    let (c, h, w) = f.dim();
    let k = DYN_K;
    let pad = (k / 2) as isize;
    let plane = h * w;
    let src = f.as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let kern = field.kernels.as_standard_layout();
    let kern = kern.as_slice().expect("standard layout");
    let mut out = Array3::zeros((c, h, w));
    let dst = out.as_slice_mut().expect("fresh array");
    for ch in 0..c {
        let sp = &src[ch * plane..(ch + 1) * plane];
        let dp = &mut dst[ch * plane..(ch + 1) * plane];
        for ki in 0..k {
            let di = ki as isize - pad;
            let (i0, i1) = shifted_range(h, di);
            for kj in 0..k {
                let dj = kj as isize - pad;
                let (j0, j1) = shifted_range(w, dj);
                if j0 >= j1 {
                    continue;
                }
                let t = ch * k * k + ki * k + kj;
                let tp = &kern[t * plane..(t + 1) * plane];
                for i in i0..i1 {
                    let si = (i as isize + di) as usize;
                    let s0 = (j0 as isize + dj) as usize;
                    let o = &mut dp[i * w + j0..i * w + j1];
                    let kv = &tp[i * w + j0..i * w + j1];
                    let x = &sp[si * w + s0..si * w + s0 + (j1 - j0)];
                    for ((o, &kv), &x) in o.iter_mut().zip(kv).zip(x) {
                        *o += kv * x;
                    }
                }
            }
        }
    }
    out
}

/// Output rows `i` with `0 <= i + d < n`.
fn shifted_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)).max(0) as usize;
    (lo.min(n), hi.min(n))
}

/// Backward of [`depthwise_filter`]: gradients w.r.t. the field and the input.
pub fn depthwise_filter_backward<T: Real>(
    field: &DynamicKernelField<T>,
    f: ArrayView3<T>,
    dout: &Array3<T>,
) -> (Array3<T>, Array3<T>) {
    let (c, h, w) = f.dim();
    let k = DYN_K;
    let pad = (k / 2) as isize;
    let plane = h * w;
    let src = f.as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let g = dout.as_standard_layout();
    let g = g.as_slice().expect("standard layout");
    let kern = field.kernels.as_standard_layout();
    let kern = kern.as_slice().expect("standard layout");
    let mut dfield = Array3::zeros(field.kernels.dim());
    let mut df = Array3::zeros((c, h, w));
    let dk = dfield.as_slice_mut().expect("fresh array");
    let dx = df.as_slice_mut().expect("fresh array");
    for ch in 0..c {
        let sp = &src[ch * plane..(ch + 1) * plane];
        let gp = &g[ch * plane..(ch + 1) * plane];
        let dxp = &mut dx[ch * plane..(ch + 1) * plane];
        for ki in 0..k {
            let di = ki as isize - pad;
            let (i0, i1) = shifted_range(h, di);
            for kj in 0..k {
                let dj = kj as isize - pad;
                let (j0, j1) = shifted_range(w, dj);
                if j0 >= j1 {
                    continue;
                }
                let t = ch * k * k + ki * k + kj;
                let tp = &kern[t * plane..(t + 1) * plane];
                let dtp = &mut dk[t * plane..(t + 1) * plane];
                let n = j1 - j0;
                for i in i0..i1 {
                    let si = (i as isize + di) as usize;
                    let s0 = si * w + (j0 as isize + dj) as usize;
                    let o0 = i * w + j0;
                    let gr = &gp[o0..o0 + n];
                    let xr = &sp[s0..s0 + n];
                    for ((d, &gv), &x) in dtp[o0..o0 + n].iter_mut().zip(gr).zip(xr) {
                        *d += gv * x;
                    }
                    for ((d, &gv), &kv) in dxp[s0..s0 + n].iter_mut().zip(gr).zip(&tp[o0..o0 + n]) {
                        *d += gv * kv;
                    }
                }
            }
        }
    }
    (dfield, df)
}

/// `f + mix(depthwise(field, f))`.
pub fn apply_dynamic_kernels<T: Real>(
    field: &DynamicKernelField<T>,
    f: &FeatureMap<T>,
    mix: &Conv2d,
    ps: &ParamStore<T>,
) -> Result<FeatureMap<T>> {
    check_field(field, f.data.view())?;
    let filtered = depthwise_filter(field, f.data.view());
    let (mixed, _) = mix.forward(ps, filtered.view());
    Ok(FeatureMap { data: mixed + &f.data, scale_level: f.scale_level })
}

fn check_field<T: Real>(field: &DynamicKernelField<T>, f: ArrayView3<T>) -> Result<()> {
    let (c, h, w) = f.dim();
    if field.channels != c || field.spatial() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "kernel field {}ch {:?} vs feature {c}x{h}x{w}",
            field.channels,
            field.spatial()
        )));
    }
    Ok(())
}

/// One fusion stage. With `dgf` off the stage reduces to the interaction
/// feature alone (concatenation + 1×1 conv), the fusion ablation.
#[derive(Debug, Clone)]
pub struct FusionStage {
    pub reduce: Conv2d,
    pub generator: KernelGenerator,
    pub mix: Conv2d,
    pub dgf: bool,
    pub channels: usize,
}

#[derive(Debug, Clone)]
pub struct FusionCache<T> {
    reduce: ConvCache<T>,
    inter: Array3<T>,
    dgf: Option<DgfCache<T>>,
}

#[derive(Debug, Clone)]
struct DgfCache<T> {
    gen: ConvCache<T>,
    field: DynamicKernelField<T>,
    mix: ConvCache<T>,
}

impl FusionStage {
    pub fn new<T: Real>(ps: &mut ParamStore<T>, name: &str, c: usize, dgf: bool, rng: &mut impl Rng) -> Self {
        let reduce = Conv2d::new(ps, &format!("{name}.reduce"), 2 * c + 1, c, 1, 1, 1.0, true, rng);
        let generator = KernelGenerator::new(ps, &format!("{name}.kernel_gen"), c, 0.1, rng);
        let mix = Conv2d::new(ps, &format!("{name}.mix"), c, c, 1, 1, 1.0, true, rng);
        FusionStage { reduce, generator, mix, dgf, channels: c }
    }

    fn check<T: Real>(&self, f_r: ArrayView3<T>, f_d: ArrayView3<T>, m: &Mask) -> Result<()> {
        let (c, h, w) = f_r.dim();
        if f_d.dim() != (c, h, w) || c != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "fusion stage ({}ch): rgb {:?} vs depth {:?}",
                self.channels,
                f_r.dim(),
                f_d.dim()
            )));
        }
        if m.dim() != (h, w) {
            return Err(Error::ShapeMismatch(format!("m_alpha {:?} vs features {h}x{w}", m.dim())));
        }
        Ok(())
    }

    fn interaction<T: Real>(
        &self,
        ps: &ParamStore<T>,
        f_r: ArrayView3<T>,
        f_d: ArrayView3<T>,
        m: &Mask,
    ) -> (Array3<T>, ConvCache<T>) {
        let mr = m.to_real::<T>().insert_axis(Axis(0));
        let stack = concatenate(Axis(0), &[f_r.view(), f_d.view(), mr.view()]).expect("matched spatial size");
        let (red, cache) = self.reduce.forward(ps, stack.view());
        (red + &f_r, cache)
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        f_r: ArrayView3<T>,
        f_d: ArrayView3<T>,
        m: &Mask,
    ) -> Result<(Array3<T>, FusionCache<T>)> {
        self.check(f_r, f_d, m)?;
        let (inter, reduce) = self.interaction(ps, f_r, f_d, m);
        if !self.dgf {
            return Ok((inter.clone(), FusionCache { reduce, inter, dgf: None }));
        }
        let (field, gen) = self.generator.forward(ps, f_d)?;
        let filtered = depthwise_filter(&field, inter.view());
        let (mixed, mix) = self.mix.forward(ps, filtered.view());
        let out = mixed + &inter;
        Ok((out, FusionCache { reduce, inter, dgf: Some(DgfCache { gen, field, mix }) }))
    }

    /// Returns `(d f_r, d f_d)`.
    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        cache: &FusionCache<T>,
        dout: &Array3<T>,
        grads: &mut Grads<T>,
    ) -> (Array3<T>, Array3<T>) {
        let c = self.channels;
        let mut d_inter = dout.clone();
        let mut d_fd = Array3::zeros(dout.dim());
        if let Some(dgf) = &cache.dgf {
            let d_filtered = self.mix.backward(ps, &dgf.mix, dout, grads, true).expect("dx requested");
            let (d_field, d_in) = depthwise_filter_backward(&dgf.field, cache.inter.view(), &d_filtered);
            d_inter += &d_in;
            let mut d_pre = d_field;
            Zip::from(&mut d_pre).and(&dgf.field.kernels).for_each(|d, &t| *d *= T::one() - t * t);
            d_fd += &self.generator.conv.backward(ps, &dgf.gen, &d_pre, grads, true).expect("dx requested");
        }
        let d_stack = self.reduce.backward(ps, &cache.reduce, &d_inter, grads, true).expect("dx requested");
        let d_fr = &d_inter + &d_stack.slice(s![0..c, .., ..]);
        d_fd += &d_stack.slice(s![c..2 * c, .., ..]);
        (d_fr, d_fd)
    }
}

/// Residual interaction feature `f_r + reduce([f_r, f_d, m_alpha])`.
pub fn make_interaction_feature<T: Real>(
    stage: &FusionStage,
    ps: &ParamStore<T>,
    f_r: &FeatureMap<T>,
    f_d: &FeatureMap<T>,
    m_alpha: &Mask,
) -> Result<FeatureMap<T>> {
    let (c, h, w) = f_r.data.dim();
    if f_d.data.dim() != (c, h, w) || c != stage.channels || m_alpha.dim() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "interaction: rgb {:?}, depth {:?}, mask {:?}",
            f_r.data.dim(),
            f_d.data.dim(),
            m_alpha.dim()
        )));
    }
    let (out, _) = stage.interaction(ps, f_r.data.view(), f_d.data.view(), m_alpha);
    Ok(FeatureMap { data: out, scale_level: f_r.scale_level })
}

pub fn upsample2x<T: Real>(x: &Array3<T>) -> Array3<T> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ch, i, j)| x[[ch, i / 2, j / 2]])
}

pub fn upsample2x_backward<T: Real>(d: &Array3<T>) -> Array3<T> {
    let (c, h, w) = d.dim();
    let mut out = Array3::zeros((c, h / 2, w / 2));
    for ((ch, i, j), &v) in d.indexed_iter() {
        out[[ch, i / 2, j / 2]] += v;
    }
    out
}

/// Known pixels from the input, predicted pixels elsewhere.
pub fn composite<T: Real>(input: &MaskedRGB, pred: &Array3<T>) -> Array3<T> {
    let mut out = pred.clone();
    let (_, h, w) = pred.dim();
    let rgb = input.rgb();
    for i in 0..h {
        for j in 0..w {
            if input.mask().get(i, j) {
                for c in 0..3 {
                    out[[c, i, j]] = T::of(rgb[[c, i, j]] as f64);
                }
            }
        }
    }
    out
}

/// Fusion stages per level plus upsampling convs and the RGB head.
#[derive(Debug, Clone)]
pub struct Decoder {
    /// Indexed by level, `0..=L`.
    pub stages: Vec<FusionStage>,
    /// `up[n]` maps level `n + 1` channels to level `n` after 2× upsampling.
    pub up: Vec<Conv2d>,
    pub head: Conv2d,
}

#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    stages: Vec<FusionCache<T>>,
    up: Vec<ConvCache<T>>,
    up_out: Vec<Array3<T>>,
    head: ConvCache<T>,
    pred: Array3<T>,
    known: Mask,
}

/// Per-level input gradients of the decoder.
pub struct DecoderGrads<T> {
    pub depth: Vec<Array3<T>>,
    pub rgb: Vec<Array3<T>>,
}

/// Decoder output: the composited image and the raw prediction.
#[derive(Debug, Clone)]
pub struct Decoded<T> {
    pub output: Array3<T>,
    pub pred: Array3<T>,
}

impl Decoder {
    pub fn new<T: Real>(ps: &mut ParamStore<T>, widths: &[usize], dgf: bool, rng: &mut impl Rng) -> Self {
        let stages = widths
            .iter()
            .enumerate()
            .map(|(n, &c)| FusionStage::new(ps, &format!("fusion.{n}"), c, dgf, rng))
            .collect();
        let up = (0..widths.len() - 1)
            .map(|n| Conv2d::new(ps, &format!("decoder.up.{n}"), widths[n + 1], widths[n], 3, 1, 2f64.sqrt(), true, rng))
            .collect();
        let head = Conv2d::new(ps, "decoder.head", widths[0], 3, 1, 1, 1.0, true, rng);
        Decoder { stages, up, head }
    }

    /// Every parameter owned by the decoder and its fusion stages.
    pub fn param_ids(&self) -> Vec<crate::nn::ParamId> {
        let mut ids = Vec::new();
        let mut push = |c: &Conv2d| {
            ids.push(c.weight);
            ids.extend(c.bias);
        };
        for s in &self.stages {
            push(&s.reduce);
            push(&s.generator.conv);
            push(&s.mix);
        }
        self.up.iter().for_each(&mut push);
        push(&self.head);
        ids
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        depth: &EncoderPyramid<T>,
        rgb: &EncoderPyramid<T>,
        input: &MaskedRGB,
    ) -> Result<(Decoded<T>, DecoderCache<T>)> {
        depth.check_paired(rgb)?;
        let levels = depth.levels();
        if levels != self.stages.len() {
            return Err(Error::ShapeMismatch(format!(
                "decoder has {} levels, pyramids {}",
                self.stages.len(),
                levels
            )));
        }
        let (h0, w0) = depth.features[0].spatial();
        if input.dim() != (h0, w0) {
            return Err(Error::ShapeMismatch(format!("input {:?} vs level-0 {h0}x{w0}", input.dim())));
        }
        let masks: Vec<Mask> = (0..levels)
            .map(|n| downsample_mask(input.mask(), n as u32))
            .collect::<Result<_>>()?;

        let top = levels - 1;
        let mut stage_caches = vec![None; levels];
        let (mut state, c) = self.stages[top].forward(
            ps,
            rgb.features[top].data.view(),
            depth.features[top].data.view(),
            &masks[top],
        )?;
        stage_caches[top] = Some(c);
        let mut up_caches = vec![None; top];
        let mut up_out = vec![Array3::zeros((0, 0, 0)); top];
        for n in (0..top).rev() {
            let (mut u, uc) = self.up[n].forward(ps, upsample2x(&state).view());
            u.mapv_inplace(elu);
            up_caches[n] = Some(uc);
            up_out[n] = u.clone();
            let x = u + &rgb.features[n].data;
            let (s, c) = self.stages[n].forward(ps, x.view(), depth.features[n].data.view(), &masks[n])?;
            stage_caches[n] = Some(c);
            state = s;
        }
        let (logits, head) = self.head.forward(ps, state.view());
        let pred = logits.mapv_into(sigmoid);
        let output = composite(input, &pred);
        let cache = DecoderCache {
            stages: stage_caches.into_iter().map(|c| c.expect("filled")).collect(),
            up: up_caches.into_iter().map(|c| c.expect("filled")).collect(),
            up_out,
            head,
            pred: pred.clone(),
            known: input.mask().clone(),
        };
        Ok((Decoded { output, pred }, cache))
    }

    /// Backward from the gradient of the composited output.
    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        cache: &DecoderCache<T>,
        d_output: &Array3<T>,
        grads: &mut Grads<T>,
    ) -> DecoderGrads<T> {
        let levels = self.stages.len();
        let mut d_pred = d_output.clone();
        let (_, h, w) = d_pred.dim();
        for i in 0..h {
            for j in 0..w {
                if cache.known.get(i, j) {
                    d_pred.slice_mut(s![.., i, j]).fill(T::zero());
                }
            }
        }
        Zip::from(&mut d_pred).and(&cache.pred).for_each(|d, &p| *d *= p * (T::one() - p));
        let mut d_state = self.head.backward(ps, &cache.head, &d_pred, grads, true).expect("dx requested");
        let mut depth_g = vec![Array3::zeros((0, 0, 0)); levels];
        let mut rgb_g = vec![Array3::zeros((0, 0, 0)); levels];
        for n in 0..levels {
            let (d_x, d_fd) = self.stages[n].backward(ps, &cache.stages[n], &d_state, grads);
            depth_g[n] = d_fd;
            if n == levels - 1 {
                rgb_g[n] = d_x;
                break;
            }
            // x = elu(up(upsample(state_{n+1}))) + rgb[n]
            let d_u = elu_backward(&cache.up_out[n], &d_x);
            rgb_g[n] = d_x;
            let d_upsampled = self.up[n].backward(ps, &cache.up[n], &d_u, grads, true).expect("dx requested");
            d_state = upsample2x_backward(&d_upsampled);
        }
        DecoderGrads { depth: depth_g, rgb: rgb_g }
    }
}

/// Runs the decoder and returns the composited prediction in [0, 1].
pub fn fuse_and_decode<T: Real>(
    decoder: &Decoder,
    ps: &ParamStore<T>,
    depth: &EncoderPyramid<T>,
    rgb: &EncoderPyramid<T>,
    input: &MaskedRGB,
) -> Result<Array3<T>> {
    decoder.forward(ps, depth, rgb, input).map(|(d, _)| d.output)
}

/// Mean of a feature over the pixels where `mask` is set (zero vector when empty).
pub fn masked_channel_mean<T: Real>(f: &Array3<T>, mask: &Mask) -> Vec<T> {
    let n = mask.count();
    let (c, _, _) = f.dim();
    if n == 0 {
        return vec![T::zero(); c];
    }
    let m = mask.to_real::<T>();
    (0..c)
        .map(|ch| (&f.slice(s![ch, .., ..]) * &m).sum() / T::of(n as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array4};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_fn(shape, |_| StandardNormal.sample(rng))
    }

    fn stage(c: usize, dgf: bool) -> (ParamStore<f64>, FusionStage) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamStore::new();
        let st = FusionStage::new(&mut ps, "s", c, dgf, &mut rng);
        (ps, st)
    }

    #[test]
    fn zero_reduce_is_identity() {
        let (mut ps, st) = stage(2, true);
        ps.get_mut(st.reduce.weight).fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f_r = FeatureMap { data: randn3(&mut rng, (2, 4, 4)), scale_level: 0 };
        let f_d = FeatureMap { data: randn3(&mut rng, (2, 4, 4)), scale_level: 0 };
        let out = make_interaction_feature(&st, &ps, &f_r, &f_d, &Mask::ones(4, 4)).unwrap();
        assert_eq!(out.data, f_r.data);
    }

    #[test]
    fn zero_rgb_and_mask_depends_on_depth_only() {
        let (ps, st) = stage(2, true);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f_r = FeatureMap { data: Array3::zeros((2, 4, 4)), scale_level: 0 };
        let f_d = FeatureMap { data: randn3(&mut rng, (2, 4, 4)), scale_level: 0 };
        let out = make_interaction_feature(&st, &ps, &f_r, &f_d, &Mask::zeros(4, 4)).unwrap();
        let w: Array4<f64> = ps.get(st.reduce.weight).clone().into_dimensionality().unwrap();
        for i in 0..4 {
            for j in 0..4 {
                for o in 0..2 {
                    let e = w[[o, 2, 0, 0]] * f_d.data[[0, i, j]] + w[[o, 3, 0, 0]] * f_d.data[[1, i, j]];
                    assert!((out.data[[o, i, j]] - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn generator_zero_and_constant_bias() {
        let (mut ps, st) = stage(2, true);
        ps.get_mut(st.generator.conv.weight).fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f_d = FeatureMap { data: randn3(&mut rng, (2, 5, 6)), scale_level: 0 };
        let field = generate_kernels(&st.generator, &ps, &f_d).unwrap();
        assert!(field.kernels.iter().all(|&v| v == 0.0));
        let mut b = Array1::zeros(18);
        b[4] = 1.0;
        *ps.get_mut(st.generator.conv.bias.unwrap()) = b.into_dyn();
        let field = generate_kernels(&st.generator, &ps, &f_d).unwrap();
        for t in 0..18 {
            let expect = if t == 4 { 1f64.tanh() } else { 0.0 };
            assert!(field.kernels.slice(s![t, .., ..]).iter().all(|&v| v == expect));
        }
        assert!((1f64.tanh() - 0.7616).abs() < 1e-4);
    }

    #[test]
    fn generator_rejects_channel_mismatch() {
        let (ps, st) = stage(2, true);
        let f_d = FeatureMap { data: Array3::<f64>::zeros((3, 4, 4)), scale_level: 0 };
        assert!(generate_kernels(&st.generator, &ps, &f_d).is_err());
    }

    #[test]
    fn residual_and_delta_cases() {
        let (mut ps, st) = stage(2, true);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = FeatureMap { data: randn3(&mut rng, (2, 4, 5)), scale_level: 1 };
        ps.get_mut(st.mix.weight).fill(0.0);
        let zero = DynamicKernelField { kernels: Array3::zeros((18, 4, 5)), channels: 2 };
        let out = apply_dynamic_kernels(&zero, &f, &st.mix, &ps).unwrap();
        assert_eq!(out.data, f.data);

        let eye: Array4<f64> = Array4::from_shape_fn((2, 2, 1, 1), |(o, i, _, _)| (o == i) as u8 as f64);
        *ps.get_mut(st.mix.weight) = eye.into_dyn();
        let out = apply_dynamic_kernels(&DynamicKernelField::delta(2, 4, 5), &f, &st.mix, &ps).unwrap();
        assert_eq!(out.data, &f.data * 2.0);
    }

    #[test]
    fn locality_of_dynamic_filtering() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let field = DynamicKernelField { kernels: randn3(&mut rng, (9, 7, 7)), channels: 1 };
        let f = randn3(&mut rng, (1, 7, 7));
        let base = depthwise_filter(&field, f.view());
        let mut g = f.clone();
        g[[0, 0, 0]] += 1.0;
        let pert = depthwise_filter(&field, g.view());
        for ((_, i, j), a) in base.indexed_iter() {
            if i > 1 || j > 1 {
                assert_eq!(*a, pert[[0, i, j]], "pixel ({i}, {j}) outside the window changed");
            }
        }
    }

    #[test]
    fn upsample_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = randn3(&mut rng, (2, 3, 4));
        let y = randn3(&mut rng, (2, 6, 8));
        let lhs = (&upsample2x(&x) * &y).sum();
        let rhs = (&x * &upsample2x_backward(&y)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
