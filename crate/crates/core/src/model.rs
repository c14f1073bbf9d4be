//! Generator/discriminator assembly and the per-sample training objectives.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{downsample_mask, LossWeights, MaskedRGB, SparseDepthMap};
use crate::encoders::{DepthEncoder, DepthEncoderCache, EncoderPyramid, EncoderSpec, RgbEncoder, RgbEncoderCache};
use crate::error::{Error, Result};
use crate::fusion::{masked_channel_mean, Decoder, DecoderCache};
use crate::losses::adversarial::{hinge_d_loss_grad, hinge_g_loss_grad, Discriminator, DiscriminatorSpec, SnWeights};
use crate::losses::attention::cross_modal_loss_grad;
use crate::losses::edge::{edge_loss_grad, EdgeLossConfig};
use crate::losses::{pixel_loss_grad, total_loss, LossParts};
use crate::nn::{Grads, ParamStore};
use crate::real::Real;

/// Architecture hyperparameters; stored in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Encoder/decoder channels per level, stem first.
    pub widths: Vec<usize>,
    pub disc_widths: Vec<usize>,
    /// Partial convolutions in the depth branch; plain convs when false.
    pub partial_conv: bool,
    /// Dynamic-kernel fusion; concatenation + 1×1 conv when false.
    pub dgf: bool,
    pub depth_scale: f64,
    pub sn_iters: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            widths: vec![32, 64, 128, 256, 256],
            disc_widths: vec![32, 64, 128, 256],
            partial_conv: true,
            dgf: true,
            depth_scale: 80.0,
            sn_iters: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::InvalidInput(format!("bad generator widths {:?}", self.widths)));
        }
        if self.disc_widths.is_empty() || self.disc_widths.contains(&0) {
            return Err(Error::InvalidInput(format!("bad discriminator widths {:?}", self.disc_widths)));
        }
        if !(self.depth_scale > 0.0) || self.sn_iters == 0 {
            return Err(Error::InvalidInput("depth_scale and sn_iters must be positive".into()));
        }
        Ok(())
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        EncoderSpec { widths: self.widths.clone(), kernel: 3 }
    }

    pub fn levels(&self) -> usize {
        self.widths.len()
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub depth_enc: DepthEncoder,
    pub rgb_enc: RgbEncoder,
    pub decoder: Decoder,
}

/// Everything a generator forward pass produces.
#[derive(Debug, Clone)]
pub struct GenForward<T> {
    /// Composited output in [0, 1].
    pub output: Array3<T>,
    pub depth: EncoderPyramid<T>,
    pub rgb: EncoderPyramid<T>,
    depth_cache: DepthEncoderCache<T>,
    rgb_cache: RgbEncoderCache<T>,
    dec_cache: DecoderCache<T>,
}

impl Generator {
    pub fn new<T: Real>(ps: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let spec = cfg.encoder_spec();
        let depth_enc = DepthEncoder::new(ps, &spec, cfg.partial_conv, cfg.depth_scale, rng);
        let rgb_enc = RgbEncoder::new(ps, &spec, rng);
        let decoder = Decoder::new(ps, &cfg.widths, cfg.dgf, rng);
        Generator { depth_enc, rgb_enc, decoder }
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        depth: &SparseDepthMap,
        input: &MaskedRGB,
    ) -> Result<GenForward<T>> {
        if depth.dim() != input.dim() {
            return Err(Error::ShapeMismatch(format!("depth {:?} vs rgb {:?}", depth.dim(), input.dim())));
        }
        let (dp, depth_cache) = self.depth_enc.forward(ps, depth)?;
        let (rp, rgb_cache) = self.rgb_enc.forward(ps, input)?;
        let (decoded, dec_cache) = self.decoder.forward(ps, &dp, &rp, input)?;
        Ok(GenForward { output: decoded.output, depth: dp, rgb: rp, depth_cache, rgb_cache, dec_cache })
    }

    /// Gradients of a scalar loss given its gradient w.r.t. the composited
    /// output and, optionally, w.r.t. the RGB bottleneck features.
    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        fwd: &GenForward<T>,
        d_output: &Array3<T>,
        d_rgb_bottleneck: Option<&Array3<T>>,
    ) -> Grads<T> {
        let mut grads = ps.zero_grads();
        let dg = self.decoder.backward(ps, &fwd.dec_cache, d_output, &mut grads);
        let mut rgb_g = dg.rgb;
        if let Some(extra) = d_rgb_bottleneck {
            *rgb_g.last_mut().expect("levels") += extra;
        }
        self.rgb_enc.backward(ps, &fwd.rgb_cache, rgb_g, &mut grads);
        self.depth_enc.backward(ps, &fwd.depth_cache, dg.depth, &mut grads);
        grads
    }

    /// Zeroes every fusion and decoder parameter; the unknown region then
    /// decodes to `sigmoid(0) = 0.5`.
    pub fn zero_fusion_and_decoder<T: Real>(&self, ps: &mut ParamStore<T>) {
        for id in self.decoder.param_ids() {
            ps.get_mut(id).fill(T::zero());
        }
    }
}

/// Condition vector for the discriminator: the RGB bottleneck feature
/// averaged over the known region, scaled to unit length. It is an observed
/// input to the discriminator, so the generator objective does not
/// differentiate it.
pub fn condition_vector<T: Real>(fwd: &GenForward<T>, input: &MaskedRGB) -> Result<Vec<T>> {
    let top = fwd.rgb.levels() - 1;
    let m = downsample_mask(input.mask(), top as u32)?;
    let mut v = masked_channel_mean(&fwd.rgb.bottleneck().data, &m);
    let norm = v.iter().fold(T::zero(), |a, &x| a + x * x).sqrt();
    if norm > T::of(1e-12) {
        v.iter_mut().for_each(|x| *x = *x / norm);
    }
    Ok(v)
}

/// Generator and discriminator with their parameters.
#[derive(Debug, Clone)]
pub struct Outpainter<T> {
    pub config: ModelConfig,
    pub gen: Generator,
    pub g_params: ParamStore<T>,
    pub disc: Discriminator,
    pub d_params: ParamStore<T>,
}

impl<T: Real> Outpainter<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g_params = ParamStore::new();
        let gen = Generator::new(&mut g_params, &config, &mut rng);
        let mut d_params = ParamStore::new();
        let spec = DiscriminatorSpec {
            widths: config.disc_widths.clone(),
            cond_dim: *config.widths.last().expect("validated"),
            sn_iters: config.sn_iters,
        };
        let disc = Discriminator::new(&mut d_params, spec, &mut rng);
        Ok(Outpainter { config, gen, g_params, disc, d_params })
    }

    pub fn forward(&self, depth: &SparseDepthMap, input: &MaskedRGB) -> Result<GenForward<T>> {
        self.gen.forward(&self.g_params, depth, input)
    }
}

/// Loss terms plus generator gradients for one sample.
#[derive(Debug, Clone)]
pub struct GenStep<T> {
    pub parts: LossParts,
    pub total: f64,
    pub grads: Grads<T>,
    pub output: Array3<T>,
    pub cond: Vec<T>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Objective {
    pub weights: LossWeights,
    pub edge: EdgeLossConfig,
}

/// Generator objective for one sample (batch size 1 hinge terms), with the
/// discriminator held fixed at the given normalised weights.
pub fn generator_step<T: Real>(
    model: &Outpainter<T>,
    sn: &SnWeights<T>,
    depth: &SparseDepthMap,
    input: &MaskedRGB,
    target: &Array3<T>,
    obj: &Objective,
) -> Result<GenStep<T>> {
    let w = &obj.weights;
    let fwd = model.forward(depth, input)?;
    let out = &fwd.output;
    let m_alpha = input.mask();
    let cond = condition_vector(&fwd, input)?;
    let mut d_out = Array3::<T>::zeros(out.dim());
    let mut parts = LossParts::default();
    let top = fwd.depth.levels() - 1;
    let m_alpha_top = downsample_mask(m_alpha, top as u32)?;
    let mut d_bottleneck = Array3::<T>::zeros(fwd.rgb.bottleneck().data.dim());

    if w.lambda_adv > 0.0 {
        let (score, cache) = model.disc.forward(&model.d_params, sn, out, m_alpha, &cond)?;
        let (adv, g) = hinge_g_loss_grad(&[score]);
        parts.adv = adv.as_f64();
        let d_img = model
            .disc
            .backward(&model.d_params, sn, &cache, g[0] * T::of(w.lambda_adv), None, true)
            .expect("input gradient requested");
        d_out += &d_img;
    }
    let (pix, g_pix) = pixel_loss_grad(out, target, m_alpha)?;
    parts.pixel = pix.as_f64();
    if w.lambda_p > 0.0 {
        d_out.scaled_add(T::of(w.lambda_p), &g_pix);
    }
    if w.lambda_e > 0.0 {
        let (edge, g_edge) = edge_loss_grad(out, target, &obj.edge)?;
        parts.edge = edge.as_f64();
        d_out.scaled_add(T::of(w.lambda_e), &g_edge);
    }
    let (cm, g_cm) = cross_modal_loss_grad(
        &fwd.depth.bottleneck().data,
        &fwd.rgb.bottleneck().data,
        &fwd.depth.masks[top],
        &m_alpha_top,
    )?;
    parts.cm = cm.as_f64();
    if w.lambda_cm > 0.0 {
        d_bottleneck.scaled_add(T::of(w.lambda_cm), &g_cm);
    }
    let total = total_loss(&parts, w)?;
    let grads = model.gen.backward(&model.g_params, &fwd, &d_out, Some(&d_bottleneck));
    Ok(GenStep { parts, total, grads, output: fwd.output, cond })
}

/// Discriminator hinge objective for one (real, fake) pair.
pub struct DiscStep<T> {
    pub loss: f64,
    pub real_score: f64,
    pub fake_score: f64,
    pub grads: Grads<T>,
}

pub fn discriminator_step<T: Real>(
    model: &Outpainter<T>,
    sn: &SnWeights<T>,
    real: &Array3<T>,
    fake: &Array3<T>,
    input: &MaskedRGB,
    cond: &[T],
) -> Result<DiscStep<T>> {
    let m = input.mask();
    let (sr, cr) = model.disc.forward(&model.d_params, sn, real, m, cond)?;
    let (sf, cf) = model.disc.forward(&model.d_params, sn, fake, m, cond)?;
    let (loss, gr, gf) = hinge_d_loss_grad(&[sr], &[sf]);
    let mut grads = model.d_params.zero_grads();
    model.disc.backward(&model.d_params, sn, &cr, gr[0], Some(&mut grads), false);
    model.disc.backward(&model.d_params, sn, &cf, gf[0], Some(&mut grads), false);
    Ok(DiscStep { loss: loss.as_f64(), real_score: sr.as_f64(), fake_score: sf.as_f64(), grads })
}
