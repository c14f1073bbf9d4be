//! Hinge adversarial losses and the spectrally normalised projection
//! discriminator.

use ndarray::{concatenate, Array1, Array2, Array3, ArrayView2, Axis, Ix2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::Mask;
use crate::error::{Error, Result};
use crate::nn::act::{leaky_relu, LEAKY_SLOPE};
use crate::nn::conv::{conv_backward, conv_forward};
use crate::nn::{Grads, ParamId, ParamStore};
use crate::real::Real;

fn relu<T: Real>(x: T) -> T {
    x.max(T::zero())
}

/// `mean(relu(1 - real)) + mean(relu(1 + fake))`.
pub fn hinge_d_loss<T: Real>(d_real: &[T], d_fake: &[T]) -> T {
    hinge_d_loss_grad(d_real, d_fake).0
}

/// D hinge loss with gradients w.r.t. both score batches.
pub fn hinge_d_loss_grad<T: Real>(d_real: &[T], d_fake: &[T]) -> (T, Vec<T>, Vec<T>) {
    let nr = T::of(d_real.len().max(1) as f64);
    let nf = T::of(d_fake.len().max(1) as f64);
    let one = T::one();
    let lr = d_real.iter().fold(T::zero(), |a, &r| a + relu(one - r)) / nr;
    let lf = d_fake.iter().fold(T::zero(), |a, &f| a + relu(one + f)) / nf;
    let gr = d_real.iter().map(|&r| if one - r > T::zero() { -one / nr } else { T::zero() }).collect();
    let gf = d_fake.iter().map(|&f| if one + f > T::zero() { one / nf } else { T::zero() }).collect();
    (lr + lf, gr, gf)
}

/// `-mean(fake)`.
pub fn hinge_g_loss<T: Real>(d_fake: &[T]) -> T {
    hinge_g_loss_grad(d_fake).0
}

pub fn hinge_g_loss_grad<T: Real>(d_fake: &[T]) -> (T, Vec<T>) {
    let n = T::of(d_fake.len().max(1) as f64);
    let loss = -d_fake.iter().fold(T::zero(), |a, &f| a + f) / n;
    (loss, vec![-T::one() / n; d_fake.len()])
}

fn normalize<T: Real>(v: &mut Array1<T>) {
    let n = v.dot(v).sqrt().max(T::of(1e-12));
    v.mapv_inplace(|x| x / n);
}

/// Power-iteration estimate of the largest singular value.
pub fn power_iteration<T: Real>(w: ArrayView2<T>, u: &mut Array1<T>, iters: usize) -> (T, Array1<T>) {
    let mut v = w.t().dot(u);
    normalize(&mut v);
    for _ in 0..iters.max(1) {
        v = w.t().dot(u);
        normalize(&mut v);
        *u = w.dot(&v);
        normalize(u);
    }
    let sigma = u.dot(&w.dot(&v));
    (sigma, v)
}

/// Estimate of the top singular value of a matrix from a fixed start vector.
pub fn spectral_norm_estimate<T: Real>(w: ArrayView2<T>, iters: usize) -> T {
    let mut u = Array1::from_shape_fn(w.nrows(), |i| T::of(1.0 + 0.01 * i as f64));
    normalize(&mut u);
    power_iteration(w, &mut u, iters).0
}

/// `W / σ(W)` and the vectors needed for its backward pass.
#[derive(Debug, Clone)]
pub struct SnMatrix<T> {
    pub w: Array2<T>,
    pub sigma: T,
    pub u: Array1<T>,
    pub v: Array1<T>,
}

impl<T: Real> SnMatrix<T> {
    pub fn compute(raw: ArrayView2<T>, u: &mut Array1<T>, iters: usize) -> Self {
        let (sigma, v) = power_iteration(raw, u, iters);
        SnMatrix { w: raw.mapv(|x| x / sigma), sigma, u: u.clone(), v }
    }

    /// Maps a gradient w.r.t. the normalised matrix to one w.r.t. the raw
    /// matrix, holding the power-iteration vectors fixed.
    pub fn backward(&self, d_wsn: &Array2<T>) -> Array2<T> {
        let inner = (d_wsn * &self.w).sum();
        let mut d = d_wsn.clone();
        for (i, mut row) in d.outer_iter_mut().enumerate() {
            let ui = self.u[i];
            Zip::from(&mut row).and(&self.v).for_each(|g, &vj| *g -= inner * ui * vj);
        }
        d.mapv_into(|x| x / self.sigma)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    /// Output channels of each stride-2 3×3 conv.
    pub widths: Vec<usize>,
    /// Length of the condition vector.
    pub cond_dim: usize,
    /// Power iterations per normalisation.
    pub sn_iters: usize,
}

/// Conv stack over `[rgb, m_alpha]`, global mean pooling, a linear head and a
/// projection term `⟨cond, V h⟩`. Every weight matrix is spectrally normalised.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    pub convs: Vec<(ParamId, ParamId, usize, usize)>,
    pub head_w: ParamId,
    pub head_b: ParamId,
    pub proj: ParamId,
    /// Persistent left singular vector estimates, one per normalised matrix.
    pub sn_u: Vec<ParamId>,
}

/// Normalised weights for one step.
#[derive(Debug, Clone)]
pub struct SnWeights<T> {
    pub mats: Vec<SnMatrix<T>>,
}

#[derive(Debug, Clone)]
pub struct DiscCache<T> {
    cols: Vec<Array2<T>>,
    in_dims: Vec<(usize, usize, usize)>,
    pre: Vec<Array3<T>>,
    pooled: Array1<T>,
    cond: Array1<T>,
}

pub const DISC_K: usize = 3;

impl Discriminator {
    pub fn new<T: Real>(ps: &mut ParamStore<T>, spec: DiscriminatorSpec, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::new();
        let mut sn_u = Vec::new();
        let mut cin = 4;
        let add_u = |ps: &mut ParamStore<T>, name: String, rows: usize, rng: &mut dyn rand::RngCore| {
            let mut u = Array1::from_shape_fn(rows, |_| T::of(rng.gen::<f64>() - 0.5));
            normalize(&mut u);
            ps.add(name, u.into_dyn())
        };
        for (n, &cout) in spec.widths.iter().enumerate() {
            let std = (2.0 / (cin * DISC_K * DISC_K) as f64).sqrt();
            let w = ps.add_normal(format!("disc.conv.{n}.weight"), &[cout, cin, DISC_K, DISC_K], std, rng);
            let b = ps.add_zeros(format!("disc.conv.{n}.bias"), &[cout]);
            convs.push((w, b, cin, cout));
            sn_u.push(add_u(ps, format!("disc.conv.{n}.sn_u"), cout, rng));
            cin = cout;
        }
        let c = cin;
        let head_w = ps.add_normal("disc.head.weight", &[1, c], (1.0 / c as f64).sqrt(), rng);
        let head_b = ps.add_zeros("disc.head.bias", &[1]);
        sn_u.push(add_u(ps, "disc.head.sn_u".into(), 1, rng));
        let proj = ps.add_normal("disc.proj.weight", &[spec.cond_dim, c], (1.0 / c as f64).sqrt(), rng);
        sn_u.push(add_u(ps, "disc.proj.sn_u".into(), spec.cond_dim, rng));
        Discriminator { spec, convs, head_w, head_b, proj, sn_u }
    }

    fn raw_matrices(&self) -> Vec<ParamId> {
        self.convs.iter().map(|c| c.0).chain([self.head_w, self.proj]).collect()
    }

    /// Trainable parameters (excludes the power-iteration vectors).
    pub fn trainable(&self) -> Vec<ParamId> {
        self.convs.iter().flat_map(|c| [c.0, c.1]).chain([self.head_w, self.head_b, self.proj]).collect()
    }

    fn matrix_view<'a, T: Real>(ps: &'a ParamStore<T>, id: ParamId) -> ArrayView2<'a, T> {
        let a = ps.get(id);
        let rows = a.shape()[0];
        let cols = a.len() / rows;
        a.view().into_shape_with_order((rows, cols)).expect("contiguous").into_dimensionality::<Ix2>().expect("2-D")
    }

    /// Runs power iteration on every weight, updating the stored vectors.
    pub fn normalize_weights<T: Real>(&self, ps: &mut ParamStore<T>) -> SnWeights<T> {
        let mut mats = Vec::new();
        for (&wid, &uid) in self.raw_matrices().iter().zip(&self.sn_u) {
            let mut u: Array1<T> = ps.get(uid).clone().into_dimensionality().expect("1-D");
            let m = SnMatrix::compute(Self::matrix_view(ps, wid), &mut u, self.spec.sn_iters);
            *ps.get_mut(uid) = u.into_dyn();
            mats.push(m);
        }
        SnWeights { mats }
    }

    /// Normalised weights from the stored vectors without updating them.
    pub fn frozen_weights<T: Real>(&self, ps: &ParamStore<T>) -> SnWeights<T> {
        let mats = self
            .raw_matrices()
            .iter()
            .zip(&self.sn_u)
            .map(|(&wid, &uid)| {
                let u: Array1<T> = ps.get(uid).clone().into_dimensionality().expect("1-D");
                let w = Self::matrix_view(ps, wid);
                let v = {
                    let mut v = w.t().dot(&u);
                    normalize(&mut v);
                    v
                };
                let sigma = u.dot(&w.dot(&v));
                SnMatrix { w: w.mapv(|x| x / sigma), sigma, u, v }
            })
            .collect();
        SnWeights { mats }
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        sn: &SnWeights<T>,
        img: &Array3<T>,
        m_alpha: &Mask,
        cond: &[T],
    ) -> Result<(T, DiscCache<T>)> {
        let (c, h, w) = img.dim();
        if c != 3 || m_alpha.dim() != (h, w) {
            return Err(Error::ShapeMismatch(format!("discriminator input {:?} with mask {:?}", img.dim(), m_alpha.dim())));
        }
        if cond.len() != self.spec.cond_dim {
            return Err(Error::ShapeMismatch(format!(
                "condition vector has {} entries, expected {}",
                cond.len(),
                self.spec.cond_dim
            )));
        }
        let m = m_alpha.to_real::<T>().insert_axis(Axis(0));
        let mut x = concatenate(Axis(0), &[img.view(), m.view()]).expect("same spatial size");
        let mut cols = Vec::new();
        let mut in_dims = Vec::new();
        let mut pre = Vec::new();
        for (n, &(_, b, _, _)) in self.convs.iter().enumerate() {
            let bias: Array1<T> = ps.get(b).clone().into_dimensionality().expect("1-D");
            in_dims.push(x.dim());
            let (y, cl) = conv_forward(sn.mats[n].w.view(), Some(bias.view()), x.view(), DISC_K, 2);
            cols.push(cl);
            x = y.mapv(leaky_relu);
            pre.push(y);
        }
        let pooled = x.mean_axis(Axis(2)).and_then(|a| a.mean_axis(Axis(1))).expect("non-empty map");
        let nconv = self.convs.len();
        let head = &sn.mats[nconv].w;
        let proj = &sn.mats[nconv + 1].w;
        let cond = Array1::from(cond.to_vec());
        let bias = ps.get(self.head_b)[0];
        let score = head.row(0).dot(&pooled) + bias + cond.dot(&proj.dot(&pooled));
        Ok((score, DiscCache { cols, in_dims, pre, pooled, cond }))
    }

    /// Backward of one score. Accumulates raw-weight gradients into `grads`
    /// when given and returns the gradient w.r.t. the RGB input when asked.
    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        sn: &SnWeights<T>,
        cache: &DiscCache<T>,
        d_score: T,
        mut grads: Option<&mut Grads<T>>,
        need_input: bool,
    ) -> Option<Array3<T>> {
        let nconv = self.convs.len();
        let head = &sn.mats[nconv];
        let proj = &sn.mats[nconv + 1];
        // score = head·h + b + condᵀ P h
        let mut d_pooled = head.w.row(0).mapv(|v| v * d_score);
        d_pooled += &proj.w.t().dot(&cache.cond).mapv(|v| v * d_score);
        if let Some(g) = grads.as_deref_mut() {
            let d_head = cache.pooled.mapv(|v| v * d_score).insert_axis(Axis(0));
            let d_proj = cache
                .cond
                .view()
                .insert_axis(Axis(1))
                .dot(&cache.pooled.view().insert_axis(Axis(0)))
                .mapv(|v| v * d_score);
            *g.get_mut(self.head_w) += &head.backward(&d_head).into_dyn();
            g.get_mut(self.head_b)[0] += d_score;
            let shape = ps.get(self.proj).raw_dim();
            *g.get_mut(self.proj) += &proj.backward(&d_proj).as_standard_layout().into_owned().into_shape_with_order(shape).expect("proj shape");
        }
        let last = cache.pre.last().expect("at least one conv");
        let (_, lh, lw) = last.dim();
        let inv = T::of(1.0 / (lh * lw) as f64);
        let mut d = Array3::from_shape_fn((d_pooled.len(), lh, lw), |(c, _, _)| d_pooled[c] * inv);
        for n in (0..nconv).rev() {
            let slope = T::of(LEAKY_SLOPE);
            Zip::from(&mut d).and(&cache.pre[n]).for_each(|g, &p| {
                if p <= T::zero() {
                    *g *= slope;
                }
            });
            let need_dx = n > 0 || need_input;
            let cg = conv_backward(sn.mats[n].w.view(), &cache.cols[n], cache.in_dims[n], DISC_K, 2, &d, need_dx);
            if let Some(g) = grads.as_deref_mut() {
                let (wid, bid, _, _) = self.convs[n];
                let shape = ps.get(wid).raw_dim();
                *g.get_mut(wid) += &sn.mats[n].backward(&cg.dweight).as_standard_layout().into_owned().into_shape_with_order(shape).expect("conv shape");
                *g.get_mut(bid) += &cg.dbias.into_dyn();
            }
            match cg.dx {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        // drop the mask channel
        Some(d.slice(ndarray::s![0..3, .., ..]).to_owned())
    }
}

/// Scores one image with the conditional discriminator.
pub fn discriminate<T: Real>(
    d: &Discriminator,
    ps: &ParamStore<T>,
    sn: &SnWeights<T>,
    img: &Array3<T>,
    m_alpha: &Mask,
    cond: &[T],
) -> Result<T> {
    d.forward(ps, sn, img, m_alpha, cond).map(|(s, _)| s)
}
