use depth_outpaint::encoders::{DepthEncoder, EncoderSpec, GatedConvLayer, PartialConvLayer, RgbEncoder};
use depth_outpaint::fusion::{depthwise_filter, depthwise_filter_backward, DynamicKernelField, FusionStage};
use depth_outpaint::losses::adversarial::{hinge_d_loss_grad, hinge_g_loss_grad, Discriminator, DiscriminatorSpec};
use depth_outpaint::losses::attention::cross_modal_loss_grad;
use depth_outpaint::losses::edge::berhu_grad;
use depth_outpaint::losses::pixel_loss_grad;
use depth_outpaint::model::{generator_step, ModelConfig, Objective, Outpainter};
use depth_outpaint::nn::{Conv2d, Grads, ParamId, ParamStore};
use depth_outpaint::{LossWeights, Mask, MaskedRGB, SparseDepthMap};
use ndarray::{Array2, Array3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const EPS: f64 = 1e-3;
pub const OP_TOL: f64 = 1e-4;

fn randn3(rng: &mut ChaCha8Rng, d: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_simple_fn(d, || rng.sample(StandardNormal))
}

fn rand_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> Mask {
    Mask::from_fn(h, w, |_, _| rng.gen_bool(p))
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nn).max(1e-12)
}

fn pick(rng: &mut ChaCha8Rng, len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        sample(rng, len, max).into_vec()
    }
}

/// Compares analytic and numeric gradients for a sample of entries of every
/// listed parameter.
fn check_params(
    label: &str,
    ps: &ParamStore<f64>,
    ids: &[ParamId],
    grads: &Grads<f64>,
    loss: impl Fn(&ParamStore<f64>) -> f64,
    tol: f64,
    rng: &mut ChaCha8Rng,
) {
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for &id in ids {
        let len = ps.get(id).len();
        for i in pick(rng, len, 12) {
            let mut p = ps.clone();
            p.get_mut(id).as_slice_mut().unwrap()[i] += EPS;
            let up = loss(&p);
            p.get_mut(id).as_slice_mut().unwrap()[i] -= 2.0 * EPS;
            let down = loss(&p);
            numeric.push((up - down) / (2.0 * EPS));
            analytic.push(grads.get(id).as_slice().unwrap()[i]);
        }
    }
    let e = rel_err(&analytic, &numeric);
    assert!(e < tol, "{label}: parameter gradient relative error {e:e}");
}

fn check_input(
    label: &str,
    x: &Array3<f64>,
    dx: &Array3<f64>,
    loss: impl Fn(&Array3<f64>) -> f64,
    tol: f64,
    rng: &mut ChaCha8Rng,
) {
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for i in pick(rng, x.len(), 40) {
        let mut p = x.clone();
        p.as_slice_mut().unwrap()[i] += EPS;
        let up = loss(&p);
        p.as_slice_mut().unwrap()[i] -= 2.0 * EPS;
        let down = loss(&p);
        numeric.push((up - down) / (2.0 * EPS));
        analytic.push(dx.as_slice().unwrap()[i]);
    }
    let e = rel_err(&analytic, &numeric);
    assert!(e < tol, "{label}: input gradient relative error {e:e}");
}

fn dot(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    (a * b).sum()
}

fn all_ids(ps: &ParamStore<f64>) -> Vec<ParamId> {
    ps.ids().collect()
}

pub fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for stride in [1, 2] {
        let mut ps = ParamStore::new();
        let conv = Conv2d::new(&mut ps, "c", 3, 4, 3, stride, 1.0, true, &mut rng);
        let x = randn3(&mut rng, (3, 6, 8));
        let (y, cache) = conv.forward(&ps, x.view());
        let r = randn3(&mut rng, y.dim());
        let mut g = ps.zero_grads();
        let dx = conv.backward(&ps, &cache, &r, &mut g, true).unwrap();
        check_params("conv", &ps, &all_ids(&ps), &g, |p| dot(&conv.forward(p, x.view()).0, &r), OP_TOL, &mut rng);
        check_input("conv", &x, &dx, |x| dot(&conv.forward(&ps, x.view()).0, &r), OP_TOL, &mut rng);
    }
}

pub fn partial_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for stride in [1, 2] {
        let mut ps = ParamStore::new();
        let layer = PartialConvLayer::new(&mut ps, "p", 2, 3, 3, stride, 1.0, &mut rng);
        let x = randn3(&mut rng, (2, 8, 8));
        let m = rand_mask(&mut rng, 8, 8, 0.3);
        let (y, _, cache) = layer.forward(&ps, x.view(), &m).unwrap();
        let r = randn3(&mut rng, y.dim());
        let mut g = ps.zero_grads();
        let dx = layer.backward(&ps, &cache, &r, &mut g, true).unwrap();
        let f = |p: &ParamStore<f64>, x: &Array3<f64>| dot(&layer.forward(p, x.view(), &m).unwrap().0, &r);
        check_params("partial", &ps, &all_ids(&ps), &g, |p| f(p, &x), OP_TOL, &mut rng);
        check_input("partial", &x, &dx, |x| f(&ps, x), OP_TOL, &mut rng);
    }
}

pub fn gated_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ps = ParamStore::new();
    let layer = GatedConvLayer::new(&mut ps, "g", 3, 4, 3, 2, 1.0, &mut rng);
    let x = randn3(&mut rng, (3, 8, 6));
    let (y, cache) = layer.forward(&ps, x.view()).unwrap();
    let r = randn3(&mut rng, y.dim());
    let mut g = ps.zero_grads();
    let dx = layer.backward(&ps, &cache, &r, &mut g, true).unwrap();
    let f = |p: &ParamStore<f64>, x: &Array3<f64>| dot(&layer.forward(p, x.view()).unwrap().0, &r);
    check_params("gated", &ps, &all_ids(&ps), &g, |p| f(p, &x), OP_TOL, &mut rng);
    check_input("gated", &x, &dx, |x| f(&ps, x), OP_TOL, &mut rng);
}

pub fn fusion_stage_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for dgf in [true, false] {
        let mut ps = ParamStore::new();
        // non-trivial kernels so the dynamic filter path carries signal
        let stage = FusionStage::new(&mut ps, "s", 3, dgf, &mut rng);
        for id in all_ids(&ps) {
            ps.get_mut(id).mapv_inplace(|v| v * 5.0);
        }
        let f_r = randn3(&mut rng, (3, 4, 6));
        let f_d = randn3(&mut rng, (3, 4, 6));
        let m = Mask::from_fn(4, 6, |_, j| (2..4).contains(&j));
        let (y, cache) = stage.forward(&ps, f_r.view(), f_d.view(), &m).unwrap();
        let r = randn3(&mut rng, y.dim());
        let mut g = ps.zero_grads();
        let (d_fr, d_fd) = stage.backward(&ps, &cache, &r, &mut g);
        let f = |p: &ParamStore<f64>, a: &Array3<f64>, b: &Array3<f64>| {
            dot(&stage.forward(p, a.view(), b.view(), &m).unwrap().0, &r)
        };
        let ids: Vec<ParamId> = if dgf {
            all_ids(&ps)
        } else {
            vec![stage.reduce.weight, stage.reduce.bias.unwrap()]
        };
        check_params("fusion", &ps, &ids, &g, |p| f(p, &f_r, &f_d), OP_TOL, &mut rng);
        check_input("fusion f_r", &f_r, &d_fr, |a| f(&ps, a, &f_d), OP_TOL, &mut rng);
        check_input("fusion f_d", &f_d, &d_fd, |b| f(&ps, &f_r, b), OP_TOL, &mut rng);
    }
}

pub fn encoder_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = EncoderSpec { widths: vec![3, 4, 5], kernel: 3 };
    let (h, w) = (8, 12);
    let depth = Array2::from_shape_fn((h, w), |_| rng.gen_range(2.0f32..40.0));
    let mask = rand_mask(&mut rng, h, w, 0.25);
    let depth = depth * &mask.to_real::<f32>();
    let d = SparseDepthMap::new(depth, mask).unwrap();
    let known = Mask::from_fn(h, w, |_, j| (3..9).contains(&j));
    let rgb = Array3::from_shape_fn((3, h, w), |(_, i, j)| if known.get(i, j) { rng.gen::<f32>() } else { 0.0 });
    let r = MaskedRGB::new(rgb, known).unwrap();

    for partial in [true, false] {
        let mut ps = ParamStore::new();
        let enc = DepthEncoder::new(&mut ps, &spec, partial, 10.0, &mut rng);
        let (pyr, cache) = enc.forward::<f64>(&ps, &d).unwrap();
        let rs: Vec<Array3<f64>> = pyr.features.iter().map(|f| randn3(&mut rng, f.data.dim())).collect();
        let mut g = ps.zero_grads();
        enc.backward(&ps, &cache, rs.clone(), &mut g);
        let f = |p: &ParamStore<f64>| {
            let (pyr, _) = enc.forward::<f64>(p, &d).unwrap();
            pyr.features.iter().zip(&rs).map(|(f, r)| dot(&f.data, r)).sum::<f64>()
        };
        check_params("depth encoder", &ps, &all_ids(&ps), &g, f, OP_TOL, &mut rng);
    }

    let mut ps = ParamStore::new();
    let enc = RgbEncoder::new(&mut ps, &spec, &mut rng);
    let (pyr, cache) = enc.forward::<f64>(&ps, &r).unwrap();
    let rs: Vec<Array3<f64>> = pyr.features.iter().map(|f| randn3(&mut rng, f.data.dim())).collect();
    let mut g = ps.zero_grads();
    enc.backward(&ps, &cache, rs.clone(), &mut g);
    let f = |p: &ParamStore<f64>| {
        let (pyr, _) = enc.forward::<f64>(p, &r).unwrap();
        pyr.features.iter().zip(&rs).map(|(f, r)| dot(&f.data, r)).sum::<f64>()
    };
    check_params("rgb encoder", &ps, &all_ids(&ps), &g, f, OP_TOL, &mut rng);
}

pub fn discriminator_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ps = ParamStore::new();
    let spec = DiscriminatorSpec { widths: vec![4, 5], cond_dim: 3, sn_iters: 1 };
    let disc = Discriminator::new(&mut ps, spec, &mut rng);
    // settle the power iteration so the stored vectors are meaningful
    for _ in 0..5 {
        disc.normalize_weights(&mut ps);
    }
    let img = randn3(&mut rng, (3, 8, 8));
    let m = Mask::from_fn(8, 8, |_, j| (2..6).contains(&j));
    let cond = vec![0.3, -0.7, 1.1];
    let sn = disc.frozen_weights(&ps);
    let (_, cache) = disc.forward(&ps, &sn, &img, &m, &cond).unwrap();
    let mut g = ps.zero_grads();
    let dx = disc.backward(&ps, &sn, &cache, 1.0, Some(&mut g), true).unwrap();
    let score = |p: &ParamStore<f64>, x: &Array3<f64>| {
        let sn = disc.frozen_weights(p);
        disc.forward(p, &sn, x, &m, &cond).unwrap().0
    };
    check_params("discriminator", &ps, &disc.trainable(), &g, |p| score(p, &img), OP_TOL, &mut rng);
    check_input("discriminator", &img, &dx, |x| score(&ps, x), OP_TOL, &mut rng);
}

pub fn loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f_d = randn3(&mut rng, (4, 5, 6));
    let f_r = randn3(&mut rng, (4, 5, 6));
    let m_sd = rand_mask(&mut rng, 5, 6, 0.6);
    let m_alpha = Mask::from_fn(5, 6, |_, j| (2..4).contains(&j));
    let (_, g) = cross_modal_loss_grad(&f_d, &f_r, &m_sd, &m_alpha).unwrap();
    check_input(
        "cross-modal",
        &f_r,
        &g,
        |x| cross_modal_loss_grad(&f_d, x, &m_sd, &m_alpha).unwrap().0,
        OP_TOL,
        &mut rng,
    );

    let pred = randn3(&mut rng, (3, 5, 6));
    let gt = randn3(&mut rng, (3, 5, 6));
    let (_, g) = pixel_loss_grad(&pred, &gt, &m_alpha).unwrap();
    check_input("pixel", &pred, &g, |x| pixel_loss_grad(x, &gt, &m_alpha).unwrap().0, OP_TOL, &mut rng);

    let x = randn3(&mut rng, (1, 6, 7)).mapv(|v| v * 0.4);
    let x2 = x.index_axis(ndarray::Axis(0), 0).to_owned();
    let (_, g) = berhu_grad(&x2, 0.2).unwrap();
    let g3 = g.insert_axis(ndarray::Axis(0));
    check_input(
        "berhu",
        &x,
        &g3,
        |x| berhu_grad(&x.index_axis(ndarray::Axis(0), 0).to_owned(), 0.2).unwrap().0,
        OP_TOL,
        &mut rng,
    );
}

pub fn dynamic_filter_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let field = DynamicKernelField { kernels: randn3(&mut rng, (18, 5, 7)), channels: 2 };
    let x = randn3(&mut rng, (2, 5, 7));
    let r = randn3(&mut rng, (2, 5, 7));
    let (dk, dx) = depthwise_filter_backward(&field, x.view(), &r);
    check_input("dynamic filter x", &x, &dx, |x| dot(&depthwise_filter(&field, x.view()), &r), OP_TOL, &mut rng);
    let f = |k: &Array3<f64>| {
        let fld = DynamicKernelField { kernels: k.clone(), channels: 2 };
        dot(&depthwise_filter(&fld, x.view()), &r)
    };
    check_input("dynamic filter kernels", &field.kernels, &dk, f, OP_TOL, &mut rng);
}

pub fn hinge_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    // scores kept off the hinge kinks at +-1
    let away = |rng: &mut ChaCha8Rng| loop {
        let v: f64 = rng.gen_range(-3.0..3.0);
        if (v.abs() - 1.0).abs() > 0.05 {
            return v;
        }
    };
    let real = Array3::from_shape_simple_fn((1, 1, 6), || away(&mut rng));
    let fake = Array3::from_shape_simple_fn((1, 1, 6), || away(&mut rng));
    let (_, dr, df) = hinge_d_loss_grad(real.as_slice().unwrap(), fake.as_slice().unwrap());
    let dr = Array3::from_shape_vec((1, 1, 6), dr).unwrap();
    let df = Array3::from_shape_vec((1, 1, 6), df).unwrap();
    let d = |a: &Array3<f64>, b: &Array3<f64>| hinge_d_loss_grad(a.as_slice().unwrap(), b.as_slice().unwrap()).0;
    check_input("hinge D real", &real, &dr, |x| d(x, &fake), OP_TOL, &mut rng);
    check_input("hinge D fake", &fake, &df, |x| d(&real, x), OP_TOL, &mut rng);
    let (_, dg) = hinge_g_loss_grad(fake.as_slice().unwrap());
    let dg = Array3::from_shape_vec((1, 1, 6), dg).unwrap();
    check_input("hinge G", &fake, &dg, |x| hinge_g_loss_grad(x.as_slice().unwrap()).0, OP_TOL, &mut rng);
}

pub fn end_to_end_tiny_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (h, w) = (8, 16);
    let cfg = ModelConfig {
        widths: vec![4, 6],
        disc_widths: vec![4],
        partial_conv: true,
        dgf: true,
        depth_scale: 20.0,
        sn_iters: 1,
    };
    let mut model = Outpainter::<f64>::new(cfg, 11).unwrap();
    for _ in 0..5 {
        model.disc.normalize_weights(&mut model.d_params);
    }
    let depth = Array2::from_shape_fn((h, w), |_| rng.gen_range(2.0f32..20.0));
    let mask = rand_mask(&mut rng, h, w, 0.3);
    let d = SparseDepthMap::new(depth * &mask.to_real::<f32>(), mask).unwrap();
    let known = Mask::from_fn(h, w, |_, j| (4..12).contains(&j));
    let full = Array3::from_shape_fn((3, h, w), |_| rng.gen::<f64>());
    let rgb = Array3::from_shape_fn((3, h, w), |(c, i, j)| if known.get(i, j) { full[(c, i, j)] as f32 } else { 0.0 });
    let r = MaskedRGB::new(rgb, known).unwrap();
    let sn = model.disc.frozen_weights(&model.d_params);
    // the discriminator condition and the depth side of the cross-modal term
    // are detached, so each case leaves out the encoder they read from
    let cases = [((0.0, 0.0), ""), ((0.1, 0.0), "rgb_enc"), ((0.0, 0.05), "depth_enc")];
    for ((lambda_adv, lambda_cm), frozen) in cases {
        let obj = Objective {
            weights: LossWeights { lambda_adv, lambda_p: 1.0, lambda_e: 0.0, lambda_cm },
            edge: Default::default(),
        };
        let step = generator_step(&model, &sn, &d, &r, &full, &obj).unwrap();
        assert!(step.parts.cm > 0.0 && (lambda_adv == 0.0 || step.parts.adv != 0.0));
        let ids: Vec<ParamId> = model
            .g_params
            .ids()
            .filter(|&id| frozen.is_empty() || !model.g_params.name(id).starts_with(frozen))
            .collect();
        let loss = |p: &ParamStore<f64>| {
            let mut m = model.clone();
            m.g_params = p.clone();
            generator_step(&m, &sn, &d, &r, &full, &obj).unwrap().total
        };
        check_params("end-to-end", &model.g_params, &ids, &step.grads, loss, 1e-3, &mut rng);
    }
}

/// Every check, in suite order; each panics on failure.
pub const ALL: &[(&str, fn())] = &[
    ("conv2d_gradients", conv2d_gradients),
    ("partial_conv_gradients", partial_conv_gradients),
    ("gated_conv_gradients", gated_conv_gradients),
    ("fusion_stage_gradients", fusion_stage_gradients),
    ("encoder_gradients", encoder_gradients),
    ("discriminator_gradients", discriminator_gradients),
    ("loss_gradients", loss_gradients),
    ("dynamic_filter_gradients", dynamic_filter_gradients),
    ("hinge_gradients", hinge_gradients),
    ("end_to_end_tiny_network", end_to_end_tiny_network),
];
