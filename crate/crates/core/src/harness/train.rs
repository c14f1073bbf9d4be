use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::checkpoint::save_checkpoint;
use super::config::TrainConfig;
use super::eval::{infer, masked_l1};
use super::montage::{mask_image, montage};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ingestion::io::{discover_samples, load_sample, save_rgb_png};
use crate::ingestion::{save_sample, synth_scene_with, Sample};
use crate::losses::LossParts;
use crate::model::{discriminator_step, generator_step, Objective, Outpainter};
use crate::nn::{Adam, Grads};

/// One row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub g_total: f64,
    pub adv: f64,
    pub pixel: f64,
    pub edge: f64,
    pub cm: f64,
    pub d_loss: f64,
    pub d_real: f64,
    pub d_fake: f64,
    pub l1_unknown: f64,
}

/// Named samples from `data_dir`, or the configured synthetic seed range.
pub fn load_dataset(cfg: &TrainConfig) -> Result<Vec<(String, Sample)>> {
    match &cfg.data_dir {
        Some(dir) => {
            let dirs = discover_samples(dir)?;
            if dirs.is_empty() {
                return Err(Error::InvalidInput(format!("no samples under {}", dir.display())));
            }
            dirs.iter()
                .map(|d| {
                    let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                    load_sample(d).map(|s| (name, s))
                })
                .collect()
        }
        None => {
            let layout = cfg.layout()?;
            (0..cfg.synth_count as u64)
                .map(|k| {
                    let seed = cfg.synth_seed + k;
                    synth_scene_with(layout, seed, cfg.sparsity).map(|s| (format!("synth_{seed:05}"), s))
                })
                .collect()
        }
    }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Outpainter<f32>,
    pub step: usize,
    g_opt: Adam<f32>,
    d_opt: Adam<f32>,
    data: Vec<(String, Sample)>,
    targets: Vec<Array3<f32>>,
    obj: Objective,
    exec: Exec,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, data: Vec<(String, Sample)>) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidInput("empty dataset".into()));
        }
        let model = Outpainter::<f32>::new(cfg.model(), cfg.seed)?;
        let g_opt = Adam::new(cfg.adam(cfg.g_lr), &model.g_params);
        let d_opt = Adam::new(cfg.adam(cfg.d_lr), &model.d_params);
        let targets = data.iter().map(|(_, s)| s.full_rgb.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2);
        Ok(Trainer {
            obj: cfg.objective()?,
            exec: cfg.exec(),
            cfg,
            model,
            step: 0,
            g_opt,
            d_opt,
            data,
            targets,
            order: Vec::new(),
            cursor: 0,
            rng,
        })
    }

    pub fn data(&self) -> &[(String, Sample)] {
        &self.data
    }

    /// Indices of the next batch; epochs are reshuffled.
    fn next_batch(&mut self) -> Vec<usize> {
        (0..self.cfg.batch_size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.order = (0..self.data.len()).collect();
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }

    /// One generator update followed by one discriminator update.
    pub fn step(&mut self) -> Result<StepLog> {
        let batch = self.next_batch();
        let n = batch.len() as f32;
        let sn = self.model.disc.normalize_weights(&mut self.model.d_params);
        let (model, data, targets, obj) = (&self.model, &self.data, &self.targets, &self.obj);

        let gen = self
            .exec
            .map(&batch, |&k| {
                let s = &data[k].1;
                generator_step(model, &sn, &s.depth, &s.input_rgb, &targets[k], obj)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let mut parts = LossParts::default();
        let mut g_total = 0.0;
        let mut l1 = 0.0;
        for (g, &k) in gen.iter().zip(&batch) {
            parts.adv += g.parts.adv / n as f64;
            parts.pixel += g.parts.pixel / n as f64;
            parts.edge += g.parts.edge / n as f64;
            parts.cm += g.parts.cm / n as f64;
            g_total += g.total / n as f64;
            l1 += masked_l1(&g.output, &targets[k], &data[k].1.input_rgb.mask().complement()) / n as f64;
        }
        let mut g_grads = Grads::sum(gen.iter().map(|g| g.grads.clone()).collect()).expect("non-empty batch");
        g_grads.scale(1.0 / n);
        if !g_total.is_finite() || !g_grads.all_finite() {
            return Err(self.abort(&batch, &format!("generator loss {g_total} ({parts:?})")));
        }

        let disc = self
            .exec
            .map(&gen.iter().zip(&batch).collect::<Vec<_>>(), |&(g, &k)| {
                discriminator_step(model, &sn, &targets[k], &g.output, &data[k].1.input_rgb, &g.cond)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let d_loss = disc.iter().map(|d| d.loss).sum::<f64>() / n as f64;
        let d_real = disc.iter().map(|d| d.real_score).sum::<f64>() / n as f64;
        let d_fake = disc.iter().map(|d| d.fake_score).sum::<f64>() / n as f64;
        let mut d_grads = Grads::sum(disc.into_iter().map(|d| d.grads).collect()).expect("non-empty batch");
        d_grads.scale(1.0 / n);
        if !d_loss.is_finite() || !d_grads.all_finite() {
            return Err(self.abort(&batch, &format!("discriminator loss {d_loss}")));
        }

        self.g_opt.step(&mut self.model.g_params, &g_grads);
        self.d_opt.step(&mut self.model.d_params, &d_grads);
        self.step += 1;
        Ok(StepLog {
            step: self.step,
            g_total,
            adv: parts.adv,
            pixel: parts.pixel,
            edge: parts.edge,
            cm: parts.cm,
            d_loss,
            d_real,
            d_fake,
            l1_unknown: l1,
        })
    }

    /// Dumps the offending batch and builds the numeric-failure error.
    fn abort(&self, batch: &[usize], what: &str) -> Error {
        let dir = self.cfg.out_dir.join(format!("nonfinite_step_{:06}", self.step + 1));
        let mut note = String::new();
        for &k in batch {
            let (name, s) = &self.data[k];
            if let Err(e) = save_sample(s, &dir.join(name)) {
                note = format!(" (dump failed: {e})");
            }
        }
        let _ = fs::write(dir.join("reason.txt"), what);
        Error::Numeric(format!("step {}: {what}; batch dumped to {}{note}", self.step + 1, dir.display()))
    }

    /// Input / prediction / ground truth / edges for the first sample.
    pub fn montage(&self) -> Result<Array3<f32>> {
        let (_, s) = &self.data[0];
        let (pred, edges) = infer(&self.model, s)?;
        montage(&[vec![s.input_rgb.rgb().clone(), pred, s.full_rgb.clone(), mask_image(&edges)]])
    }
}

pub fn checkpoint_path(out_dir: &Path, step: usize) -> PathBuf {
    out_dir.join(format!("ckpt_{step:06}.bin"))
}

pub const FINAL_CHECKPOINT: &str = "final.bin";

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoints: Vec<PathBuf>,
    pub log: Vec<StepLog>,
}

/// Full run: writes the resolved config, `loss.csv`, periodic checkpoints and
/// montages, and `final.bin`.
pub fn train(cfg: TrainConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let data = load_dataset(&cfg)?;
    train_on(cfg, data)
}

pub fn train_on(cfg: TrainConfig, data: Vec<(String, Sample)>) -> Result<TrainSummary> {
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    let mut trainer = Trainer::new(cfg, data)?;
    let mut csv = csv::Writer::from_path(out.join("loss.csv"))?;
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let (steps, every, dump, log_every) =
        (trainer.cfg.steps, trainer.cfg.checkpoint_every, trainer.cfg.dump_every, trainer.cfg.log_every);
    for _ in 0..steps {
        let row = trainer.step()?;
        csv.serialize(row)?;
        let s = row.step;
        if s % log_every == 0 || s == steps {
            csv.flush()?;
            info!(
                "step {s}: G {:.4} (adv {:.3} pix {:.4} edge {:.4} cm {:.4}) D {:.4} L1u {:.4}",
                row.g_total, row.adv, row.pixel, row.edge, row.cm, row.d_loss, row.l1_unknown
            );
        }
        if every > 0 && s % every == 0 && s != steps {
            let p = checkpoint_path(&out, s);
            save_checkpoint(&trainer.model, s as u64, &p)?;
            checkpoints.push(p);
        }
        if dump > 0 && (s % dump == 0 || s == steps) {
            save_rgb_png(&trainer.montage()?, &out.join(format!("montage_{s:06}.png")))?;
        }
        log.push(row);
    }
    csv.flush()?;
    let p = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&trainer.model, steps as u64, &p)?;
    checkpoints.push(p);
    Ok(TrainSummary { checkpoints, log })
}
