use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datamodel::LossWeights;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ingestion::Layout;
use crate::losses::EdgeLossConfig;
use crate::model::{ModelConfig, Objective};
use crate::nn::AdamConfig;

/// Training run settings. Serialised as flat TOML; every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub g_lr: f64,
    pub d_lr: f64,
    pub beta1: f64,
    pub beta2: f64,

    pub lambda_adv: f64,
    pub lambda_p: f64,
    pub lambda_e: f64,
    pub lambda_cm: f64,
    pub canny_low: f64,
    pub canny_high: f64,
    pub berhu_c: f64,

    /// Directory of saved samples; synthetic data is generated when absent.
    pub data_dir: Option<PathBuf>,
    pub synth_seed: u64,
    pub synth_count: usize,
    pub sparsity: f64,
    pub height: usize,
    pub width: usize,

    pub widths: Vec<usize>,
    pub disc_widths: Vec<usize>,
    pub partial_conv: bool,
    pub dgf: bool,
    pub depth_scale: f64,
    pub sn_iters: usize,

    pub out_dir: PathBuf,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Steps between montage dumps; 0 disables them.
    pub dump_every: usize,
    pub log_every: usize,
    /// 1 runs every per-sample pass on the calling thread.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        let e = EdgeLossConfig::default();
        let m = ModelConfig::default();
        TrainConfig {
            seed: 0,
            steps: 2000,
            batch_size: 1,
            g_lr: 1e-4,
            d_lr: 4e-4,
            beta1: 0.5,
            beta2: 0.999,
            lambda_adv: w.lambda_adv,
            lambda_p: w.lambda_p,
            lambda_e: w.lambda_e,
            lambda_cm: w.lambda_cm,
            canny_low: e.low,
            canny_high: e.high,
            berhu_c: e.berhu_c,
            data_dir: None,
            synth_seed: 0,
            synth_count: 8,
            sparsity: crate::ingestion::DEFAULT_SPARSITY,
            height: 256,
            width: 512,
            widths: m.widths,
            disc_widths: m.disc_widths,
            partial_conv: m.partial_conv,
            dgf: m.dgf,
            depth_scale: m.depth_scale,
            sn_iters: m.sn_iters,
            out_dir: PathBuf::from("runs/default"),
            checkpoint_every: 500,
            dump_every: 500,
            log_every: 50,
            workers: 1,
        }
    }
}

impl TrainConfig {
    /// Parses TOML text, then applies `key=value` overrides (values in TOML syntax,
    /// bare words read as strings).
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        for o in overrides {
            let o = o.trim_start_matches("--");
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("override `{o}` is not key=value")))?;
            let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
                Ok(mut t) => t.remove("v").expect("parsed key"),
                Err(_) => toml::Value::String(raw.to_string()),
            };
            table.insert(key.trim().to_string(), value);
        }
        let cfg: TrainConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => {
                if !p.is_file() {
                    return Err(Error::MissingFile(p.to_path_buf()));
                }
                std::fs::read_to_string(p)?
            }
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("steps", self.steps),
            ("batch_size", self.batch_size),
            ("workers", self.workers),
            ("log_every", self.log_every),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidInput(format!("{k} must be positive")));
        }
        if self.data_dir.is_none() && self.synth_count == 0 {
            return Err(Error::InvalidInput("synth_count must be positive".into()));
        }
        if !(self.g_lr > 0.0 && self.d_lr > 0.0) {
            return Err(Error::InvalidInput("learning rates must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::InvalidInput("betas must lie in [0, 1)".into()));
        }
        if let Some(d) = &self.data_dir {
            if !d.is_dir() {
                return Err(Error::MissingFile(d.clone()));
            }
        }
        self.weights()?;
        self.model().validate()?;
        Layout::new(self.height, self.width)?;
        Ok(())
    }

    pub fn weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.lambda_adv, self.lambda_p, self.lambda_e, self.lambda_cm)
    }

    pub fn objective(&self) -> Result<Objective> {
        Ok(Objective {
            weights: self.weights()?,
            edge: EdgeLossConfig { low: self.canny_low, high: self.canny_high, berhu_c: self.berhu_c },
        })
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            widths: self.widths.clone(),
            disc_widths: self.disc_widths.clone(),
            partial_conv: self.partial_conv,
            dgf: self.dgf,
            depth_scale: self.depth_scale,
            sn_iters: self.sn_iters,
        }
    }

    pub fn layout(&self) -> Result<Layout> {
        Layout::new(self.height, self.width)
    }

    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig { lr, beta1: self.beta1, beta2: self.beta2, eps: 1e-8 }
    }

    pub fn exec(&self) -> Exec {
        if self.workers > 1 {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}
