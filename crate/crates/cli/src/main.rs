use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use depth_outpaint::harness::montage::{mask_image, montage_dirs, PANEL_FILES};
use depth_outpaint::harness::{evaluate, infer, load_checkpoint, train, write_report, TrainConfig};
use depth_outpaint::ingestion::io::{discover_samples, load_sample, save_rgb_png};
use depth_outpaint::ingestion::{save_sample, synth_scene_with, Layout, DEFAULT_SPARSITY};
use depth_outpaint::{Error, Exec, Result};
use log::info;

#[derive(Parser)]
#[command(name = "outpaint", version, about = "Depth-guided image outpainting")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write synthetic samples, one directory each.
    Synth {
        #[arg(long, default_value_t = 8)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_SPARSITY)]
        sparsity: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = Layout::STANDARD.height)]
        height: usize,
        #[arg(long, default_value_t = Layout::STANDARD.width)]
        width: usize,
    },
    /// Train from a config file plus `--key=value` overrides.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Outpaint one sample directory.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on every sample under a directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Grid of input / prediction / ground truth / edges from `infer` outputs.
    Montage {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { count, seed, sparsity, out, height, width } => {
            let layout = Layout::new(height, width)?;
            for s in seed..seed + count {
                let sample = synth_scene_with(layout, s, sparsity)?;
                save_sample(&sample, &out.join(format!("synth_{s:05}")))?;
            }
            info!("wrote {count} samples to {}", out.display());
        }
        Cmd::Train { config, overrides } => {
            let cfg = TrainConfig::load(config.as_deref(), &overrides)?;
            let summary = train(cfg)?;
            if let Some(last) = summary.log.last() {
                println!("final step {}: G {:.4} D {:.4} L1u {:.4}", last.step, last.g_total, last.d_loss, last.l1_unknown);
            }
            for p in summary.checkpoints {
                println!("{}", p.display());
            }
        }
        Cmd::Infer { checkpoint, input, out } => {
            let (model, _) = load_checkpoint(&checkpoint)?;
            let sample = load_sample(&input)?;
            let (pred, edges) = infer(&model, &sample)?;
            let panels = [sample.input_rgb.rgb().clone(), pred, sample.full_rgb.clone(), mask_image(&edges)];
            for (file, img) in PANEL_FILES.iter().zip(&panels) {
                save_rgb_png(img, &out.join(file))?;
            }
        }
        Cmd::Eval { checkpoint, data, report, workers } => {
            let (model, _) = load_checkpoint(&checkpoint)?;
            let dirs = discover_samples(&data)?;
            if dirs.is_empty() {
                return Err(Error::InvalidInput(format!("no samples under {}", data.display())));
            }
            let dataset = dirs
                .iter()
                .map(|d| Ok((name_of(d), load_sample(d)?)))
                .collect::<Result<Vec<_>>>()?;
            let exec = if workers > 1 { Exec::Parallel } else { Exec::Sequential };
            let r = evaluate(&model, &dataset, exec)?;
            write_report(&r, &report)?;
            println!("{}", serde_json::to_string_pretty(&r.aggregate)?);
        }
        Cmd::Montage { inputs, out } => {
            let dirs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
            montage_dirs(&dirs, &out)?;
        }
    }
    Ok(())
}

fn name_of(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
