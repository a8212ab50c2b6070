//! Command-line front end: `train`, `evaluate`, `ablate`, and `render`
//! subcommands over the `roi-jscc` library.
//!
//! Every failure path exits nonzero with a single diagnostic line on
//! stderr; the exit code encodes the error class (see `Error::exit_code`).

use clap::{Parser, Subcommand};
use roi_jscc::autodiff::Tape;
use roi_jscc::channel::Snr;
use roi_jscc::data::{crop, load_image};
use roi_jscc::geometry::{patch_rect, RoiPosition};
use roi_jscc::harness::{
    ablate, evaluate, load_checkpoint, train_with_options, Cpp, EvalRequest, RunConfig,
    TrainOptions, VariantId,
};
use roi_jscc::metrics::region_scores;
use roi_jscc::model::{forward_sample, reconstruction_image};
use roi_jscc::render::{comparison_panel, PanelEntry};
use roi_jscc::util::{stream_rng, Stream};
use roi_jscc::{Error, Result};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "roi-jscc",
    version,
    about = "ROI-guided joint source-channel coding over a simulated AWGN channel"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML config file.
    Train {
        /// Run config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Continue from the run's latest checkpoint instead of starting over.
        #[arg(long)]
        resume: bool,
        /// Suppress per-step progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Sweep a checkpoint over an (SNR, CPP) grid; write CSV tables and plots.
    Evaluate {
        /// Checkpoint file produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated SNRs in dB; `inf` or `noiseless` for a clean channel.
        #[arg(long)]
        snr: String,
        /// Comma-separated channel-per-pixel fractions, e.g. `1/12,1/24`.
        #[arg(long)]
        cpp: String,
        /// Output directory for report.csv, summary.csv, and plots.
        #[arg(long)]
        out: PathBuf,
        /// ROI-position draws averaged per test image.
        #[arg(long, default_value_t = 1)]
        gamma_draws: usize,
    },
    /// Train and evaluate ablation variants under shared seeds.
    Ablate {
        /// Base run config (TOML); variants inherit everything but flags.
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated variants, e.g. `full,no-rb,no-rl,uniform`.
        #[arg(long)]
        variants: String,
        /// Comma-separated training seeds (default: the config's seed).
        #[arg(long)]
        seeds: Option<String>,
        /// Suppress training progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Run one image through a checkpoint and write a side-by-side panel.
    Render {
        /// Checkpoint file produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input image (PNG, JPEG, or BMP).
        #[arg(long)]
        image: PathBuf,
        /// ROI grid position `row,col`, 1-based, e.g. `2,2`.
        #[arg(long)]
        gamma: String,
        /// Output PNG (default: `render.png` next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, resume, quiet } => {
            let cfg = RunConfig::from_path(&config)?;
            let report = train_with_options(&cfg, TrainOptions { resume, quiet })?;
            println!(
                "trained {} steps to step {}; loss {:.6} -> {:.6}",
                report.steps_run, report.final_step, report.initial_loss, report.final_loss
            );
            println!("checkpoint: {}", report.checkpoint_path.display());
            println!("loss log:   {}", report.log_path.display());
            Ok(())
        }
        Command::Evaluate { checkpoint, snr, cpp, out, gamma_draws } => {
            let req = EvalRequest {
                gamma_draws,
                out_dir: Some(out.clone()),
                quiet: false,
                ..EvalRequest::new(parse_snr_list(&snr)?, parse_cpp_list(&cpp)?)
            };
            let table = evaluate(&checkpoint, &req)?;
            println!(
                "evaluated {} rows over {} cells; outputs in {}",
                table.rows.len(),
                table.cells.len(),
                out.display()
            );
            Ok(())
        }
        Command::Ablate { config, variants, seeds, quiet } => {
            let cfg = RunConfig::from_path(&config)?;
            let variants = VariantId::parse_list(&variants)?;
            let seeds = match seeds {
                Some(s) => parse_seed_list(&s)?,
                None => vec![cfg.run.seed],
            };
            let table = ablate(&cfg, &variants, &seeds, quiet)?;
            let d_full = table.delta_roi_vs(VariantId::Full);
            let d_uni = table.delta_roi_vs(VariantId::Uniform);
            println!(
                "{:<20} {:>9} {:>9} {:>9} {:>10} {:>10}",
                "variant", "params", "psnr_roi", "psnr_avg", "d vs full", "d vs unif"
            );
            let fmt_d = |d: Option<f64>| d.map_or("-".to_string(), |v| format!("{v:+.3}"));
            for (i, o) in table.outcomes.iter().enumerate() {
                println!(
                    "{:<20} {:>9} {:>9.3} {:>9.3} {:>10} {:>10}",
                    o.variant.name(),
                    o.params,
                    o.psnr_roi,
                    o.psnr_avg,
                    fmt_d(d_full[i]),
                    fmt_d(d_uni[i])
                );
            }
            println!("table: {}", cfg.run.out_dir.join("ablation.csv").display());
            Ok(())
        }
        Command::Render { checkpoint, image, gamma, out } => {
            let out = out.unwrap_or_else(|| checkpoint.with_file_name("render.png"));
            render_image(&checkpoint, &image, &gamma, &out)
        }
    }
}

fn render_image(
    checkpoint: &std::path::Path,
    image_path: &std::path::Path,
    gamma: &str,
    out: &std::path::Path,
) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let (ps, model) = ck.instantiate()?;
    let cfg = &ck.config;
    let model_cfg = cfg.model_config();
    let gamma = parse_gamma(gamma, model_cfg.n_h, model_cfg.n_w)?;

    let img = load_image(image_path)?;
    let img = if model_cfg.validate_image(img.h, img.w).is_ok() {
        img
    } else {
        // Center-crop to the nearest model-compatible size; the crop mode is
        // deterministic, the rng argument is never consumed.
        let mut rng = stream_rng(cfg.run.seed, Stream::Crop, 0, 0);
        let cropped = crop(&img, cfg.eval_crop(), &mut rng)?;
        model_cfg.validate_image(cropped.h, cropped.w)?;
        eprintln!("note: cropped {}x{} input to {}x{}", img.h, img.w, cropped.h, cropped.w);
        cropped
    };

    let link = cfg.link_spec_at(cfg.snr(), img.h, img.w)?;
    // Step key 0 is free: training noise uses 1-based steps and evaluation
    // keys from 2^32 upward, so a render never replays either stream.
    let mut noise_rng = stream_rng(cfg.run.seed, Stream::Noise, 0, 0);
    let tape = Tape::new();
    let bind = ps.bind(&tape);
    let run = forward_sample(&tape, &model, &bind, &img, gamma, &link, &mut noise_rng)?;

    let xhat = reconstruction_image(img.h, img.w, &run.xhat.value());
    let scores = region_scores(&img, &xhat, &run.masks)?;
    let caption = format!(
        "recon {} psnr roi {:.2} avg {:.2}",
        cfg.snr(),
        scores.psnr_roi,
        scores.psnr_avg
    );
    let roi = patch_rect(&run.geometry.map, (gamma.h - 1, gamma.w - 1), img.h, img.w)?;
    let panel = comparison_panel(
        &[
            PanelEntry { caption: "original".to_string(), image: &img },
            PanelEntry { caption, image: &xhat },
        ],
        Some(roi),
    );
    panel.save_png(out)?;
    println!(
        "gamma ({}, {}): psnr_roi {:.3} dB, psnr_avg {:.3} dB, {} of {} symbols",
        gamma.h,
        gamma.w,
        scores.psnr_roi,
        scores.psnr_avg,
        run.tx.len(),
        link.k_budget
    );
    println!("panel: {}", out.display());
    Ok(())
}

fn parse_snr_list(s: &str) -> Result<Vec<Snr>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("noiseless") {
                Ok(Snr::Noiseless)
            } else {
                t.parse::<f64>().map(Snr::Db).map_err(|_| {
                    Error::config(format!("bad SNR '{t}' (want a dB number, 'inf', or 'noiseless')"))
                })
            }
        })
        .collect()
}

fn parse_cpp_list(s: &str) -> Result<Vec<Cpp>> {
    s.split(',').map(|t| t.trim().parse()).collect()
}

fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<u64>()
                .map_err(|_| Error::config(format!("bad seed '{t}' (want an unsigned integer)")))
        })
        .collect()
}

fn parse_gamma(s: &str, n_h: usize, n_w: usize) -> Result<RoiPosition> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let err = || Error::config(format!("bad gamma '{s}' (want 'row,col', 1-based)"));
    if parts.len() != 2 {
        return Err(err());
    }
    let h: usize = parts[0].parse().map_err(|_| err())?;
    let w: usize = parts[1].parse().map_err(|_| err())?;
    if h < 1 || h > n_h || w < 1 || w > n_w {
        return Err(Error::config(format!(
            "gamma ({h}, {w}) outside the {n_h}x{n_w} grid"
        )));
    }
    Ok(RoiPosition::new(h, w))
}
