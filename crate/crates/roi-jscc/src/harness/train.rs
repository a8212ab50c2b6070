//! The training loop: seeded per-step streams, per-sample ROI draws,
//! divergence abort, a per-step loss log, periodic checkpoints, and
//! bit-exact resume.
//!
//! Every random decision of step `s` is keyed by `(run seed, stream, s)`,
//! never by an RNG carried across steps, so a resumed run replays the
//! exact batch compositions, ROI positions, and noise realizations the
//! uninterrupted run would have seen.

use crate::autodiff::Tape;
use crate::channel::Snr;
use crate::data::{sample_gamma, Dataset};
use crate::error::{Error, Result};
use crate::harness::checkpoint::{load_checkpoint, save_checkpoint};
use crate::harness::config::RunConfig;
use crate::harness::optim::{clip_global_norm, global_grad_norm, Adam, AdamConfig};
use crate::model::pipeline::{batch_loss, forward_sample};
use crate::model::ParamSet;
use crate::util::{stream_rng, Stream};
use rand::Rng;
use std::io::Write;
use std::path::PathBuf;

/// Behavior switches for [`train_with_options`].
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    /// Continue from `<out_dir>/latest.ckpt` (which must exist and match
    /// the config) instead of starting fresh.
    pub resume: bool,
    /// Suppress stdout progress lines.
    pub quiet: bool,
}

/// What a training invocation did.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Steps executed by this invocation (0 when resuming a finished run).
    pub steps_run: u64,
    /// Step counter after the run; equals the configured total.
    pub final_step: u64,
    /// Batch loss at the first and last step this invocation executed.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

/// Train from scratch (see [`train_with_options`] for resume).
pub fn train(cfg: &RunConfig) -> Result<TrainReport> {
    train_with_options(cfg, TrainOptions::default())
}

/// Configs must agree for a resume to be sound, except for the fields a
/// continuation legitimately changes: the step target and the output dir.
fn resume_compatible(a: &RunConfig, b: &RunConfig) -> bool {
    let mut a = a.clone();
    let mut b = b.clone();
    a.train.steps = 0;
    b.train.steps = 0;
    a.run.out_dir = PathBuf::new();
    b.run.out_dir = PathBuf::new();
    a == b
}

/// Drop log rows beyond `step` (stale rows from a run that died after its
/// last checkpoint), keeping the header.
fn trim_log(path: &PathBuf, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(path)?;
    let kept: Vec<&str> = text
        .lines()
        .filter(|line| {
            line.starts_with("step,")
                || line
                    .split(',')
                    .next()
                    .and_then(|s| s.parse::<u64>().ok())
                    .is_some_and(|s| s <= step)
        })
        .collect();
    std::fs::write(path, kept.join("\n") + "\n")?;
    Ok(())
}

pub fn train_with_options(cfg: &RunConfig, opts: TrainOptions) -> Result<TrainReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.run.out_dir)?;
    let checkpoint_path = cfg.run.out_dir.join("latest.ckpt");
    let log_path = cfg.run.out_dir.join("loss.csv");
    let seed = cfg.run.seed;
    let total = cfg.train.steps;

    let dataset = Dataset::load(&cfg.data.source, seed)?;
    let mut ps = ParamSet::new(seed);
    let model = cfg.build_model(&mut ps)?;
    let mut opt = Adam::new(&ps, AdamConfig::with_lr(cfg.train.lr));
    let mut start_step = 0u64;
    if opts.resume {
        let ck = load_checkpoint(&checkpoint_path)?;
        if !resume_compatible(&ck.config, cfg) {
            return Err(Error::config(
                "resume refused: checkpoint was trained under a different config",
            ));
        }
        let (restored, _) = ck.instantiate()?;
        ps = restored;
        let state = ck
            .opt
            .ok_or_else(|| Error::protocol("checkpoint lacks optimizer state, cannot resume"))?;
        opt = Adam::from_state(&ps, AdamConfig::with_lr(cfg.train.lr), state)?;
        start_step = ck.step;
        trim_log(&log_path, start_step)?;
    }
    if start_step >= total {
        return Err(Error::config(format!(
            "checkpoint is already at step {start_step}, nothing to do for steps = {total}"
        )));
    }

    let mut log = std::io::BufWriter::new(if opts.resume {
        std::fs::OpenOptions::new().create(true).append(true).open(&log_path)?
    } else {
        std::fs::File::create(&log_path)?
    });
    if start_step == 0 {
        writeln!(log, "step,loss,grad_norm")?;
    }

    let n_grid = (cfg.model.n_h, cfg.model.n_w);
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    for step in start_step + 1..=total {
        let mut batch_rng = stream_rng(seed, Stream::Batch, step, 0);
        let mut crop_rng = stream_rng(seed, Stream::Crop, step, 0);
        let tape = Tape::new();
        let bind = ps.bind(&tape);
        let mut samples = Vec::with_capacity(cfg.train.batch_size);
        for s in 0..cfg.train.batch_size {
            let idx = batch_rng.random_range(0..dataset.len());
            let image = match cfg.data.crop {
                Some(mode) => dataset.cropped(idx, mode, &mut crop_rng)?,
                None => dataset.get(idx).clone(),
            };
            let mut gamma_rng = stream_rng(seed, Stream::Gamma, step, s as u64);
            let gamma = sample_gamma(n_grid.0, n_grid.1, cfg.data.gamma_mode, &mut gamma_rng)?;
            let mut noise_rng = stream_rng(seed, Stream::Noise, step, s as u64);
            // Mixed-SNR mode draws the sample's SNR as the noise stream's
            // first decision; the default is the fixed configured channel.
            let snr = match &cfg.train.mixed_snr {
                Some(list) => Snr::Db(list[noise_rng.random_range(0..list.len())]),
                None => cfg.snr(),
            };
            let link = cfg.link_spec_at(snr, image.h, image.w)?;
            samples.push(forward_sample(&tape, &model, &bind, &image, gamma, &link, &mut noise_rng)?);
        }
        let loss = batch_loss(&samples);
        let loss_val = loss.item();
        if !loss_val.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite loss {loss_val} at step {step}; aborting before the update"
            )));
        }
        let grads = tape.backward(loss);
        let mut grad_list: Vec<_> =
            ps.ids().map(|id| grads.wrt_or_zero(bind.get(id))).collect();
        let grad_norm = match cfg.train.clip_norm {
            Some(max) => clip_global_norm(&mut grad_list, max),
            None => global_grad_norm(&grad_list),
        };
        if !grad_norm.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite gradient norm at step {step}; aborting before the update"
            )));
        }
        drop(grads);
        drop(samples);
        opt.step(&mut ps, &grad_list);

        if initial_loss.is_nan() {
            initial_loss = loss_val;
        }
        final_loss = loss_val;
        writeln!(log, "{step},{loss_val},{grad_norm}")?;
        if !opts.quiet && (step % cfg.train.log_every == 0 || step == total) {
            println!("step {step}/{total}  loss {loss_val:.6}  grad {grad_norm:.4}");
        }
        if step % cfg.train.checkpoint_every == 0 || step == total {
            log.flush()?;
            save_checkpoint(&checkpoint_path, cfg, &ps, step, Some(opt.state()))?;
        }
    }
    log.flush()?;
    Ok(TrainReport {
        steps_run: total - start_step,
        final_step: total,
        initial_loss,
        final_loss,
        checkpoint_path,
        log_path,
    })
}
