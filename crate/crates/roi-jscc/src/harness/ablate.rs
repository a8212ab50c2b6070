//! Ablation runs: train and evaluate a family of variants under identical
//! seeds and report paired PSNR deltas against the full model and the
//! uniform baseline.

use crate::error::{Error, Result};
use crate::harness::config::{Cpp, RunConfig, Variant};
use crate::harness::evaluate::{evaluate, EvalRequest};
use crate::harness::train::{train_with_options, TrainOptions};
use crate::model::{AblationFlags, ParamSet};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

/// A named point in the ablation family: the full model, the full model
/// with one mechanism removed, or one of the baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantId {
    Full,
    NoMaskInjection,
    NoSplitProcessing,
    NoRoiLoss,
    NoRoiBandwidth,
    Uniform,
    Conv,
}

impl VariantId {
    pub const ALL: [VariantId; 7] = [
        VariantId::Full,
        VariantId::NoMaskInjection,
        VariantId::NoSplitProcessing,
        VariantId::NoRoiLoss,
        VariantId::NoRoiBandwidth,
        VariantId::Uniform,
        VariantId::Conv,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            VariantId::Full => "full",
            VariantId::NoMaskInjection => "no-mask-injection",
            VariantId::NoSplitProcessing => "no-split-processing",
            VariantId::NoRoiLoss => "no-roi-loss",
            VariantId::NoRoiBandwidth => "no-roi-bandwidth",
            VariantId::Uniform => "uniform",
            VariantId::Conv => "conv",
        }
    }

    /// Comma-separated list, e.g. `full,no-rb,uniform`.
    pub fn parse_list(s: &str) -> Result<Vec<VariantId>> {
        s.split(',')
            .map(|part| part.trim().parse())
            .collect()
    }

    /// Derive this variant's run config from a base config: same data,
    /// architecture, and channel; its own flags, seed, and output dir.
    pub fn apply(&self, base: &RunConfig, seed: u64, root: &Path) -> RunConfig {
        let mut cfg = base.clone();
        cfg.run.seed = seed;
        cfg.run.out_dir = root.join(self.name()).join(format!("s{seed}"));
        match self {
            VariantId::Full => {
                cfg.run.variant = Variant::RoiJscc;
                cfg.run.flags = None;
            }
            VariantId::Uniform => {
                cfg.run.variant = Variant::UniformBaseline;
                cfg.run.flags = None;
            }
            VariantId::Conv => {
                cfg.run.variant = Variant::ConvBaseline;
                cfg.run.flags = None;
            }
            removed => {
                let mut flags = AblationFlags::all_on();
                match removed {
                    VariantId::NoMaskInjection => flags.mask_injection = false,
                    VariantId::NoSplitProcessing => flags.split_processing = false,
                    VariantId::NoRoiLoss => flags.roi_loss = false,
                    VariantId::NoRoiBandwidth => flags.roi_bandwidth = false,
                    _ => unreachable!(),
                }
                cfg.run.variant = Variant::RoiJscc;
                cfg.run.flags = Some(flags);
            }
        }
        cfg
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(VariantId::Full),
            "no-mask-injection" | "no-mi" => Ok(VariantId::NoMaskInjection),
            "no-split-processing" | "no-sp" => Ok(VariantId::NoSplitProcessing),
            "no-roi-loss" | "no-rl" => Ok(VariantId::NoRoiLoss),
            "no-roi-bandwidth" | "no-rb" => Ok(VariantId::NoRoiBandwidth),
            "uniform" => Ok(VariantId::Uniform),
            "conv" => Ok(VariantId::Conv),
            other => Err(Error::config(format!(
                "unknown ablation variant '{other}' (known: full, no-mask-injection, \
                 no-split-processing, no-roi-loss, no-roi-bandwidth, uniform, conv)"
            ))),
        }
    }
}

/// Aggregated result of one variant across all seeds.
#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub variant: VariantId,
    /// Trainable scalar count (identical for all transformer variants).
    pub params: usize,
    /// `(seed, psnr_roi, psnr_avg)` per training seed.
    pub per_seed: Vec<(u64, f64, f64)>,
    pub psnr_roi: f64,
    pub psnr_avg: f64,
}

/// All variant outcomes of one ablation, in request order.
#[derive(Debug, Clone)]
pub struct AblationTable {
    pub outcomes: Vec<VariantOutcome>,
}

impl AblationTable {
    pub fn outcome(&self, v: VariantId) -> Option<&VariantOutcome> {
        self.outcomes.iter().find(|o| o.variant == v)
    }

    /// Mean PSNR_ROI differences against a reference variant, `None` when
    /// the reference was not part of the run.
    pub fn delta_roi_vs(&self, reference: VariantId) -> Vec<Option<f64>> {
        let base = self.outcome(reference).map(|o| o.psnr_roi);
        self.outcomes
            .iter()
            .map(|o| base.map(|b| o.psnr_roi - b))
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d_full = self.delta_roi_vs(VariantId::Full);
        let d_uniform = self.delta_roi_vs(VariantId::Uniform);
        let fmt_delta = |d: Option<f64>| d.map_or(String::new(), |v| format!("{v:.4}"));
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "variant,params,psnr_roi,psnr_avg,delta_roi_vs_full,delta_roi_vs_uniform")?;
        for (i, o) in self.outcomes.iter().enumerate() {
            writeln!(
                w,
                "{},{},{:.4},{:.4},{},{}",
                o.variant,
                o.params,
                o.psnr_roi,
                o.psnr_avg,
                fmt_delta(d_full[i]),
                fmt_delta(d_uniform[i])
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The CPP the evaluation grid uses: the configured fraction, or the fixed
/// `k` expressed as the exact fraction `k/(3HW)` of the training size.
fn eval_cpp(cfg: &RunConfig) -> Result<Cpp> {
    if let Some(cpp) = cfg.channel.cpp {
        return Ok(cpp);
    }
    let k = cfg.channel.k.expect("validated: cpp or k");
    let (h, w) = cfg.train_image_size().ok_or_else(|| {
        Error::config("a fixed-k config needs a fixed training image size to derive its CPP")
    })?;
    Cpp::new(k as u64, (3 * h * w) as u64)
}

/// Train and evaluate each variant for each seed under common random
/// numbers; write `ablation.csv` under the base output dir.
pub fn ablate(
    base: &RunConfig,
    variants: &[VariantId],
    seeds: &[u64],
    quiet: bool,
) -> Result<AblationTable> {
    base.validate()?;
    if variants.is_empty() {
        return Err(Error::config("ablation needs at least one variant"));
    }
    if seeds.is_empty() {
        return Err(Error::config("ablation needs at least one seed"));
    }
    let root = base.run.out_dir.clone();
    let cpp = eval_cpp(base)?;
    let mut outcomes = Vec::with_capacity(variants.len());
    let mut budget: Option<usize> = None;
    for &variant in variants {
        let mut per_seed = Vec::with_capacity(seeds.len());
        let mut params = 0usize;
        for &seed in seeds {
            let cfg = variant.apply(base, seed, &root);
            let mut ps = ParamSet::new(cfg.run.seed);
            cfg.build_model(&mut ps)?;
            params = ps.num_scalars();
            if !quiet {
                println!("ablate: training {variant} seed {seed} ({params} params)");
            }
            let report = train_with_options(&cfg, TrainOptions { resume: false, quiet })?;
            let req = EvalRequest {
                out_dir: Some(cfg.run.out_dir.join("eval")),
                ..EvalRequest::new(vec![cfg.snr()], vec![cpp])
            };
            let table = evaluate(&report.checkpoint_path, &req)?;
            let cell = &table.cells[0];
            // Paired comparison requires one budget across every variant.
            match budget {
                None => budget = Some(cell.k),
                Some(k) if k == cell.k => {}
                Some(k) => {
                    return Err(Error::config(format!(
                        "refusing to compare mismatched budgets: {} uses k = {}, expected {k}",
                        variant, cell.k
                    )))
                }
            }
            per_seed.push((seed, cell.psnr_roi, cell.psnr_avg));
        }
        let n = per_seed.len() as f64;
        let outcome = VariantOutcome {
            variant,
            params,
            psnr_roi: per_seed.iter().map(|s| s.1).sum::<f64>() / n,
            psnr_avg: per_seed.iter().map(|s| s.2).sum::<f64>() / n,
            per_seed,
        };
        if !quiet {
            println!(
                "ablate: {} mean psnr_roi {:.3} psnr_avg {:.3}",
                outcome.variant, outcome.psnr_roi, outcome.psnr_avg
            );
        }
        outcomes.push(outcome);
    }
    let table = AblationTable { outcomes };
    std::fs::create_dir_all(&root)?;
    table.write_csv(&root.join("ablation.csv"))?;
    Ok(table)
}
