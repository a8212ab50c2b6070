//! Run configuration: the TOML file consumed by `train`, `evaluate`, and
//! `ablate`, with all cross-field validation in one place.
//!
//! A complete file looks like:
//!
//! ```toml
//! [run]
//! variant = "roi-jscc"            # roi-jscc | uniform-baseline | conv-baseline
//! seed = 7
//! out_dir = "runs/full"
//!
//! [run.flags]                     # optional, roi-jscc only: ablation switches
//! roi_bandwidth = false
//!
//! [model]
//! stages = 2
//! channels = [16, 32]
//! blocks = [1, 1]
//! c_m = 8
//! heads = 2
//! window = 4
//! n_h = 4
//! n_w = 4
//!
//! [data]
//! source = { kind = "toy", count = 64, size = 64 }
//! gamma_mode = "any"
//!
//! [channel]
//! snr_db = 10.0                   # or `noiseless = true`
//! cpp = "1/12"                    # or `k = 1024`
//!
//! [link]
//! tau = 0.1
//! alpha = 1.0
//! beta = 0.5
//!
//! [train]
//! steps = 2000
//! batch_size = 2
//! lr = 1e-4
//! ```

use crate::channel::{symbols_for_cpp, ChannelSpec, Snr};
use crate::data::{CropMode, DataSource, GammaMode};
use crate::error::{Error, Result};
use crate::metrics::LossWeights;
use crate::model::pipeline::{LinkSpec, Model};
use crate::model::{AblationFlags, Codec, ConvCodec, ModelConfig, ParamSet};
use crate::util::{derive_seed, Stream};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Which architecture/objective family a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// The region-routed transformer with its ROI mechanisms (individually
    /// switchable via `[run.flags]`).
    RoiJscc,
    /// The same transformer with all four ROI mechanisms off.
    UniformBaseline,
    /// The plain convolutional autoencoder baseline.
    ConvBaseline,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::RoiJscc => "roi-jscc",
            Variant::UniformBaseline => "uniform-baseline",
            Variant::ConvBaseline => "conv-baseline",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "roi-jscc" => Ok(Variant::RoiJscc),
            "uniform-baseline" => Ok(Variant::UniformBaseline),
            "conv-baseline" => Ok(Variant::ConvBaseline),
            other => Err(Error::config(format!("unknown variant '{other}'"))),
        }
    }
}

/// Channel uses per pixel as an exact fraction (e.g. `1/12`), so budget
/// arithmetic never rounds through floating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cpp {
    pub num: u64,
    pub den: u64,
}

impl Cpp {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::config(format!(
                "cpp must be a positive fraction, got {num}/{den}"
            )));
        }
        Ok(Cpp { num, den })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Complex symbol budget for an `h x w` RGB image.
    pub fn symbols(&self, h: usize, w: usize) -> Result<usize> {
        symbols_for_cpp(self.num, self.den, h, w)
    }
}

impl fmt::Display for Cpp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Cpp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parse_int = |part: &str| {
            part.trim()
                .parse::<u64>()
                .map_err(|_| Error::config(format!("cpp '{s}' is not a fraction like 1/12")))
        };
        match s.split_once('/') {
            Some((num, den)) => Cpp::new(parse_int(num)?, parse_int(den)?),
            None => Cpp::new(parse_int(s)?, 1),
        }
    }
}

impl Serialize for Cpp {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Cpp {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `[run]`: identity of the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub variant: Variant,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Ablation switches; only meaningful (and only accepted) for the
    /// `roi-jscc` variant. Missing flags default to on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flags: Option<AblationFlags>,
}

/// `[data]`: where images come from and how γ is drawn in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    /// Evaluation images. Defaults: a fresh derived-seed toy set for toy
    /// sources, the training directory for directory sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_source: Option<DataSource>,
    /// Size of the derived toy evaluation set.
    #[serde(default = "default_eval_count")]
    pub eval_count: usize,
    /// Training crop; `None` feeds images at native size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<CropMode>,
    /// Training-time ROI placement (evaluation always samples interior).
    #[serde(default = "default_gamma_mode")]
    pub gamma_mode: GammaMode,
}

fn default_eval_count() -> usize {
    8
}

fn default_gamma_mode() -> GammaMode {
    GammaMode::Any
}

/// `[channel]`: SNR and the bandwidth budget (exactly one of `cpp`/`k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub noiseless: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpp: Option<Cpp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

/// `[link]`: allocation boost and region loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkSection {
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LinkSection {
    fn default() -> Self {
        LinkSection { tau: 0.1, alpha: 1.0, beta: 0.5 }
    }
}

/// `[train]`: optimization schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: u64,
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: String,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Global gradient-norm clip; absent (default) disables clipping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    /// Stdout progress interval in steps (the CSV log records every step).
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    /// Off by default: when set, each training sample draws its SNR
    /// uniformly from this list instead of using `[channel].snr_db`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixed_snr: Option<Vec<f64>>,
}

fn default_optimizer() -> String {
    "adam".to_string()
}

fn default_lr() -> f64 {
    1e-4
}

fn default_log_every() -> u64 {
    50
}

fn default_checkpoint_every() -> u64 {
    500
}

/// One experiment: variant, architecture, data, channel, and schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub data: DataSection,
    pub channel: ChannelSection,
    #[serde(default)]
    pub link: LinkSection,
    pub train: TrainSection,
}

/// `[model]`: architecture fields (ablation flags live under `[run.flags]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub stages: usize,
    pub channels: Vec<usize>,
    pub blocks: Vec<usize>,
    pub c_m: usize,
    pub heads: usize,
    pub window: usize,
    pub n_h: usize,
    pub n_w: usize,
    #[serde(default = "default_routing_threshold")]
    pub routing_threshold: usize,
}

fn default_routing_threshold() -> usize {
    crate::geometry::DEFAULT_ROUTING_THRESHOLD
}

impl RunConfig {
    /// Parse and validate a TOML file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Parse and validate TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field validation; called by the parsers and after programmatic
    /// construction.
    pub fn validate(&self) -> Result<()> {
        if self.run.flags.is_some() && self.run.variant != Variant::RoiJscc {
            return Err(Error::config(format!(
                "[run.flags] only applies to variant roi-jscc, not {}",
                self.run.variant
            )));
        }
        self.model_config().validate()?;
        if self.train.optimizer != "adam" {
            return Err(Error::config(format!(
                "unknown optimizer '{}' (only 'adam' is available)",
                self.train.optimizer
            )));
        }
        if self.train.steps == 0 || self.train.batch_size == 0 {
            return Err(Error::config("steps and batch_size must be positive"));
        }
        if !(self.train.lr.is_finite() && self.train.lr > 0.0) {
            return Err(Error::config(format!("lr must be positive, got {}", self.train.lr)));
        }
        if let Some(c) = self.train.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config(format!("clip_norm must be positive, got {c}")));
            }
        }
        if self.train.log_every == 0 || self.train.checkpoint_every == 0 {
            return Err(Error::config("log_every and checkpoint_every must be positive"));
        }
        if let Some(list) = &self.train.mixed_snr {
            if list.is_empty() || list.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("mixed_snr must be a non-empty list of finite dB values"));
            }
        }
        match (self.channel.snr_db, self.channel.noiseless) {
            (Some(v), false) if v.is_finite() => {}
            (None, true) => {}
            (Some(_), true) => {
                return Err(Error::config("set either snr_db or noiseless = true, not both"))
            }
            _ => return Err(Error::config("channel needs snr_db (finite dB) or noiseless = true")),
        }
        match (self.channel.cpp, self.channel.k) {
            (Some(_), Some(_)) => {
                return Err(Error::config("set either cpp or k, not both"))
            }
            (None, None) => return Err(Error::config("channel needs a bandwidth budget: cpp or k")),
            _ => {}
        }
        if self.data.eval_count == 0 {
            return Err(Error::config("eval_count must be positive"));
        }
        // Loss weights validate their own ranges; surface as config errors.
        LossWeights::new(self.link.alpha, self.link.beta)
            .map_err(|e| Error::config(format!("[link] {e}")))?;
        if !(self.link.tau.is_finite() && (0.0..1.0).contains(&self.link.tau)) {
            return Err(Error::config(format!("tau must lie in [0, 1), got {}", self.link.tau)));
        }
        // When the training image size is known now, settle budget
        // divisibility at startup instead of at step 1.
        if let Some((h, w)) = self.train_image_size() {
            let cfg = self.model_config();
            match self.run.variant {
                Variant::ConvBaseline => cfg.validate_image_conv(h, w)?,
                _ => cfg.validate_image(h, w)?,
            }
            let b = cfg.bottleneck_positions(h, w);
            let k = self.symbol_budget(h, w)?;
            if k % b != 0 {
                return Err(Error::config(format!(
                    "budget k = {k} is not divisible by the {b} bottleneck positions of a {h}x{w} image"
                )));
            }
            if k / b > cfg.c_m {
                return Err(Error::config(format!(
                    "budget k = {k} implies {} symbols per position, above c_m = {}",
                    k / b,
                    cfg.c_m
                )));
            }
        }
        Ok(())
    }

    /// Architecture plus the variant's effective ablation flags.
    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            stages: m.stages,
            channels: m.channels.clone(),
            blocks: m.blocks.clone(),
            c_m: m.c_m,
            heads: m.heads,
            window: m.window,
            n_h: m.n_h,
            n_w: m.n_w,
            routing_threshold: m.routing_threshold,
            flags: self.effective_flags(),
        }
    }

    /// Flags after variant resolution: baselines force everything off.
    pub fn effective_flags(&self) -> AblationFlags {
        match self.run.variant {
            Variant::RoiJscc => self.run.flags.unwrap_or_else(AblationFlags::all_on),
            Variant::UniformBaseline | Variant::ConvBaseline => AblationFlags::all_off(),
        }
    }

    /// Construct the variant's model, registering parameters into `ps`.
    pub fn build_model(&self, ps: &mut ParamSet) -> Result<Model> {
        let cfg = self.model_config();
        Ok(match self.run.variant {
            Variant::ConvBaseline => Model::Conv(ConvCodec::new(ps, cfg)?),
            _ => Model::Roi(Codec::new(ps, cfg)?),
        })
    }

    /// Training image side lengths, when fixed by the config (crop size, or
    /// native toy size). Directory sources without a fixed-size crop vary.
    pub fn train_image_size(&self) -> Option<(usize, usize)> {
        match self.data.crop {
            Some(CropMode::Random { size }) | Some(CropMode::Center { size }) => Some((size, size)),
            Some(CropMode::CenterMultiple { .. }) => None,
            None => match self.data.source {
                DataSource::Toy { size, .. } => Some((size, size)),
                DataSource::Directory { .. } => None,
            },
        }
    }

    /// The fixed training-time channel.
    pub fn snr(&self) -> Snr {
        if self.channel.noiseless {
            Snr::Noiseless
        } else {
            Snr::Db(self.channel.snr_db.expect("validated"))
        }
    }

    /// Complex symbol budget for an `h x w` image under this config.
    pub fn symbol_budget(&self, h: usize, w: usize) -> Result<usize> {
        match (self.channel.cpp, self.channel.k) {
            (Some(cpp), None) => cpp.symbols(h, w),
            (None, Some(k)) => Ok(k),
            _ => unreachable!("validated"),
        }
    }

    /// Link parameters for an `h x w` image at the given SNR.
    pub fn link_spec_at(&self, snr: Snr, h: usize, w: usize) -> Result<LinkSpec> {
        Ok(LinkSpec {
            channel: ChannelSpec::new(snr),
            k_budget: self.symbol_budget(h, w)?,
            tau: self.link.tau,
            weights: LossWeights::new(self.link.alpha, self.link.beta)?,
        })
    }

    /// Link parameters at the configured training SNR.
    pub fn link_spec(&self, h: usize, w: usize) -> Result<LinkSpec> {
        self.link_spec_at(self.snr(), h, w)
    }

    /// Evaluation image source: explicit `eval_source`, else a derived-seed
    /// toy set (toy training) or the training directory (directory training).
    pub fn eval_source(&self) -> (DataSource, u64) {
        match (&self.data.eval_source, &self.data.source) {
            (Some(src), _) => (src.clone(), self.eval_data_seed()),
            (None, DataSource::Toy { size, .. }) => (
                DataSource::Toy { count: self.data.eval_count, size: *size },
                self.eval_data_seed(),
            ),
            (None, src @ DataSource::Directory { .. }) => (src.clone(), self.eval_data_seed()),
        }
    }

    /// Seed for evaluation image synthesis, disjoint from the training
    /// corpus stream so derived toy evaluation images are held out.
    fn eval_data_seed(&self) -> u64 {
        derive_seed(self.run.seed, Stream::Toy, 0x4556_414c, 1)
    }

    /// Evaluation crop: center-crop to the model's compatible multiple.
    pub fn eval_crop(&self) -> CropMode {
        CropMode::CenterMultiple { multiple: self.model_config().image_multiple() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A complete toy config in the documented layout.
    pub(crate) fn toy_toml() -> String {
        r#"
            [run]
            variant = "roi-jscc"
            seed = 7
            out_dir = "runs/full"

            [model]
            stages = 2
            channels = [16, 32]
            blocks = [1, 1]
            c_m = 8
            heads = 2
            window = 4
            n_h = 4
            n_w = 4

            [data]
            source = { kind = "toy", count = 64, size = 64 }

            [channel]
            snr_db = 10.0
            cpp = "1/12"

            [train]
            steps = 2000
            batch_size = 2
            lr = 1e-4
        "#
        .to_string()
    }

    // [DERIVED] Full parse: every section lands in the right field, and the
    // defaults fill unset keys with the documented values.
    #[test]
    fn parses_full_config_with_defaults() {
        let cfg = RunConfig::from_toml(&toy_toml()).unwrap();
        assert_eq!(cfg.run.variant, Variant::RoiJscc);
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.model.channels, vec![16, 32]);
        assert_eq!(cfg.model.routing_threshold, 4);
        assert_eq!(cfg.channel.cpp.unwrap(), Cpp::new(1, 12).unwrap());
        assert_eq!(cfg.link, LinkSection { tau: 0.1, alpha: 1.0, beta: 0.5 });
        assert_eq!(cfg.train.optimizer, "adam");
        assert_eq!(cfg.train.lr, 1e-4);
        assert_eq!(cfg.train.clip_norm, None);
        assert_eq!(cfg.train.log_every, 50);
        assert_eq!(cfg.data.gamma_mode, GammaMode::Any);
        assert_eq!(cfg.data.eval_count, 8);
        assert!(cfg.run.flags.is_none());
        assert_eq!(cfg.effective_flags(), AblationFlags::all_on());
    }

    // [PAPER] CPP = k/(3HW): "1/12" at 64x64 yields k = 3*64*64/12 = 1024.
    #[test]
    fn cpp_budget_arithmetic() {
        let cfg = RunConfig::from_toml(&toy_toml()).unwrap();
        assert_eq!(cfg.symbol_budget(64, 64).unwrap(), 1024);
        assert_eq!(cfg.train_image_size(), Some((64, 64)));
        let link = cfg.link_spec(64, 64).unwrap();
        assert_eq!(link.k_budget, 1024);
        assert_eq!(link.tau, 0.1);
    }

    // [DERIVED] Fraction parsing: round-trips through Display/FromStr, and
    // each malformed shape is rejected.
    #[test]
    fn cpp_parsing_round_trip() {
        for s in ["1/12", "1/24", "3", "2/5"] {
            let c: Cpp = s.parse().unwrap();
            assert_eq!(c.to_string(), s);
            let again: Cpp = c.to_string().parse().unwrap();
            assert_eq!(again, c);
        }
        assert_eq!("1/12".parse::<Cpp>().unwrap().value(), 1.0 / 12.0);
        for bad in ["", "0/12", "1/0", "a/b", "1/2/3", "-1/2", "1.5"] {
            assert!(bad.parse::<Cpp>().is_err(), "{bad} should not parse");
        }
    }

    fn patched(f: impl Fn(&mut RunConfig)) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_toml(&toy_toml()).unwrap();
        f(&mut cfg);
        cfg.validate().map(|_| cfg)
    }

    // [DERIVED] Each invariant rejects its violation with a config error.
    #[test]
    fn validation_rejects_bad_fields() {
        let cases: Vec<(&str, Box<dyn Fn(&mut RunConfig)>)> = vec![
            ("flags on baseline", Box::new(|c: &mut RunConfig| {
                c.run.variant = Variant::UniformBaseline;
                c.run.flags = Some(AblationFlags::all_off());
            })),
            ("bad optimizer", Box::new(|c| c.train.optimizer = "sgd".into())),
            ("zero steps", Box::new(|c| c.train.steps = 0)),
            ("zero batch", Box::new(|c| c.train.batch_size = 0)),
            ("negative lr", Box::new(|c| c.train.lr = -1.0)),
            ("zero clip", Box::new(|c| c.train.clip_norm = Some(0.0))),
            ("empty mixed snr", Box::new(|c| c.train.mixed_snr = Some(vec![]))),
            ("both snr and noiseless", Box::new(|c| c.channel.noiseless = true)),
            ("no snr", Box::new(|c| c.channel.snr_db = None)),
            ("both cpp and k", Box::new(|c| c.channel.k = Some(64))),
            ("no budget", Box::new(|c| c.channel.cpp = None)),
            ("tau out of range", Box::new(|c| c.link.tau = 1.0)),
            ("alpha above one", Box::new(|c| c.link.alpha = 1.5)),
            ("zero eval count", Box::new(|c| c.data.eval_count = 0)),
        ];
        for (what, patch) in cases {
            assert!(
                matches!(patched(&patch), Err(Error::Config(_))),
                "{what} should be a config error"
            );
        }
    }

    // [DERIVED] Budget divisibility is settled at startup: k = 1020 is not a
    // multiple of B = 256, and a budget above B*c_m is impossible to pack.
    #[test]
    fn budget_divisibility_checked_at_startup() {
        let err = patched(|c| {
            c.channel.cpp = None;
            c.channel.k = Some(1020);
        })
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let err = patched(|c| {
            c.channel.cpp = None;
            c.channel.k = Some(256 * 9);
        })
        .unwrap_err();
        assert!(err.to_string().contains("c_m"), "{err}");
        assert!(patched(|c| {
            c.channel.cpp = None;
            c.channel.k = Some(1024);
        })
        .is_ok());
    }

    // [TRIVIAL] Variant resolution forces flags off for the baselines and
    // keeps explicit flags for roi-jscc.
    #[test]
    fn effective_flags_by_variant() {
        let mut off_rb = AblationFlags::all_on();
        off_rb.roi_bandwidth = false;
        let cfg = patched(|c| c.run.flags = Some({
            let mut f = AblationFlags::all_on();
            f.roi_bandwidth = false;
            f
        }))
        .unwrap();
        assert_eq!(cfg.effective_flags(), off_rb);
        let cfg = patched(|c| c.run.variant = Variant::UniformBaseline).unwrap();
        assert_eq!(cfg.effective_flags(), AblationFlags::all_off());
        assert_eq!(cfg.model_config().flags, AblationFlags::all_off());
    }

    // [TRIVIAL] Unknown keys anywhere are parse errors, so typos cannot
    // silently fall back to defaults.
    #[test]
    fn unknown_keys_are_rejected() {
        let text = toy_toml().replace("lr = 1e-4", "lr = 1e-4\nlearning_rate = 0.1");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
        let text = toy_toml().replace("seed = 7", "seed = 7\nseeed = 9");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
    }

    // [DERIVED] Serialization round-trip: a validated config survives
    // TOML encode/decode unchanged (checkpoints embed configs this way).
    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::from_toml(&toy_toml()).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
    }

    // [DERIVED] Evaluation data derivation: toy training yields a held-out
    // toy set (different seed), directory training reuses the directory.
    #[test]
    fn eval_source_derivation() {
        let cfg = RunConfig::from_toml(&toy_toml()).unwrap();
        let (src, seed) = cfg.eval_source();
        assert_eq!(src, DataSource::Toy { count: 8, size: 64 });
        assert_ne!(seed, cfg.run.seed);
        let cfg2 = patched(|c| {
            c.data.source = DataSource::Directory { root: "/tmp/imgs".into() };
            c.data.crop = Some(CropMode::Random { size: 64 });
        })
        .unwrap();
        let (src2, _) = cfg2.eval_source();
        assert_eq!(src2, DataSource::Directory { root: "/tmp/imgs".into() });
        // Eval crop multiple covers the model's divisibility constraints.
        assert_eq!(cfg.eval_crop(), CropMode::CenterMultiple { multiple: 64 });
    }

    // [TRIVIAL] Variant strings round-trip and unknown names error.
    #[test]
    fn variant_strings() {
        for v in [Variant::RoiJscc, Variant::UniformBaseline, Variant::ConvBaseline] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("fancy".parse::<Variant>(), Err(Error::Config(_))));
    }
}
