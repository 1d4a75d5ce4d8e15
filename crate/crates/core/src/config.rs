//! Experiment configuration and its flat `key = value` text format.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Weights of the objective terms: reconstruction, cycle/code consistency,
/// image identity, landmark identity and adversarial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub rec: f64,
    pub cycle: f64,
    pub id_image: f64,
    pub id_landmark: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { rec: 10.0, cycle: 1.0, id_image: 0.05, id_landmark: 0.01, adversarial: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    SingleWay,
    NoIdLandmark,
    NoIdImage,
    NoIdBoth,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::SingleWay, Variant::NoIdLandmark, Variant::NoIdImage, Variant::NoIdBoth];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::SingleWay => "single_way",
            Variant::NoIdLandmark => "no_id_l",
            Variant::NoIdImage => "no_id_x",
            Variant::NoIdBoth => "no_id_both",
        }
    }

    pub fn is_single_way(self) -> bool {
        self == Variant::SingleWay
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (expected full, single_way, no_id_l, no_id_x or no_id_both)")))
    }
}

/// Where training images come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Procedural faces: `identities` people, `per_identity` drawings each.
    Toy { identities: usize, per_identity: usize, seed: u64 },
    /// A processed cache directory (see [`crate::data::write_cache`]).
    Cache(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub image_size: usize,
    pub content_channels: usize,
    pub style_dim: usize,
    pub latent_dim: usize,
    pub weights: LossWeights,
    pub lr0: f64,
    pub lr_halving_period: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub seed: u64,
    pub variant: Variant,
    /// Bound on each displacement coordinate; `None` leaves it unbounded.
    pub displacement_clamp: Option<f64>,
    pub detach_content_for_geo: bool,
    pub share_content_encoder: bool,
    pub geo_zero_init: bool,
    pub tps_regularization: f64,
    pub train_identities: usize,
    pub split_seed: u64,
    pub data: DataSource,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for ExperimentConfig {
    /// Full-scale settings (256 px, 500k steps, halving every 100k).
    fn default() -> Self {
        Self {
            image_size: 256,
            content_channels: 256,
            style_dim: 8,
            latent_dim: 32,
            weights: LossWeights::default(),
            lr0: 1e-4,
            lr_halving_period: 100_000,
            total_steps: 500_000,
            batch_size: 1,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            seed: 0,
            variant: Variant::Full,
            displacement_clamp: Some(0.35),
            detach_content_for_geo: false,
            share_content_encoder: false,
            geo_zero_init: true,
            tps_regularization: 1e-4,
            train_identities: 202,
            split_seed: 0,
            data: DataSource::Cache("data/processed".into()),
            checkpoint_every: 10_000,
            log_every: 100,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

impl ExperimentConfig {
    /// Desk-scale settings: 32 px procedural faces, 2,000 steps with the
    /// rate halving every 500 — the full schedule's shape, shrunk.
    pub fn toy() -> Self {
        Self {
            image_size: 32,
            content_channels: 64,
            lr0: 1e-4,
            lr_halving_period: 500,
            total_steps: 2_000,
            train_identities: 8,
            data: DataSource::Toy { identities: 10, per_identity: 8, seed: 0 },
            checkpoint_every: 500,
            log_every: 1,
            ..Self::default()
        }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.variant = v;
        self
    }

    /// Loss weights after the variant's identity ablations.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if matches!(self.variant, Variant::NoIdLandmark | Variant::NoIdBoth) {
            w.id_landmark = 0.0;
        }
        if matches!(self.variant, Variant::NoIdImage | Variant::NoIdBoth) {
            w.id_image = 0.0;
        }
        w
    }

    /// Learning rate at `step`: halved every `lr_halving_period` steps.
    pub fn learning_rate(&self, step: u64) -> f64 {
        let halvings = (step / self.lr_halving_period).min(1074);
        self.lr0 * 0.5f64.powi(halvings as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.image_size < 32 || self.image_size % 4 != 0 {
            return bad("image_size must be a multiple of 4 and at least 32");
        }
        if self.content_channels < 4 || self.content_channels % 4 != 0 {
            return bad("content_channels must be a positive multiple of 4");
        }
        if self.style_dim == 0 || self.latent_dim == 0 || self.batch_size == 0 {
            return bad("style_dim, latent_dim and batch_size must be positive");
        }
        if self.lr_halving_period == 0 || self.checkpoint_every == 0 || self.log_every == 0 {
            return bad("periods must be positive");
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return bad("lr0 must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        let w = self.weights;
        if [w.rec, w.cycle, w.id_image, w.id_landmark, w.adversarial].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("loss weights must be finite and non-negative");
        }
        if let Some(c) = self.displacement_clamp {
            if !(c > 0.0) || !c.is_finite() {
                return bad("displacement_clamp must be positive (or `none`)");
            }
        }
        if !(self.tps_regularization >= 0.0) || !self.tps_regularization.is_finite() {
            return bad("tps_regularization must be finite and non-negative");
        }
        if let DataSource::Toy { identities, per_identity, .. } = self.data {
            if per_identity == 0 || self.train_identities == 0 || self.train_identities >= identities {
                return bad("toy data needs per_identity > 0 and 0 < train_identities < toy_identities");
            }
        }
        Ok(())
    }

    /// Parse the text format. A `preset = toy|full` line picks the base
    /// values (default `full`) regardless of where it appears; every other
    /// line overrides one field.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut base = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`", i + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if k == "preset" {
                base = match v {
                    "toy" => Self::toy(),
                    "full" => Self::default(),
                    _ => return Err(Error::Config(format!("line {}: unknown preset `{v}`", i + 1))),
                };
            } else {
                entries.push((i + 1, k.to_string(), v.to_string()));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (line, k, v) in entries {
            if !seen.insert(k.clone()) {
                return Err(Error::Config(format!("line {line}: duplicate key `{k}`")));
            }
            base.set(&k, &v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {line}: {m}")),
                e => e,
            })?;
        }
        base.validate()?;
        Ok(base)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Override one field by its text-format key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "image_size" => self.image_size = parse_num(key, v)?,
            "content_channels" => self.content_channels = parse_num(key, v)?,
            "style_dim" => self.style_dim = parse_num(key, v)?,
            "latent_dim" => self.latent_dim = parse_num(key, v)?,
            "lambda_rec" => self.weights.rec = parse_num(key, v)?,
            "lambda_cycle" => self.weights.cycle = parse_num(key, v)?,
            "lambda_id_x" => self.weights.id_image = parse_num(key, v)?,
            "lambda_id_l" => self.weights.id_landmark = parse_num(key, v)?,
            "lambda_gan" => self.weights.adversarial = parse_num(key, v)?,
            "lr0" => self.lr0 = parse_num(key, v)?,
            "lr_halving_period" => self.lr_halving_period = parse_num(key, v)?,
            "total_steps" => self.total_steps = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse_num(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "variant" => self.variant = v.parse()?,
            "displacement_clamp" => {
                self.displacement_clamp = if v == "none" { None } else { Some(parse_num(key, v)?) }
            }
            "detach_content_for_geo" => self.detach_content_for_geo = parse_bool(key, v)?,
            "share_content_encoder" => self.share_content_encoder = parse_bool(key, v)?,
            "geo_zero_init" => self.geo_zero_init = parse_bool(key, v)?,
            "tps_regularization" => self.tps_regularization = parse_num(key, v)?,
            "train_identities" => self.train_identities = parse_num(key, v)?,
            "split_seed" => self.split_seed = parse_num(key, v)?,
            "data_dir" => self.data = DataSource::Cache(v.to_string()),
            "toy_identities" | "toy_per_identity" | "toy_seed" => {
                let DataSource::Toy { identities, per_identity, seed } = &mut self.data else {
                    return Err(Error::Config(format!("`{key}` requires toy data (set preset = toy, no data_dir)")));
                };
                match key {
                    "toy_identities" => *identities = parse_num(key, v)?,
                    "toy_per_identity" => *per_identity = parse_num(key, v)?,
                    _ => *seed = parse_num(key, v)?,
                }
            }
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "log_every" => self.log_every = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let w = &self.weights;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("image_size", self.image_size.to_string());
        kv("content_channels", self.content_channels.to_string());
        kv("style_dim", self.style_dim.to_string());
        kv("latent_dim", self.latent_dim.to_string());
        kv("lambda_rec", format!("{:?}", w.rec));
        kv("lambda_cycle", format!("{:?}", w.cycle));
        kv("lambda_id_x", format!("{:?}", w.id_image));
        kv("lambda_id_l", format!("{:?}", w.id_landmark));
        kv("lambda_gan", format!("{:?}", w.adversarial));
        kv("lr0", format!("{:?}", self.lr0));
        kv("lr_halving_period", self.lr_halving_period.to_string());
        kv("total_steps", self.total_steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("adam_beta1", format!("{:?}", self.adam_beta1));
        kv("adam_beta2", format!("{:?}", self.adam_beta2));
        kv("seed", self.seed.to_string());
        kv("variant", self.variant.to_string());
        kv("displacement_clamp", self.displacement_clamp.map_or("none".into(), |c| format!("{c:?}")));
        kv("detach_content_for_geo", self.detach_content_for_geo.to_string());
        kv("share_content_encoder", self.share_content_encoder.to_string());
        kv("geo_zero_init", self.geo_zero_init.to_string());
        kv("tps_regularization", format!("{:?}", self.tps_regularization));
        kv("train_identities", self.train_identities.to_string());
        kv("split_seed", self.split_seed.to_string());
        match &self.data {
            DataSource::Toy { identities, per_identity, seed } => {
                kv("preset", "toy".into());
                kv("toy_identities", identities.to_string());
                kv("toy_per_identity", per_identity.to_string());
                kv("toy_seed", seed.to_string());
            }
            DataSource::Cache(dir) => kv("data_dir", dir.clone()),
        }
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("log_every", self.log_every.to_string());
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
