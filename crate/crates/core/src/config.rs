//! Model, loss and training hyperparameters with `desk` and `paper` presets,
//! plus the line-oriented `key = value` text form used by config files and
//! checkpoints.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderMode {
    ThreeStream,
    SingleStream,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    /// Depth purification before the residual merge.
    Dpm,
    /// Plain elementwise addition of the two streams.
    Add,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    /// Backbone channel count per level 1..=5.
    pub channels: [usize; 5],
    /// Common width after the transition layers.
    pub transition_channels: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Number of top levels enhanced jointly (2, 3 or 4).
    pub levels: usize,
    pub ttem: bool,
    pub decoder: DecoderMode,
    pub fusion: FusionMode,
    pub cbam_reduction: usize,
    pub spatial_kernel: usize,
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            input_size: 64,
            channels: [8, 16, 32, 64, 128],
            transition_channels: 16,
            embed_dim: 32,
            layers: 2,
            heads: 4,
            mlp_ratio: 4,
            levels: 3,
            ttem: true,
            decoder: DecoderMode::ThreeStream,
            fusion: FusionMode::Dpm,
            cbam_reduction: 4,
            spatial_kernel: 7,
        }
    }

    pub fn paper() -> Self {
        Self {
            input_size: 256,
            channels: [64, 256, 512, 1024, 2048],
            transition_channels: 64,
            embed_dim: 768,
            layers: 12,
            heads: 12,
            mlp_ratio: 4,
            ..Self::desk()
        }
    }

    /// 1-based index of the lowest level entering the feature enhancement.
    pub fn lowest_level(&self) -> usize {
        6 - self.levels
    }

    /// Spatial side of the aligned levels.
    pub fn aligned_size(&self) -> usize {
        self.input_size >> self.lowest_level()
    }

    /// Tokens per stream (one per aligned spatial position).
    pub fn tokens(&self) -> usize {
        self.aligned_size() * self.aligned_size()
    }

    /// Checks structural constraints; returns advisory warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::config("input_size", format!("{} is not divisible by 32", self.input_size)));
        }
        if !(2..=4).contains(&self.levels) {
            return Err(Error::config("levels", format!("{} is outside {{2, 3, 4}}", self.levels)));
        }
        if self.channels.iter().any(|&c| c == 0) || self.transition_channels == 0 {
            return Err(Error::config("channels", "channel counts must be positive"));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::config(
                "heads",
                format!("embed_dim {} is not divisible by {} heads", self.embed_dim, self.heads),
            ));
        }
        if self.fusion == FusionMode::Dpm {
            if let Some(&c) = self.channels.iter().find(|&&c| c < self.cbam_reduction) {
                return Err(Error::config(
                    "cbam_reduction",
                    format!("channel count {c} is below reduction ratio {}", self.cbam_reduction),
                ));
            }
        }
        if self.cbam_reduction == 0 {
            return Err(Error::config("cbam_reduction", "must be positive"));
        }
        if self.spatial_kernel % 2 == 0 {
            return Err(Error::config("spatial_kernel", "must be odd"));
        }
        if self.ttem && self.levels == 4 && self.tokens() > 1024 {
            warnings.push(format!(
                "levels = 4 gives {} tokens per stream; attention memory grows with the square",
                self.tokens()
            ));
        }
        Ok(warnings)
    }
}

/// Constants of the boundary-weighted BCE + IoU loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub window: usize,
    pub gain: f64,
    pub smooth: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { window: 31, gain: 5.0, smooth: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub seed: u64,
    /// Optional hard cap on optimizer steps.
    pub max_steps: Option<usize>,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub augment: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub precision: Precision,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            model: ModelConfig::desk(),
            loss: LossConfig::default(),
            lr: 2e-3,
            batch: 4,
            epochs: 150,
            lr_decay_every: 60,
            lr_decay_factor: 10.0,
            seed: 0,
            max_steps: None,
            checkpoint_every: 0,
            augment: false,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            precision: Precision::F32,
        }
    }

    pub fn paper() -> Self {
        Self { model: ModelConfig::paper(), lr: 1e-5, batch: 3, epochs: 150, augment: true, ..Self::desk() }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::config("preset", format!("unknown preset `{other}` (expected desk or paper)"))),
        }
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if self.lr_decay_every == 0 {
            return self.lr;
        }
        self.lr / self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        if self.batch == 0 {
            return Err(Error::config("batch", "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if self.lr_decay_factor <= 0.0 {
            return Err(Error::config("lr_decay_factor", "must be positive"));
        }
        self.model.validate()
    }

    /// Every key accepted by [`TrainConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "input_size",
        "channels",
        "transition_channels",
        "embed_dim",
        "layers",
        "heads",
        "mlp_ratio",
        "levels",
        "ttem",
        "decoder",
        "fusion",
        "cbam_reduction",
        "spatial_kernel",
        "loss_window",
        "loss_gain",
        "loss_smooth",
        "lr",
        "batch",
        "epochs",
        "lr_decay_every",
        "lr_decay_factor",
        "seed",
        "max_steps",
        "checkpoint_every",
        "augment",
        "beta1",
        "beta2",
        "eps",
        "precision",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        match key {
            "input_size" => m.input_size = parse(key, v)?,
            "channels" => {
                let parts: Vec<usize> = v.split(',').map(|p| parse(key, p.trim())).collect::<Result<_>>()?;
                m.channels = parts
                    .try_into()
                    .map_err(|p: Vec<usize>| Error::config(key, format!("expected 5 values, got {}", p.len())))?;
            }
            "transition_channels" => m.transition_channels = parse(key, v)?,
            "embed_dim" => m.embed_dim = parse(key, v)?,
            "layers" => m.layers = parse(key, v)?,
            "heads" => m.heads = parse(key, v)?,
            "mlp_ratio" => m.mlp_ratio = parse(key, v)?,
            "levels" => m.levels = parse(key, v)?,
            "ttem" => m.ttem = parse_switch(key, v)?,
            "decoder" => {
                m.decoder = match v {
                    "three" => DecoderMode::ThreeStream,
                    "single" => DecoderMode::SingleStream,
                    _ => return Err(Error::config(key, format!("`{v}` (expected three or single)"))),
                }
            }
            "fusion" => {
                m.fusion = match v {
                    "dpm" => FusionMode::Dpm,
                    "add" => FusionMode::Add,
                    _ => return Err(Error::config(key, format!("`{v}` (expected dpm or add)"))),
                }
            }
            "cbam_reduction" => m.cbam_reduction = parse(key, v)?,
            "spatial_kernel" => m.spatial_kernel = parse(key, v)?,
            "loss_window" => self.loss.window = parse(key, v)?,
            "loss_gain" => self.loss.gain = parse(key, v)?,
            "loss_smooth" => self.loss.smooth = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr_decay_every" => self.lr_decay_every = parse(key, v)?,
            "lr_decay_factor" => self.lr_decay_factor = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "max_steps" => self.max_steps = if v == "none" { None } else { Some(parse(key, v)?) },
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "augment" => self.augment = parse_switch(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "eps" => self.eps = parse(key, v)?,
            "precision" => {
                self.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(Error::config(key, format!("`{v}` (expected f32 or f64)"))),
                }
            }
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Parses `key = value` lines (blank lines and `#` comments ignored) on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_kv(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::desk();
        cfg.apply_text(text)?;
        Ok(cfg)
    }
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(line, format!("line {}: expected `key = value`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
}

fn parse_switch(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("`{v}` (expected on or off)"))),
    }
}

fn switch(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.model;
        let ch: Vec<String> = m.channels.iter().map(|c| c.to_string()).collect();
        writeln!(f, "input_size = {}", m.input_size)?;
        writeln!(f, "channels = {}", ch.join(","))?;
        writeln!(f, "transition_channels = {}", m.transition_channels)?;
        writeln!(f, "embed_dim = {}", m.embed_dim)?;
        writeln!(f, "layers = {}", m.layers)?;
        writeln!(f, "heads = {}", m.heads)?;
        writeln!(f, "mlp_ratio = {}", m.mlp_ratio)?;
        writeln!(f, "levels = {}", m.levels)?;
        writeln!(f, "ttem = {}", switch(m.ttem))?;
        writeln!(
            f,
            "decoder = {}",
            match m.decoder {
                DecoderMode::ThreeStream => "three",
                DecoderMode::SingleStream => "single",
            }
        )?;
        writeln!(
            f,
            "fusion = {}",
            match m.fusion {
                FusionMode::Dpm => "dpm",
                FusionMode::Add => "add",
            }
        )?;
        writeln!(f, "cbam_reduction = {}", m.cbam_reduction)?;
        writeln!(f, "spatial_kernel = {}", m.spatial_kernel)?;
        writeln!(f, "loss_window = {}", self.loss.window)?;
        writeln!(f, "loss_gain = {:?}", self.loss.gain)?;
        writeln!(f, "loss_smooth = {:?}", self.loss.smooth)?;
        writeln!(f, "lr = {:?}", self.lr)?;
        writeln!(f, "batch = {}", self.batch)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "lr_decay_every = {}", self.lr_decay_every)?;
        writeln!(f, "lr_decay_factor = {:?}", self.lr_decay_factor)?;
        writeln!(f, "seed = {}", self.seed)?;
        match self.max_steps {
            Some(s) => writeln!(f, "max_steps = {s}")?,
            None => writeln!(f, "max_steps = none")?,
        }
        writeln!(f, "checkpoint_every = {}", self.checkpoint_every)?;
        writeln!(f, "augment = {}", switch(self.augment))?;
        writeln!(f, "beta1 = {:?}", self.beta1)?;
        writeln!(f, "beta2 = {:?}", self.beta2)?;
        writeln!(f, "eps = {:?}", self.eps)?;
        writeln!(
            f,
            "precision = {}",
            match self.precision {
                Precision::F32 => "f32",
                Precision::F64 => "f64",
            }
        )
    }
}
