use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::diffcore::AdamConfig;
use crate::encodings::{HashGridConfig, MaskSchedule};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::rendering::AnnealConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Forward-facing real scenes.
    Llff,
    /// Object-centric synthetic scenes.
    Synthetic,
    /// Small analytic scene sized for a single CPU core.
    Toy,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "llff" => Ok(Preset::Llff),
            "synthetic" => Ok(Preset::Synthetic),
            "toy" => Ok(Preset::Toy),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected llff, synthetic or toy)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Built-in analytic scene; ignored when `manifest` is set.
    pub scene: String,
    /// Path to a `transforms_*.json` manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Number of training views in the few-shot split.
    pub views: usize,
    /// Rendered resolution of built-in scenes.
    pub image_size: usize,
    /// World-space box mapped onto the encoding's unit cube; density is
    /// zero outside it.
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hashgrid: HashGridConfig,
    pub sh_degree: usize,
    pub density_hidden: Vec<usize>,
    pub geo_dim: usize,
    pub color_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hashgrid: HashGridConfig::default(),
            sh_degree: 4,
            density_hidden: vec![64, 64],
            geo_dim: 15,
            color_hidden: vec![64, 64, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    /// Hash-table learning rate at the first iteration.
    pub lr_table: f64,
    /// Hash-table learning rate reached (exponentially) at the last one.
    pub lr_table_final: f64,
    /// Learning rate of network weights, biases and Lipschitz bounds.
    pub lr_net: f64,
    pub adam: AdamConfig,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_table: 1e-2,
            lr_table_final: 1e-3,
            lr_net: 1e-3,
            adam: AdamConfig::default(),
        }
    }
}

/// Independent switches for every component of the method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Toggles {
    pub lipschitz_density: bool,
    pub lipschitz_color: bool,
    pub mask_position: bool,
    pub mask_direction: bool,
    pub dist: bool,
    pub fg: bool,
    pub kl: bool,
    pub ds: bool,
    pub entropy: bool,
    pub anneal: bool,
    /// Draw half the batch as patches even when no patch loss is active.
    pub patches: bool,
}

impl Toggles {
    pub const NAMES: [&'static str; 11] = [
        "lipschitz_density",
        "lipschitz_color",
        "mask_position",
        "mask_direction",
        "dist",
        "fg",
        "kl",
        "ds",
        "entropy",
        "anneal",
        "patches",
    ];

    pub fn none() -> Self {
        Self {
            lipschitz_density: false,
            lipschitz_color: false,
            mask_position: false,
            mask_direction: false,
            dist: false,
            fg: false,
            kl: false,
            ds: false,
            entropy: false,
            anneal: false,
            patches: false,
        }
    }

    /// The complete method: every loss of the final selection, Lipschitz
    /// networks and the position mask.
    pub fn full() -> Self {
        Self {
            lipschitz_density: true,
            lipschitz_color: true,
            mask_position: true,
            dist: true,
            fg: true,
            kl: true,
            ds: true,
            ..Self::none()
        }
    }

    fn slot(&mut self, name: &str) -> Option<&mut bool> {
        Some(match name {
            "lipschitz_density" => &mut self.lipschitz_density,
            "lipschitz_color" => &mut self.lipschitz_color,
            "mask_position" => &mut self.mask_position,
            "mask_direction" => &mut self.mask_direction,
            "dist" => &mut self.dist,
            "fg" => &mut self.fg,
            "kl" => &mut self.kl,
            "ds" => &mut self.ds,
            "entropy" => &mut self.entropy,
            "anneal" => &mut self.anneal,
            "patches" => &mut self.patches,
            _ => return None,
        })
    }

    /// Sets a switch by name; `lipschitz` and `mask` address both of their
    /// switches at once.
    pub fn set(&mut self, name: &str, on: bool) -> Result<()> {
        let group: &[&str] = match name {
            "lipschitz" => &["lipschitz_density", "lipschitz_color"],
            "mask" => &["mask_position", "mask_direction"],
            _ => std::slice::from_ref(&name),
        };
        for n in group {
            *self.slot(n).ok_or_else(|| {
                Error::Config(format!(
                    "unknown toggle `{n}` (expected lipschitz, mask or one of {})",
                    Self::NAMES.join(", ")
                ))
            })? = on;
        }
        Ok(())
    }

    /// Whether the batch carries patches.
    pub fn uses_patches(&self) -> bool {
        self.patches || self.ds || self.kl
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    pub saturate_fraction: f64,
    /// Initial kept fraction; defaults to one level's worth, `1 / L`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_initial: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: Preset,
    pub seed: u64,
    pub iterations: usize,
    pub rays_per_iter: usize,
    pub samples_per_ray: usize,
    /// Evaluate on the test views every this many iterations (0 disables).
    pub eval_interval: usize,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub toggles: Toggles,
    pub loss: LossConfig,
    pub mask: MaskConfig,
    pub anneal: AnnealConfig,
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Llff => Self {
                preset,
                seed: 0,
                iterations: 2000,
                rays_per_iter: 4096,
                samples_per_ray: 64,
                eval_interval: 0,
                data: DataConfig {
                    scene: "sphere3".into(),
                    manifest: None,
                    views: 3,
                    image_size: 64,
                    bounds_min: [0.0; 3],
                    bounds_max: [1.0; 3],
                },
                model: ModelConfig::default(),
                optim: OptimConfig::default(),
                toggles: Toggles::full(),
                loss: LossConfig::llff(),
                mask: MaskConfig {
                    saturate_fraction: 0.9,
                    x_initial: None,
                },
                anneal: AnnealConfig {
                    iterations: 500,
                    start_fraction: 0.5,
                    midpoint: None,
                },
            },
            Preset::Synthetic => {
                let mut cfg = Self::preset(Preset::Llff);
                cfg.preset = preset;
                cfg.rays_per_iter = 7008;
                cfg.model.hashgrid.levels = 32;
                cfg.data.views = 8;
                cfg.data.bounds_min = [-1.5; 3];
                cfg.data.bounds_max = [1.5; 3];
                cfg.loss = LossConfig::synthetic();
                cfg.mask.saturate_fraction = 0.2;
                cfg
            }
            Preset::Toy => {
                let mut cfg = Self::preset(Preset::Llff);
                cfg.preset = preset;
                cfg.rays_per_iter = 128;
                cfg.samples_per_ray = 24;
                cfg.model = ModelConfig {
                    hashgrid: HashGridConfig {
                        levels: 8,
                        features_per_level: 2,
                        log2_table_size: 14,
                        base_resolution: 4,
                        max_resolution: 64,
                    },
                    sh_degree: 3,
                    density_hidden: vec![32],
                    geo_dim: 15,
                    color_hidden: vec![32],
                };
                cfg
            }
        }
    }

    /// Parses a TOML config: the named `preset` (default `toy`) with the
    /// file's tables merged over it.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let preset = match user.get("preset") {
            Some(toml::Value::String(s)) => Preset::parse(s)?,
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
            None => Preset::Toy,
        };
        Self::with_overrides(preset, user)
    }

    /// Applies `overrides` on top of a preset.
    pub fn with_overrides(preset: Preset, overrides: toml::Table) -> Result<Self> {
        let base = toml::Table::try_from(Self::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(base, overrides);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical TOML text; reparsing it yields the same config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn mask_schedule(&self) -> MaskSchedule {
        MaskSchedule {
            saturate_fraction: self.mask.saturate_fraction,
            total_iterations: self.iterations,
            x_initial: self
                .mask
                .x_initial
                .unwrap_or(1.0 / self.model.hashgrid.levels.max(1) as f64),
        }
    }

    /// Number of `S x S` patches per batch.
    pub fn patches_per_iter(&self) -> usize {
        if !self.toggles.uses_patches() {
            return 0;
        }
        let block = self.loss.patch_size * self.loss.patch_size;
        (self.rays_per_iter / 2 / block).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.mask_schedule().validate()?;
        self.anneal.validate()?;
        if self.rays_per_iter == 0 || self.samples_per_ray < 2 {
            return Err(Error::Config("rays_per_iter must be >= 1 and samples_per_ray >= 2".into()));
        }
        let block = self.loss.patch_size * self.loss.patch_size;
        if self.toggles.uses_patches() && self.rays_per_iter < block * self.patches_per_iter() {
            return Err(Error::Config(format!(
                "rays_per_iter {} cannot hold a {}x{} patch",
                self.rays_per_iter, self.loss.patch_size, self.loss.patch_size
            )));
        }
        if self.data.views == 0 {
            return Err(Error::Config("data.views must be >= 1".into()));
        }
        if (0..3).any(|k| !(self.data.bounds_max[k] > self.data.bounds_min[k])) {
            return Err(Error::Config("data.bounds_max must exceed data.bounds_min on every axis".into()));
        }
        if self.model.density_hidden.contains(&0) || self.model.color_hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !(self.optim.lr_table > 0.0 && self.optim.lr_table_final > 0.0 && self.optim.lr_net > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Recursively overlays `top` onto `base`.
fn merge(mut base: toml::Table, top: toml::Table) -> toml::Table {
    for (key, value) in top {
        match (base.remove(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => {
                base.insert(key, toml::Value::Table(merge(b, t)));
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
    base
}
