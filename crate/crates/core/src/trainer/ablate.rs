use serde::{Deserialize, Serialize};

use super::config::{Toggles, TrainConfig};
use super::eval::{evaluate, Metrics, REPORT_HEADER};
use super::train::train;
use crate::error::{Error, Result};
use crate::losses::KlSource;
use crate::scenedata::Dataset;

/// One named configuration of an ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub toggles: Toggles,
    pub kl_source: KlSource,
}

impl Variant {
    fn new(name: &str, toggles: Toggles) -> Self {
        Self {
            name: name.into(),
            toggles,
            kl_source: KlSource::Weights,
        }
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.toggles = self.toggles;
        cfg.loss.kl_source = self.kl_source;
        cfg
    }
}

fn with(names: &[&str]) -> Toggles {
    let mut t = Toggles::none();
    for n in names {
        t.set(n, true).expect("known toggle");
    }
    t
}

/// The cumulative component ladder, from vanilla to the full method.
pub fn ladder() -> Vec<Variant> {
    vec![
        Variant::new("vanilla", Toggles::none()),
        Variant::new("lipschitz", with(&["lipschitz"])),
        Variant::new("dist-fg", with(&["dist", "fg"])),
        Variant::new("dist-fg-patches", with(&["dist", "fg", "patches"])),
        Variant::new("dist-fg-ds", with(&["dist", "fg", "ds"])),
        Variant::new("dist-fg-ds-lipschitz", with(&["dist", "fg", "ds", "lipschitz"])),
        Variant::new(
            "dist-fg-ds-lipschitz-mask",
            with(&["dist", "fg", "ds", "lipschitz", "mask_position"]),
        ),
        Variant::new("full", Toggles::full()),
    ]
}

/// Extra rows: Lipschitz on the color network only, and KL on opacities.
pub fn extra_variants() -> Vec<Variant> {
    let mut color_only = Toggles::full();
    color_only.lipschitz_density = false;
    vec![
        Variant::new("lipschitz-color-only", color_only),
        Variant {
            kl_source: KlSource::Alpha,
            ..Variant::new("kl-alpha", Toggles::full())
        },
    ]
}

/// The full method with one component switched off at a time.
pub fn removal_variants() -> Vec<Variant> {
    [
        ("no-lipschitz", "lipschitz"),
        ("no-mask", "mask"),
        ("no-dist", "dist"),
        ("no-fg", "fg"),
        ("no-ds", "ds"),
        ("no-kl", "kl"),
    ]
    .into_iter()
    .map(|(name, toggle)| {
        let mut t = Toggles::full();
        t.set(toggle, false).expect("known toggle");
        Variant::new(name, t)
    })
    .collect()
}

/// Looks up a variant by name among the ladder, extra and removal rows.
pub fn variant(name: &str) -> Result<Variant> {
    ladder()
        .into_iter()
        .chain(extra_variants())
        .chain(removal_variants())
        .find(|v| v.name == name)
        .ok_or_else(|| Error::Config(format!("unknown ablation variant `{name}`")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub iterations: usize,
    /// Set when training stopped on a non-finite loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub header: String,
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Fixed-width text table.
    pub fn to_text(&self) -> String {
        let mut s = format!("# {}\n# seed={}\n", self.header, self.seed);
        s += &format!("{:<28} {:>8} {:>8} {:>8}\n", "config", "PSNR", "SSIM", "avg");
        for r in &self.rows {
            s += &format!(
                "{:<28} {:>8.3} {:>8.4} {:>8.4}{}\n",
                r.name,
                r.metrics.psnr,
                r.metrics.ssim,
                r.metrics.average,
                if r.aborted.is_some() { "  (aborted)" } else { "" }
            );
        }
        s
    }
}

/// Trains and evaluates every variant with the base config's seed.
pub fn ablate(base: &TrainConfig, variants: &[Variant], data: &Dataset) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let cfg = v.apply(base);
        log::info!("ablation `{}`", v.name);
        let run = train(&cfg, data)?;
        let report = evaluate(&run.checkpoint, data)?;
        rows.push(AblationRow {
            name: v.name.clone(),
            iterations: run.checkpoint.iteration,
            aborted: run.aborted.map(|e| e.to_string()),
            metrics: report.mean,
        });
    }
    Ok(AblationTable {
        header: REPORT_HEADER.into(),
        seed: base.seed,
        rows,
    })
}
