//! The serializable run configuration: a run is reproducible from this
//! structure alone. Dotted-path overrides patch the JSON form.

use anyhow::{bail, Context, Result};
use memseal::diffusion::DiffusionConfig;
use memseal::pipeline::ProtectConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoConfig {
    pub items: usize,
    pub image_size: (usize, usize),
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            items: 2000,
            image_size: (64, 64),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub n: usize,
    pub alpha: f64,
    /// `hard` or `soft`.
    pub trigger: String,
    /// `one` or `multi`.
    pub mode: String,
    /// `correlation` or `learned`.
    pub detector: String,
    pub target_fpr: f64,
    pub guidance: f32,
    /// Holdout sizes for detector calibration.
    pub clean_holdout: usize,
    pub generated_holdout: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            n: 30,
            alpha: 0.05,
            trigger: "hard".into(),
            mode: "multi".into(),
            detector: "correlation".into(),
            target_fpr: 0.05,
            guidance: 5.0,
            clean_holdout: 200,
            generated_holdout: 48,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    /// `dedup`, `recaption`, `corrupt:<kind>`, or `purify:<method>`.
    pub kind: String,
    pub dedup_threshold: f32,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: "dedup".into(),
            dedup_threshold: 0.7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub demo: DemoConfig,
    pub protect: ProtectConfig,
    pub attack: AttackConfig,
    pub diffusion: DiffusionConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            demo: DemoConfig::default(),
            protect: ProtectConfig::default(),
            attack: AttackConfig::default(),
            diffusion: DiffusionConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Apply `--set path.to.field=value` overrides on the JSON form.
    pub fn with_overrides(self, overrides: &[String]) -> Result<RunConfig> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut value = serde_json::to_value(&self)?;
        for entry in overrides {
            let (path, raw) = entry
                .split_once('=')
                .with_context(|| format!("override `{entry}` must look like path.to.field=value"))?;
            let new_value: serde_json::Value = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            let mut cursor = &mut value;
            let parts: Vec<&str> = path.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                if i + 1 == parts.len() {
                    match cursor.get(part) {
                        Some(_) => {
                            cursor[part] = new_value.clone();
                        }
                        None => bail!("unknown config field `{path}`"),
                    }
                } else {
                    cursor = cursor
                        .get_mut(*part)
                        .with_context(|| format!("unknown config section `{part}` in `{path}`"))?;
                }
            }
        }
        serde_json::from_value(value).context("overridden config failed to deserialize")
    }

    /// Propagate the top-level seed into the per-stage seeds.
    pub fn seeded(mut self, seed: u64) -> RunConfig {
        self.seed = seed;
        self.protect.seed = seed;
        self.diffusion.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_patch_nested_fields() {
        let config = RunConfig::default()
            .with_overrides(&[
                "diffusion.max_steps=123".to_string(),
                "verify.trigger=soft".to_string(),
                "protect.rate=0.01".to_string(),
            ])
            .unwrap();
        assert_eq!(config.diffusion.max_steps, 123);
        assert_eq!(config.verify.trigger, "soft");
        assert!((config.protect.rate - 0.01).abs() < 1e-12);
    }

    #[test]
    fn unknown_override_is_an_error() {
        assert!(RunConfig::default()
            .with_overrides(&["diffusion.nope=1".to_string()])
            .is_err());
        assert!(RunConfig::default()
            .with_overrides(&["bad".to_string()])
            .is_err());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let config = RunConfig::default();
        let text = serde_json::to_string(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.demo.items, config.demo.items);
        assert_eq!(back.diffusion.max_steps, config.diffusion.max_steps);
    }
}
