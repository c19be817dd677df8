//! Experiment files: which dataset, which methods, which seeds.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use stssad::augment::{AugKind, AugParams};
use stssad::datagen::SynthSpec;
use stssad::tuner::{cutdiff_init_grid, rotation_init_grid, Mode, TunerConfig};
use stssad::valloss::ValLossKind;

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Name of the task; runs are written under `<out>/<task>/`.
    pub task: String,
    pub dataset: DatasetSource,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Augmentation tuned by the gradient methods (st_ssad, fo, mmd1, mmd2).
    #[serde(default = "default_aug")]
    pub augmentation: AugKind,
    #[serde(default)]
    pub tuner: TunerOverrides,
}

fn default_methods() -> Vec<String> {
    vec!["st_ssad".into()]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_aug() -> AugKind {
    AugKind::CutDiff
}

/// Either a generator spec (regenerated per seed, with the spec seed
/// replaced) or a saved dataset directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synth(SynthSpec),
    Path(PathBuf),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunerOverrides {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub max_iters: Option<usize>,
    pub gamma: Option<f64>,
    pub warm_epochs: Option<usize>,
    pub theta_updates_per_iter: Option<usize>,
    pub patience: Option<usize>,
    /// Used by methods whose augmentation matches its entries.
    pub init_list: Option<Vec<AugParams>>,
}

/// A named method resolved to what the tuner needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Method {
    pub mode: Mode,
    pub aug: AugKind,
    pub val_loss: ValLossKind,
}

const PATCH_AUGS: [AugKind; 4] = [AugKind::CutDiff, AugKind::CutOut, AugKind::CutPaste, AugKind::Rotation];

impl Method {
    pub fn parse(name: &str, gradient_aug: AugKind) -> Result<Self, CliError> {
        let grad = |mode, val_loss| Method { mode, aug: gradient_aug, val_loss };
        let m = match name {
            "st_ssad" => grad(Mode::SecondOrder, ValLossKind::MeanDistance),
            "fo" => grad(Mode::FirstOrder, ValLossKind::MeanDistance),
            "mmd1" => grad(Mode::SecondOrder, ValLossKind::MmdNormalized),
            "mmd2" => grad(Mode::SecondOrder, ValLossKind::MmdRaw),
            _ => {
                let (mode, aug) = name
                    .split_once('_')
                    .and_then(|(m, a)| {
                        let mode = match m {
                            "rs" => Mode::RandomStatic,
                            "rd" => Mode::RandomDynamic,
                            _ => return None,
                        };
                        PATCH_AUGS.into_iter().find(|k| k.name() == a).map(|k| (mode, k))
                    })
                    .ok_or_else(|| CliError::Usage(format!("unknown method {name:?}")))?;
                Method { mode, aug, val_loss: ValLossKind::MeanDistance }
            }
        };
        if !m.aug.is_differentiable() && matches!(m.mode, Mode::SecondOrder | Mode::FirstOrder) {
            return Err(CliError::Usage(format!("{name} needs a differentiable augmentation")));
        }
        Ok(m)
    }

    /// Canonical name, if this combination has one.
    pub fn name(&self) -> Option<String> {
        let md = self.val_loss == ValLossKind::MeanDistance;
        Some(match self.mode {
            Mode::SecondOrder if md => "st_ssad".into(),
            Mode::SecondOrder if self.val_loss == ValLossKind::MmdNormalized => "mmd1".into(),
            Mode::SecondOrder => "mmd2".into(),
            Mode::FirstOrder if md => "fo".into(),
            Mode::FirstOrder => return None,
            Mode::RandomStatic => format!("rs_{}", self.aug.name()),
            Mode::RandomDynamic => format!("rd_{}", self.aug.name()),
        })
    }
}

pub fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "so" | "second_order" => Ok(Mode::SecondOrder),
        "fo" | "first_order" => Ok(Mode::FirstOrder),
        "rs" | "random_static" => Ok(Mode::RandomStatic),
        "rd" | "random_dynamic" => Ok(Mode::RandomDynamic),
        _ => Err(format!("unknown mode {s:?} (expected so, fo, rs or rd)")),
    }
}

fn default_inits(aug: AugKind) -> Vec<AugParams> {
    match aug {
        AugKind::CutDiff => cutdiff_init_grid(),
        AugKind::Rotation => rotation_init_grid(),
        AugKind::CutOut => [0.01, 0.03, 0.06, 0.1].map(AugParams::cutout).to_vec(),
        AugKind::CutPaste => [0.01, 0.03, 0.06, 0.1].map(|a| AugParams::cutpaste(a, 1.0)).to_vec(),
    }
}

/// One unit of work: a method at a seed.
#[derive(Clone, Debug, Serialize)]
pub struct Job {
    pub method: String,
    pub seed: u64,
    pub tuner: TunerConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Usage(format!(
                "config version {}, expected {CONFIG_VERSION}",
                cfg.version
            )));
        }
        if cfg.task.is_empty() || cfg.task.contains(['/', '\\']) || cfg.task.starts_with('.') {
            return Err(CliError::Usage(format!("task name {:?} is not a plain directory name", cfg.task)));
        }
        if cfg.methods.is_empty() || cfg.seeds.is_empty() {
            return Err(CliError::Usage("methods and seeds must be non-empty".into()));
        }
        Ok(cfg)
    }

    /// Expands methods × seeds, optionally forcing one tuning mode.
    pub fn jobs(&self, mode: Option<Mode>) -> Result<Vec<Job>, CliError> {
        let mut methods: Vec<(String, Method)> = Vec::new();
        for name in &self.methods {
            let mut m = Method::parse(name, self.augmentation)?;
            if let Some(mode) = mode {
                m.mode = mode;
            }
            let name = m
                .name()
                .ok_or_else(|| CliError::Usage(format!("{name} has no {} variant", mode.map_or("", Mode::name))))?;
            if !methods.iter().any(|(n, _)| *n == name) {
                methods.push((name, m));
            }
        }
        let mut jobs = Vec::new();
        for (name, m) in &methods {
            for &seed in &self.seeds {
                let o = &self.tuner;
                let d = TunerConfig::default();
                let init_list = match &o.init_list {
                    Some(l) if l.iter().all(|a| a.kind == m.aug) => l.clone(),
                    _ => default_inits(m.aug),
                };
                let tuner = TunerConfig {
                    alpha: o.alpha.unwrap_or(d.alpha),
                    beta: o.beta.unwrap_or(d.beta),
                    max_iters: o.max_iters.unwrap_or(d.max_iters),
                    gamma: o.gamma.unwrap_or(d.gamma),
                    warm_epochs: o.warm_epochs.unwrap_or(d.warm_epochs),
                    theta_updates_per_iter: o.theta_updates_per_iter.unwrap_or(d.theta_updates_per_iter),
                    patience: o.patience.unwrap_or(d.patience),
                    mode: m.mode,
                    val_loss: m.val_loss,
                    aug: m.aug,
                    init_list,
                    seed,
                    track_descent: false,
                };
                tuner.validate().map_err(|e| CliError::Usage(format!("{name}: {e}")))?;
                jobs.push(Job { method: name.clone(), seed, tuner });
            }
        }
        Ok(jobs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_listed_method_resolves() {
        for name in [
            "st_ssad", "fo", "mmd1", "mmd2", "rs_cutdiff", "rd_cutdiff", "rs_cutout", "rd_cutout",
            "rs_cutpaste", "rd_cutpaste", "rs_rotation", "rd_rotation",
        ] {
            let m = Method::parse(name, AugKind::CutDiff).unwrap();
            assert_eq!(m.name().unwrap(), name);
        }
        assert!(Method::parse("rs_blur", AugKind::CutDiff).is_err());
        assert!(Method::parse("st_ssad", AugKind::CutOut).is_err());
    }
}
