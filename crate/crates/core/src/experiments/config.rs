use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::AutoL0Config;
use crate::error::{Error, Result};
use crate::sae::TrainConfig;
use crate::toy_data::ToyModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Sweep,
    ReconCompare,
    Transition,
    Autol0,
    SingleTrain,
}

/// The two linear `k` schedules of a transition experiment. Both end at the
/// generator's empirical true L0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransitionConfig {
    pub k_high: f64,
    pub k_low: f64,
    pub transition_steps: u64,
    pub hold_steps: u64,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        Self {
            k_high: 20.0,
            k_low: 2.0,
            transition_steps: 25_000,
            hold_steps: 5_000,
        }
    }
}

/// One experiment, as read from a TOML file.
///
/// Each seed `s` in `seeds` gets its own toy model (generator seed
/// `toy.seed + s`) and its own training streams (training seed `s`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub toy: ToyModelSpec,
    /// Train on a fixed activation dump instead of fresh toy samples. Runs
    /// that need ground truth (recon_compare, alignment) are unavailable then.
    pub activations: Option<PathBuf>,
    pub k_values: Vec<f64>,
    pub n_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Held-out rows used for `s_n^dec`, variance explained and MSE.
    pub eval_samples: usize,
    /// Held-out rows for the reconstruction comparison.
    pub recon_eval_samples: usize,
    /// Samples used to measure the generator's empirical L0.
    pub l0_samples: usize,
    pub train: TrainConfig,
    pub autol0: AutoL0Config,
    pub transition: TransitionConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::SingleTrain,
            toy: ToyModelSpec::default(),
            activations: None,
            k_values: vec![10.0],
            n_values: vec![12, 18, 20, 22],
            seeds: vec![0],
            output_dir: PathBuf::from("out"),
            eval_samples: 8192,
            recon_eval_samples: 100_000,
            l0_samples: 200_000,
            train: TrainConfig::default(),
            autol0: AutoL0Config::default(),
            transition: TransitionConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.toy.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.eval_samples < 2 || self.recon_eval_samples < 2 || self.l0_samples == 0 {
            return Err(Error::Config(
                "evaluation sets need at least two rows and l0_samples must be positive".into(),
            ));
        }
        if let Some(&k) = self.k_values.iter().find(|&&k| !(k > 0.0)) {
            return Err(Error::Config(format!("k value {k} must be positive")));
        }
        if let Some(&n) = self
            .n_values
            .iter()
            .find(|&&n| n == 0 || n >= self.train.n_latents)
        {
            return Err(Error::Config(format!(
                "n value {n} out of range for {} latents",
                self.train.n_latents
            )));
        }
        let needs_grid = matches!(self.kind, ExperimentKind::Sweep | ExperimentKind::ReconCompare);
        if needs_grid && self.k_values.is_empty() {
            return Err(Error::Config("k_values must not be empty".into()));
        }
        if self.kind == ExperimentKind::ReconCompare && self.activations.is_some() {
            return Err(Error::Config(
                "recon_compare needs ground truth and cannot run on an activation dump".into(),
            ));
        }
        if self.kind == ExperimentKind::Autol0 {
            self.autol0.validate()?;
        }
        if self.kind == ExperimentKind::Transition {
            let t = &self.transition;
            if !(t.k_high > 0.0 && t.k_low > 0.0) || t.transition_steps + t.hold_steps == 0 {
                return Err(Error::Config("invalid transition settings".into()));
            }
        }
        Ok(())
    }

    /// Generator settings for seed `s`.
    pub fn toy_for_seed(&self, seed: u64) -> ToyModelSpec {
        ToyModelSpec {
            seed: self.toy.seed.wrapping_add(seed),
            ..self.toy.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_sweep() {
        let spec = ExperimentSpec::from_toml_str(
            r#"
            kind = "sweep"
            k_values = [2, 5, 10]
            seeds = [0, 1]

            [train]
            n_samples = 1000
            batch = 100
            "#,
        )
        .unwrap();
        assert_eq!(spec.kind, ExperimentKind::Sweep);
        assert_eq!(spec.k_values, vec![2.0, 5.0, 10.0]);
        assert_eq!(spec.train.batch, 100);
        assert_eq!(spec.train.lr, TrainConfig::default().lr);
        spec.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentSpec::from_toml_str("kind = \"sweep\"\nbogus = 1").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let spec = ExperimentSpec {
            kind: ExperimentKind::Autol0,
            ..Default::default()
        };
        let text = spec.to_toml_string().unwrap();
        assert_eq!(ExperimentSpec::from_toml_str(&text).unwrap(), spec);
    }

    #[test]
    fn out_of_range_n_is_rejected() {
        let spec = ExperimentSpec {
            n_values: vec![50],
            ..Default::default()
        };
        assert!(spec.validate().is_err());
    }
}
