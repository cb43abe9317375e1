//! Flat key-value run configuration (TOML), covering priors, sampler
//! schedule, model structure, evaluation, and synthetic generation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::DEFAULT_SMOOTHING;
use crate::error::{Error, Result};
use crate::model::PriorConfig;
use crate::oracle::SynthConfig;
use crate::sampler::{BurnIn, GibbsConfig};

/// Every knob in one flat struct; unknown keys are rejected so typos fail
/// loudly. All fields optional in the file, with these defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    // Priors.
    pub q_u: f64,
    pub q_z: f64,
    pub beta_a: f64,
    pub beta_b: f64,
    pub beta_a_clamp: f64,
    pub beta_b_clamp: f64,

    // Sampler schedule.
    pub max_sweeps: usize,
    pub burn_in: BurnIn,
    pub n_samples: usize,
    pub sample_stride: usize,
    pub seed: u64,
    pub convergence_eps: f64,
    pub convergence_window: usize,
    pub parallel: bool,

    // Model structure.
    /// Latent dimensions L of the first layer.
    pub dims: usize,

    // Evaluation / ingestion.
    /// Fraction of cells hidden for scoring.
    pub holdout: f64,
    /// Add-β smoothing of the type-frequency baseline.
    pub smoothing: f64,
    /// Max objects kept per type before training; 0 disables subsampling.
    pub per_type_cap: usize,
    /// Drop attributes applied to fewer than this fraction of objects.
    pub min_attr_freq: f64,

    // Synthetic generation.
    pub synth_n: usize,
    pub synth_d: usize,
    pub synth_l: usize,
    pub synth_t: usize,
    pub synth_reliability_lo: f64,
    pub synth_reliability_hi: f64,
    pub synth_noise_floor: f64,
    pub synth_q_u: f64,
    pub synth_type_dim_density: f64,
    pub synth_seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        let priors = PriorConfig::default();
        let gibbs = GibbsConfig::default();
        let synth = SynthConfig::default();
        Config {
            q_u: priors.q_u,
            q_z: priors.q_z,
            beta_a: priors.beta_a,
            beta_b: priors.beta_b,
            beta_a_clamp: priors.beta_a_clamp,
            beta_b_clamp: priors.beta_b_clamp,
            max_sweeps: gibbs.max_sweeps,
            burn_in: gibbs.burn_in,
            n_samples: gibbs.n_samples,
            sample_stride: gibbs.sample_stride,
            seed: gibbs.seed,
            convergence_eps: gibbs.convergence_eps,
            convergence_window: gibbs.convergence_window,
            parallel: gibbs.parallel,
            dims: 16,
            holdout: 0.1,
            smoothing: DEFAULT_SMOOTHING,
            per_type_cap: 0,
            min_attr_freq: 0.0,
            synth_n: synth.n_objects,
            synth_d: synth.n_attributes,
            synth_l: synth.n_dims,
            synth_t: synth.n_types,
            synth_reliability_lo: synth.reliability_lo,
            synth_reliability_hi: synth.reliability_hi,
            synth_noise_floor: synth.noise_floor,
            synth_q_u: synth.q_u,
            synth_type_dim_density: synth.type_dim_density,
            synth_seed: synth.seed,
        }
    }
}

impl Config {
    pub fn priors(&self) -> PriorConfig {
        PriorConfig {
            q_u: self.q_u,
            q_z: self.q_z,
            beta_a: self.beta_a,
            beta_b: self.beta_b,
            beta_a_clamp: self.beta_a_clamp,
            beta_b_clamp: self.beta_b_clamp,
        }
    }

    pub fn gibbs(&self) -> GibbsConfig {
        GibbsConfig {
            max_sweeps: self.max_sweeps,
            burn_in: self.burn_in,
            n_samples: self.n_samples,
            sample_stride: self.sample_stride,
            seed: self.seed,
            convergence_eps: self.convergence_eps,
            convergence_window: self.convergence_window,
            parallel: self.parallel,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_objects: self.synth_n,
            n_attributes: self.synth_d,
            n_dims: self.synth_l,
            n_types: self.synth_t,
            reliability_lo: self.synth_reliability_lo,
            reliability_hi: self.synth_reliability_hi,
            noise_floor: self.synth_noise_floor,
            q_u: self.synth_q_u,
            type_dim_density: self.synth_type_dim_density,
            seed: self.synth_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.priors().validate()?;
        self.gibbs().validate()?;
        self.synth().validate()?;
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return Err(Error::Config(format!(
                "holdout fraction must be in (0, 1), got {}",
                self.holdout
            )));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::Config(format!(
                "smoothing must be nonnegative and finite, got {}",
                self.smoothing
            )));
        }
        if !(0.0..=1.0).contains(&self.min_attr_freq) {
            return Err(Error::Config(format!(
                "min_attr_freq must be in [0, 1], got {}",
                self.min_attr_freq
            )));
        }
        if self.dims == 0 {
            return Err(Error::Config("dims must be at least 1".into()));
        }
        Ok(())
    }
}

/// Reads and validates a TOML config file.
pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: Config = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    config.validate()?;
    Ok(config)
}
