//! End-to-end optimization: joint training of the latent initial state,
//! latent dynamics and decoder; physics-only fine-tuning; evaluation.

mod adam;
mod metrics;
mod model;
mod trainer;

pub use adam::Adam;
pub use metrics::{evaluate, relative_error, Metrics, MuMetrics};
pub use model::{RomModel, U0Params};
pub use trainer::{finetune, train, EpochRecord, FinetuneRun, TrainRun};

use serde::{Deserialize, Serialize};

use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::latent::{DynamicsArch, ModelKind};
use crate::loss::{FineTuneWeights, LossWeights};

/// Everything that defines one training run, snapshotted into every
/// checkpoint so runs are reconstructible from the checkpoint alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    /// Adds the PDE-residual term to the training loss ("+PI" variants).
    pub physics_informed: bool,
    pub epochs: usize,
    pub seed: u64,
    /// Latent dimension per solution component; the dynamics evolve both
    /// blocks jointly.
    pub latent_per_component: usize,
    pub ode_hidden_layers: usize,
    pub ode_hidden_units: usize,
    pub rank: usize,
    pub hyper_hidden_layers: usize,
    pub hyper_hidden_units: usize,
    pub decoder: DecoderConfig,
    /// Learning rate of the decoder head optimizer.
    pub lr_decoder: f64,
    /// Learning rate of everything else (dynamics, hypernetwork, latent
    /// initial state).
    pub lr_dynamics: f64,
    pub weights: LossWeights,
    /// RK4 substeps per snapshot interval.
    pub n_sub: usize,
    /// Checkpoint cadence in epochs; 0 writes only the final state.
    pub checkpoint_every: usize,
    /// Fraction of interior collocation points entering the residual term;
    /// 1.0 uses them all, smaller values resample a random subset per step.
    pub residual_subsample: f64,
    /// Train one latent initial state per training parameter instead of a
    /// single shared one. Only useful for problems whose initial condition
    /// depends on the PDE parameter; unseen parameters cannot be evaluated
    /// in this mode.
    pub per_mu_latent_ic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::HyperPnode,
            physics_informed: true,
            epochs: 50_000,
            seed: 0,
            latent_per_component: 50,
            ode_hidden_layers: 3,
            ode_hidden_units: 256,
            rank: 50,
            hyper_hidden_layers: 1,
            hyper_hidden_units: 50,
            decoder: DecoderConfig::default(),
            lr_decoder: 0.01,
            lr_dynamics: 0.001,
            weights: LossWeights::default(),
            n_sub: 1,
            checkpoint_every: 1000,
            residual_subsample: 1.0,
            per_mu_latent_ic: false,
        }
    }
}

impl TrainConfig {
    pub fn dynamics_arch(&self) -> DynamicsArch {
        DynamicsArch {
            kind: self.model,
            latent_dim: 2 * self.latent_per_component,
            hidden_layers: self.ode_hidden_layers,
            hidden_units: self.ode_hidden_units,
            rank: self.rank,
            hyper_hidden_layers: self.hyper_hidden_layers,
            hyper_hidden_units: self.hyper_hidden_units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dynamics_arch().validate()?;
        self.decoder.validate()?;
        self.weights.validate()?;
        if self.latent_per_component == 0 {
            return Err(Error::config("latent_per_component must be positive"));
        }
        if self.lr_decoder < 0.0 || self.lr_dynamics < 0.0 {
            return Err(Error::config("learning rates must be non-negative"));
        }
        if self.n_sub == 0 {
            return Err(Error::config("n_sub must be at least 1"));
        }
        if !(0.0 < self.residual_subsample && self.residual_subsample <= 1.0) {
            return Err(Error::config(format!(
                "residual_subsample must lie in (0, 1], got {}",
                self.residual_subsample
            )));
        }
        Ok(())
    }
}

/// Settings of the unsupervised fine-tuning pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneConfig {
    pub steps: usize,
    pub weights: FineTuneWeights,
    /// Learning rate for the decoder and hypernetwork during fine-tuning.
    pub lr: f64,
    /// Collocation subsample fraction for the residual term.
    pub subsample: f64,
    /// Seed of the collocation resampling (only relevant below 1.0).
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            steps: 300,
            weights: FineTuneWeights::default(),
            lr: 1e-3,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.lr < 0.0 {
            return Err(Error::config("fine-tune learning rate must be non-negative"));
        }
        if !(0.0 < self.subsample && self.subsample <= 1.0) {
            return Err(Error::config("fine-tune subsample must lie in (0, 1]"));
        }
        Ok(())
    }
}
