//! The trainable model bundle: parameters, dynamics, decoder and metadata.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::Decoder;
use crate::error::{Error, Result};
use crate::fom::{GridSpec, N_COMPONENTS};
use crate::latent::{integrate, DynamicsModel, MuEncoding};
use crate::loss::DecodedTrajectory;
use crate::tensor::{concat_rows, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::train::TrainConfig;

/// Latent initial state parameters. Auto-decoding makes them trainable; the
/// shared variant uses one state for every trajectory, which also covers
/// unseen parameters at test time since the initial condition here does not
/// depend on the PDE parameter.
#[derive(Debug, Clone)]
pub enum U0Params {
    /// One `[k, 1]` block per component head, shared across parameters.
    Shared(Vec<ParamId>),
    /// One latent initial state per training parameter.
    PerMu {
        mu_values: Vec<f64>,
        blocks: Vec<Vec<ParamId>>,
    },
}

/// A complete surrogate model: its parameter store, the network structure
/// handles and the metadata needed to run it without the training dataset.
#[derive(Debug, Clone)]
pub struct RomModel {
    pub store: ParamStore,
    pub dynamics: DynamicsModel,
    pub decoder: Decoder,
    pub u0: U0Params,
    pub config: TrainConfig,
    pub grid: GridSpec,
    pub times: Vec<f64>,
    pub mu_encoding: MuEncoding,
    pub epoch: usize,
}

impl RomModel {
    /// Builds a freshly initialized model. Parameter registration order is
    /// fixed (latent initial state, dynamics, decoder) and everything is
    /// drawn from a single seeded generator, so identical configs produce
    /// identical models.
    pub fn build(
        config: &TrainConfig,
        grid: GridSpec,
        times: Vec<f64>,
        train_mu: &[f64],
    ) -> Result<Self> {
        config.validate()?;
        grid.validate()?;
        if times.first() != Some(&0.0) {
            return Err(Error::contract("snapshot times must start at 0"));
        }
        let mu_encoding = MuEncoding::from_training_set(train_mu)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let k = config.latent_per_component;

        let u0 = if config.per_mu_latent_ic {
            let blocks = train_mu
                .iter()
                .enumerate()
                .map(|(i, _)| {
                    (0..N_COMPONENTS)
                        .map(|h| {
                            store.add(
                                format!("latent.u0.mu{i}.head{h}"),
                                ParamGroup::LatentIc,
                                Tensor::zeros(&[k, 1]),
                            )
                        })
                        .collect()
                })
                .collect();
            U0Params::PerMu {
                mu_values: train_mu.to_vec(),
                blocks,
            }
        } else {
            U0Params::Shared(
                (0..N_COMPONENTS)
                    .map(|h| {
                        store.add(
                            format!("latent.u0.head{h}"),
                            ParamGroup::LatentIc,
                            Tensor::zeros(&[k, 1]),
                        )
                    })
                    .collect(),
            )
        };

        let dynamics = DynamicsModel::build(&mut store, &mut rng, &config.dynamics_arch())?;
        let decoder = Decoder::build(&mut store, &mut rng, &config.decoder, k, N_COMPONENTS)?;
        Ok(RomModel {
            store,
            dynamics,
            decoder,
            u0,
            config: config.clone(),
            grid,
            times,
            mu_encoding,
            epoch: 0,
        })
    }

    pub fn latent_dim(&self) -> usize {
        N_COMPONENTS * self.config.latent_per_component
    }

    fn u0_blocks(&self, mu: f64) -> Result<&[ParamId]> {
        match &self.u0 {
            U0Params::Shared(blocks) => Ok(blocks),
            U0Params::PerMu { mu_values, blocks } => mu_values
                .iter()
                .position(|&m| m == mu)
                .map(|i| blocks[i].as_slice())
                .ok_or_else(|| {
                    Error::contract(format!(
                        "per-mu latent table has no entry for mu = {mu}; \
                         unseen parameters need the shared latent mode"
                    ))
                }),
        }
    }

    /// Latent trajectory and decoded grid fields for one parameter value.
    /// One tape spans the whole pass: integrate the latent dynamics from the
    /// (trainable) initial state, then decode every snapshot.
    pub fn forward(
        &self,
        tape: &Tape,
        mu: f64,
        coords: &Var,
    ) -> Result<(Vec<Var>, DecodedTrajectory)> {
        let ctx = self
            .dynamics
            .prepare(tape, &self.store, self.mu_encoding.encode(mu))?;
        let blocks: Vec<Var> = self
            .u0_blocks(mu)?
            .iter()
            .map(|&id| tape.param(&self.store, id))
            .collect();
        let u0 = concat_rows(&blocks)?;
        let mut f = |u: &Var, t: f64| self.dynamics.velocity(tape, &self.store, u, t, &ctx);
        let latents = integrate(&mut f, &u0, &self.times, self.config.n_sub)?;
        let columns = self
            .decoder
            .decode_trajectory(tape, &self.store, &latents, coords)?;
        let decoded = columns
            .into_iter()
            .map(|snap| {
                snap.into_iter()
                    .map(|col| col.reshape(&[self.grid.ny, self.grid.nx]))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((latents, decoded))
    }
}
