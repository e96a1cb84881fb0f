//! Training and fine-tuning loops.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::grid_coords;
use crate::error::{Error, Result};
use crate::fom::{initial_condition, Dataset};
use crate::latent::{orthogonality_penalty, ModelKind};
use crate::loss::{
    bc_loss, data_loss, finetune_loss, ic_loss, pde_residual, total_loss, LossBreakdown,
    LossParts,
};
use crate::tensor::{ParamGroup, Tape, Tensor};
use crate::train::{Adam, FineTuneConfig, RomModel, TrainConfig};

/// Per-epoch log entry; the loss columns are averaged over the parameter
/// steps within the epoch.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub wall_seconds: f64,
}

/// Outcome of a training run. On divergence the model carries the last
/// finite-loss state and `diverged` records the reason.
pub struct TrainRun {
    pub model: RomModel,
    pub adam: Adam,
    pub log: Vec<EpochRecord>,
    pub diverged: Option<String>,
}

fn subsample_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fraction: f64) -> Tensor {
    let total = rows * cols;
    let keep = ((fraction * total as f64).ceil() as usize).clamp(1, total);
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(rng);
    let mut mask = Tensor::zeros(&[rows, cols]);
    for &i in idx.iter().take(keep) {
        mask.data_mut()[i] = 1.0;
    }
    mask
}

fn average(breakdowns: &[LossBreakdown]) -> LossBreakdown {
    let n = breakdowns.len() as f64;
    let mut avg = LossBreakdown::default();
    for b in breakdowns {
        avg.data += b.data / n;
        avg.residual += b.residual / n;
        avg.ic += b.ic / n;
        avg.bc += b.bc / n;
        avg.orthogonality += b.orthogonality / n;
        avg.total += b.total / n;
    }
    avg
}

/// Trains a freshly built model on the given parameters with full-batch
/// Adam steps, one trajectory per step. `checkpoint_sink` is called at the
/// configured cadence with the current model and optimizer state.
pub fn train(
    dataset: &Dataset,
    train_mu: &[f64],
    config: &TrainConfig,
    mut checkpoint_sink: impl FnMut(&RomModel, &Adam) -> Result<()>,
) -> Result<TrainRun> {
    config.validate()?;
    if train_mu.is_empty() {
        return Err(Error::contract("training parameter list must be non-empty"));
    }
    let mu_indices: Vec<usize> = train_mu
        .iter()
        .map(|&mu| dataset.param_index(mu))
        .collect::<Result<_>>()?;

    let mut model = RomModel::build(
        config,
        dataset.grid().clone(),
        dataset.times.clone(),
        train_mu,
    )?;
    let mut adam = Adam::new(
        &model.store,
        &[
            (ParamGroup::Decoder, config.lr_decoder),
            (ParamGroup::Dynamics, config.lr_dynamics),
            (ParamGroup::Hypernet, config.lr_dynamics),
            (ParamGroup::LatentIc, config.lr_dynamics),
        ],
    );

    let coords_t = grid_coords(dataset.grid());
    let truths: Vec<Vec<Vec<Tensor>>> = mu_indices.iter().map(|&i| dataset.trajectory(i)).collect();
    let ic_fields: Vec<Tensor> = (0..2).map(|c| dataset.field(mu_indices[0], 0, c)).collect();
    let (nx_i, ny_i) = dataset.grid().interior();
    let mut mask_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x636f6c6c6f63);

    let mut log = Vec::with_capacity(config.epochs);
    let mut diverged = None;

    'epochs: for epoch in 1..=config.epochs {
        let epoch_start = Instant::now();
        let last_good = model.store.clone();
        let mut breakdowns = Vec::with_capacity(train_mu.len());
        for (slot, &mu) in train_mu.iter().enumerate() {
            let tape = Tape::new();
            let coords = tape.constant(coords_t.clone());
            let (_, decoded) = model.forward(&tape, mu, &coords)?;

            let residual = if config.physics_informed {
                let mask = if config.residual_subsample < 1.0 {
                    Some(subsample_mask(
                        &mut mask_rng,
                        ny_i,
                        nx_i,
                        config.residual_subsample,
                    ))
                } else {
                    None
                };
                Some(
                    pde_residual(&decoded, &model.times, &model.grid, mu)?
                        .mse(&tape, mask.as_ref())?,
                )
            } else {
                None
            };
            let orthogonality = if model.dynamics.kind() == ModelKind::HyperPnode {
                Some(orthogonality_penalty(
                    &tape,
                    &model.store,
                    &model.dynamics,
                    config.weights.rho_u,
                    config.weights.rho_v,
                )?)
            } else {
                None
            };
            let parts = LossParts {
                data: data_loss(&tape, &decoded, &truths[slot])?,
                residual,
                ic: ic_loss(&tape, &decoded[0], &ic_fields)?,
                bc: bc_loss(&tape, &decoded)?,
                orthogonality,
            };
            let (total, breakdown) = total_loss(&parts, &config.weights, config.physics_informed)?;
            if !breakdown.total.is_finite() {
                model.store = last_good;
                model.epoch = epoch - 1;
                diverged = Some(format!(
                    "non-finite loss at epoch {epoch} (mu = {mu}): {breakdown:?}"
                ));
                break 'epochs;
            }
            total.backward_into(&mut model.store)?;
            adam.step(&mut model.store);
            model.store.zero_grads();
            breakdowns.push(breakdown);
        }
        model.epoch = epoch;
        log.push(EpochRecord {
            epoch,
            loss: average(&breakdowns),
            wall_seconds: epoch_start.elapsed().as_secs_f64(),
        });
        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
            checkpoint_sink(&model, &adam)?;
        }
    }

    Ok(TrainRun {
        model,
        adam,
        log,
        diverged,
    })
}

/// Outcome of a fine-tuning pass.
pub struct FinetuneRun {
    pub model: RomModel,
    pub log: Vec<EpochRecord>,
    /// Set when the checkpoint was trained without the physics-informed
    /// loss; such models carry no physics signal and the pass is expected
    /// to be ineffective.
    pub warning: Option<String>,
}

/// Unsupervised fine-tuning at a single (typically unseen) parameter value:
/// only the decoder and the hypernetwork are optimized against the PDE
/// residual, the analytic initial condition and the zero boundary; every
/// other parameter stays bit-identical. No ground truth for `mu` is read.
pub fn finetune(model: &RomModel, mu: f64, ftc: &FineTuneConfig) -> Result<FinetuneRun> {
    ftc.validate()?;
    if mu <= 0.0 {
        return Err(Error::Domain(format!("mu must be positive, got {mu}")));
    }
    let mut tuned = model.clone();
    let warning = if !tuned.config.physics_informed {
        Some(
            "checkpoint was trained without the physics-informed loss; \
             fine-tuning on the residual alone is expected to fail"
                .to_string(),
        )
    } else {
        None
    };

    let mut adam = Adam::new(
        &tuned.store,
        &[
            (ParamGroup::Decoder, ftc.lr),
            (ParamGroup::Hypernet, ftc.lr),
        ],
    );
    let coords_t = grid_coords(&tuned.grid);
    let ic = initial_condition(&tuned.grid);
    let ic_fields = [ic.w, ic.z];
    let (nx_i, ny_i) = tuned.grid.interior();
    let mut mask_rng = ChaCha8Rng::seed_from_u64(ftc.seed ^ 0x66696e65);

    let mut log = Vec::with_capacity(ftc.steps);
    for step in 1..=ftc.steps {
        let start = Instant::now();
        let tape = Tape::new();
        let coords = tape.constant(coords_t.clone());
        let (_, decoded) = tuned.forward(&tape, mu, &coords)?;
        let mask = if ftc.subsample < 1.0 {
            Some(subsample_mask(&mut mask_rng, ny_i, nx_i, ftc.subsample))
        } else {
            None
        };
        let (total, breakdown) = finetune_loss(
            &tape,
            &decoded,
            &tuned.times,
            &tuned.grid,
            mu,
            &ic_fields,
            &ftc.weights,
            mask.as_ref(),
        )?;
        if !breakdown.total.is_finite() {
            return Err(Error::Diverged {
                epoch: step,
                detail: format!("non-finite fine-tune loss at mu = {mu}"),
            });
        }
        total.backward_into(&mut tuned.store)?;
        adam.step(&mut tuned.store);
        tuned.store.zero_grads();
        log.push(EpochRecord {
            epoch: step,
            loss: breakdown,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }

    Ok(FinetuneRun {
        model: tuned,
        log,
        warning,
    })
}
