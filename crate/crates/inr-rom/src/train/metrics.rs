//! Evaluation metrics: relative trajectory errors and FOM/ROM speedups.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::decoder::grid_coords;
use crate::error::Result;
use crate::fom::Dataset;
use crate::tensor::{Tape, Tensor};
use crate::train::RomModel;

/// Per-parameter evaluation result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MuMetrics {
    pub mu: f64,
    /// `||u - u_rom|| / ||u||` over space, time and components.
    pub rel_error: f64,
    pub fom_seconds: f64,
    pub rom_seconds: f64,
    pub speedup: f64,
}

/// Aggregate metrics over a parameter set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub per_mu: Vec<MuMetrics>,
    pub avg_rel_error: f64,
    pub max_rel_error: f64,
}

/// Frobenius relative error of a decoded trajectory against ground truth.
pub fn relative_error(decoded: &[Vec<Tensor>], truth: &[Vec<Tensor>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (snap_d, snap_t) in decoded.iter().zip(truth) {
        for (d, t) in snap_d.iter().zip(snap_t) {
            for (a, b) in d.data().iter().zip(t.data()) {
                num += (a - b) * (a - b);
                den += b * b;
            }
        }
    }
    (num / den).sqrt()
}

/// Runs untracked, timed inference per parameter and compares against the
/// stored ground truth. Every requested parameter must exist in the dataset.
pub fn evaluate(model: &RomModel, dataset: &Dataset, params: &[f64]) -> Result<Metrics> {
    let mut per_mu = Vec::with_capacity(params.len());
    let coords_t = grid_coords(dataset.grid());
    for &mu in params {
        let idx = dataset.param_index(mu)?;
        let start = Instant::now();
        let tape = Tape::inference();
        let coords = tape.constant(coords_t.clone());
        let (_, decoded) = model.forward(&tape, mu, &coords)?;
        let fields: Vec<Vec<Tensor>> = decoded
            .iter()
            .map(|snap| snap.iter().map(|f| f.value()).collect())
            .collect();
        let rom_seconds = start.elapsed().as_secs_f64();
        let truth = dataset.trajectory(idx);
        let rel_error = relative_error(&fields, &truth);
        let fom_seconds = dataset.fom_seconds[idx];
        per_mu.push(MuMetrics {
            mu,
            rel_error,
            fom_seconds,
            rom_seconds,
            speedup: fom_seconds / rom_seconds,
        });
    }
    let avg = per_mu.iter().map(|m| m.rel_error).sum::<f64>() / per_mu.len().max(1) as f64;
    let max = per_mu.iter().map(|m| m.rel_error).fold(0.0, f64::max);
    Ok(Metrics {
        per_mu,
        avg_rel_error: avg,
        max_rel_error: max,
    })
}
