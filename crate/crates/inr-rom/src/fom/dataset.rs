//! Trajectory datasets over a set of Reynolds numbers.

use crate::error::{Error, Result};
use crate::fom::{solve, FomConfig, FomTrajectory, GridSpec, COMPONENT_NAMES, N_COMPONENTS};
use crate::tensor::Tensor;

/// Environment variable selecting how many worker threads `generate_dataset`
/// may use for independent per-Reynolds solves.
pub const THREADS_ENV: &str = "INR_ROM_THREADS";

/// Worker thread count from [`THREADS_ENV`], defaulting to 1.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Ground-truth trajectories for a list of PDE parameters, stored flat in
/// `[param][snapshot][component][row][col]` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub fom: FomConfig,
    pub times: Vec<f64>,
    pub params: Vec<f64>,
    pub component_names: Vec<String>,
    /// Wall-clock seconds of the full-order solve per parameter, kept for
    /// the speedup metric.
    pub fom_seconds: Vec<f64>,
    pub data: Vec<f64>,
}

impl Dataset {
    pub fn grid(&self) -> &GridSpec {
        &self.fom.grid
    }

    pub fn n_snapshots(&self) -> usize {
        self.times.len()
    }

    fn field_len(&self) -> usize {
        self.grid().n_nodes()
    }

    fn offset(&self, param: usize, snapshot: usize, comp: usize) -> usize {
        ((param * self.n_snapshots() + snapshot) * N_COMPONENTS + comp) * self.field_len()
    }

    /// Index of a parameter value, comparing exactly.
    pub fn param_index(&self, mu: f64) -> Result<usize> {
        self.params
            .iter()
            .position(|&p| p == mu)
            .ok_or_else(|| Error::contract(format!("parameter {mu} not present in dataset")))
    }

    /// One `[ny, nx]` field.
    pub fn field(&self, param: usize, snapshot: usize, comp: usize) -> Tensor {
        let o = self.offset(param, snapshot, comp);
        Tensor::new(
            vec![self.grid().ny, self.grid().nx],
            self.data[o..o + self.field_len()].to_vec(),
        )
        .expect("dataset layout is consistent")
    }

    /// All snapshots of one parameter as `[snapshot][component]` tensors.
    pub fn trajectory(&self, param: usize) -> Vec<Vec<Tensor>> {
        (0..self.n_snapshots())
            .map(|s| (0..N_COMPONENTS).map(|c| self.field(param, s, c)).collect())
            .collect()
    }

    pub fn from_parts(
        fom: FomConfig,
        times: Vec<f64>,
        params: Vec<f64>,
        component_names: Vec<String>,
        fom_seconds: Vec<f64>,
        data: Vec<f64>,
    ) -> Result<Self> {
        let ds = Dataset {
            fom,
            times,
            params,
            component_names,
            fom_seconds,
            data,
        };
        let expected =
            ds.params.len() * ds.n_snapshots() * N_COMPONENTS * ds.field_len();
        if ds.data.len() != expected {
            return Err(Error::contract(format!(
                "dataset payload has {} values, layout implies {expected}",
                ds.data.len()
            )));
        }
        if ds.fom_seconds.len() != ds.params.len() {
            return Err(Error::contract(
                "per-parameter wall times do not match the parameter list",
            ));
        }
        let mut prev = f64::NEG_INFINITY;
        for &t in &ds.times {
            if t <= prev {
                return Err(Error::contract("snapshot times must be strictly increasing"));
            }
            prev = t;
        }
        if ds.times.first() != Some(&0.0) {
            return Err(Error::contract("snapshot times must start at 0"));
        }
        Ok(ds)
    }
}

fn pack(trajectories: &[FomTrajectory], fom: &FomConfig, params: &[f64]) -> Dataset {
    let times = trajectories[0].times.clone();
    let field_len = fom.grid.n_nodes();
    let mut data =
        Vec::with_capacity(params.len() * times.len() * N_COMPONENTS * field_len);
    for traj in trajectories {
        for state in &traj.states {
            for c in 0..N_COMPONENTS {
                data.extend_from_slice(state.component(c).data());
            }
        }
    }
    Dataset {
        fom: fom.clone(),
        times,
        params: params.to_vec(),
        component_names: COMPONENT_NAMES.iter().map(|s| s.to_string()).collect(),
        fom_seconds: trajectories.iter().map(|t| t.wall_seconds).collect(),
        data,
    }
}

/// Runs one full-order solve per parameter and assembles the results. The
/// per-parameter solves are independent; with [`THREADS_ENV`] set above 1
/// they run on that many worker threads, which does not change any computed
/// value. The first failing parameter (in list order) aborts the whole
/// generation.
pub fn generate_dataset(fom: &FomConfig, params: &[f64]) -> Result<Dataset> {
    if params.is_empty() {
        return Err(Error::contract("parameter list must be non-empty"));
    }
    if let Some(bad) = params.iter().find(|&&m| m <= 0.0) {
        return Err(Error::contract(format!(
            "parameters must be positive, got {bad}"
        )));
    }
    fom.validate()?;

    let workers = thread_count().min(params.len());
    let results: Vec<Result<FomTrajectory>> = if workers <= 1 {
        params.iter().map(|&mu| solve(&fom.with_reynolds(mu))).collect()
    } else {
        let mut slots: Vec<Option<Result<FomTrajectory>>> = Vec::new();
        slots.resize_with(params.len(), || None);
        std::thread::scope(|scope| {
            for (chunk_idx, chunk) in slots.chunks_mut(params.len().div_ceil(workers)).enumerate() {
                let base = chunk_idx * params.len().div_ceil(workers);
                let fom = fom.clone();
                scope.spawn(move || {
                    for (i, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(solve(&fom.with_reynolds(params[base + i])));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("worker filled slot")).collect()
    };

    let mut trajectories = Vec::with_capacity(params.len());
    for (mu, res) in params.iter().zip(results) {
        match res {
            Ok(t) => trajectories.push(t),
            Err(e) => {
                return Err(Error::Contract(format!(
                    "full-order solve failed for mu = {mu}: {e}"
                )))
            }
        }
    }
    Ok(pack(&trajectories, fom, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_fom() -> FomConfig {
        FomConfig {
            grid: GridSpec::square(8),
            dt: 0.01,
            t_final: 0.1,
            snapshot_stride: 2,
            ..FomConfig::default()
        }
    }

    #[test]
    fn single_parameter_dataset_counts() {
        // Default snapshot schedule: 51 snapshots from 1000 steps at
        // stride 20, here scaled down to keep the test quick.
        let ds = generate_dataset(&small_fom(), &[100.0]).unwrap();
        assert_eq!(ds.params.len(), 1);
        assert_eq!(ds.n_snapshots(), 6);
        assert_eq!(ds.data.len(), 6 * 2 * 64);
    }

    #[test]
    fn default_schedule_has_51_snapshots() {
        let cfg = FomConfig::default();
        assert_eq!(cfg.snapshot_times().unwrap().len(), 51);
    }

    #[test]
    fn snapshot_zero_is_identical_across_parameters() {
        let ds = generate_dataset(&small_fom(), &[30.0, 3000.0]).unwrap();
        for c in 0..2 {
            assert_eq!(ds.field(0, 0, c), ds.field(1, 0, c));
        }
    }

    #[test]
    fn empty_or_nonpositive_parameters_rejected() {
        assert!(generate_dataset(&small_fom(), &[]).is_err());
        let err = generate_dataset(&small_fom(), &[100.0, -5.0]).unwrap_err();
        assert!(err.to_string().contains("-5"));
    }

    #[test]
    fn trajectory_accessor_matches_field_accessor() {
        let ds = generate_dataset(&small_fom(), &[50.0]).unwrap();
        let traj = ds.trajectory(0);
        assert_eq!(traj.len(), ds.n_snapshots());
        assert_eq!(traj[3][1], ds.field(0, 3, 1));
    }
}
