//! Full-order model: a finite-difference solver for the parametrized 2D
//! Burgers equation
//!
//! ```text
//! dv/dt = -(v . grad) v + (1/mu) lap v      on [-3,3] x [-3,3]
//! ```
//!
//! with homogeneous Dirichlet boundaries, a Gaussian bump initial condition
//! and the Reynolds number `mu` as the PDE parameter. Time integration is
//! implicit backward Euler with an analytically assembled sparse Jacobian
//! solved by banded LU; diffusion is the 5-point central Laplacian and
//! advection is first-order upwind, switched per node by the sign of the
//! advecting velocity component.

mod dataset;
mod linalg;
mod solver;

pub use dataset::{generate_dataset, thread_count, Dataset};
pub use solver::{
    backward_euler_step, explicit_rk4_final, initial_condition, initial_profile, solve,
    spatial_residual, FomTrajectory, NewtonStats,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Uniform tensor-product grid of nodes, boundaries included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nx: 64,
            ny: 64,
            x_range: [-3.0, 3.0],
            y_range: [-3.0, 3.0],
        }
    }
}

impl GridSpec {
    pub fn square(n: usize) -> Self {
        GridSpec {
            nx: n,
            ny: n,
            ..GridSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::config(format!(
                "grid needs at least 3 nodes per axis, got {}x{}",
                self.nx, self.ny
            )));
        }
        if self.x_range[1] <= self.x_range[0] || self.y_range[1] <= self.y_range[0] {
            return Err(Error::config("grid ranges must be non-degenerate"));
        }
        Ok(())
    }

    /// Node spacing along x.
    pub fn hx(&self) -> f64 {
        (self.x_range[1] - self.x_range[0]) / (self.nx - 1) as f64
    }

    /// Node spacing along y.
    pub fn hy(&self) -> f64 {
        (self.y_range[1] - self.y_range[0]) / (self.ny - 1) as f64
    }

    pub fn x(&self, ix: usize) -> f64 {
        self.x_range[0] + ix as f64 * self.hx()
    }

    pub fn y(&self, iy: usize) -> f64 {
        self.y_range[0] + iy as f64 * self.hy()
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    /// Interior node counts per axis.
    pub fn interior(&self) -> (usize, usize) {
        (self.nx - 2, self.ny - 2)
    }
}

/// Full solver configuration for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FomConfig {
    pub grid: GridSpec,
    /// Time step of the implicit march.
    pub dt: f64,
    pub t_final: f64,
    /// Reynolds number; the viscosity is its reciprocal.
    pub reynolds: f64,
    /// Record every this-many-th step (step 0 is always recorded).
    pub snapshot_stride: usize,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
}

impl Default for FomConfig {
    fn default() -> Self {
        FomConfig {
            grid: GridSpec::default(),
            dt: 1.0 / 1000.0,
            t_final: 1.0,
            reynolds: 100.0,
            snapshot_stride: 20,
            newton_tol: 1e-10,
            newton_max_iters: 20,
        }
    }
}

impl FomConfig {
    pub fn with_reynolds(&self, reynolds: f64) -> Self {
        FomConfig {
            reynolds,
            ..self.clone()
        }
    }

    /// Number of implicit steps implied by `dt` and `t_final`.
    pub fn n_steps(&self) -> Result<usize> {
        if self.dt <= 0.0 {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        let raw = self.t_final / self.dt;
        let steps = raw.round();
        if (raw - steps).abs() > 1e-12 * raw.abs().max(1.0) {
            return Err(Error::config(format!(
                "t_final/dt = {raw} is not an integer number of steps"
            )));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.reynolds <= 0.0 {
            return Err(Error::config(format!(
                "reynolds must be positive, got {}",
                self.reynolds
            )));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::config("snapshot_stride must be positive"));
        }
        let steps = self.n_steps()?;
        if steps % self.snapshot_stride != 0 {
            return Err(Error::config(format!(
                "snapshot_stride {} does not divide the step count {steps}",
                self.snapshot_stride
            )));
        }
        if self.newton_tol <= 0.0 || self.newton_max_iters == 0 {
            return Err(Error::config("newton settings must be positive"));
        }
        Ok(())
    }

    /// Snapshot instants, starting at t = 0.
    pub fn snapshot_times(&self) -> Result<Vec<f64>> {
        let steps = self.n_steps()?;
        Ok((0..=steps / self.snapshot_stride)
            .map(|i| (i * self.snapshot_stride) as f64 * self.dt)
            .collect())
    }
}

/// Velocity field on the grid: components `w` (x) and `z` (y), each stored
/// as an `[ny, nx]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub w: Tensor,
    pub z: Tensor,
}

impl FieldState {
    pub fn zeros(grid: &GridSpec) -> Self {
        FieldState {
            w: Tensor::zeros(&[grid.ny, grid.nx]),
            z: Tensor::zeros(&[grid.ny, grid.nx]),
        }
    }

    pub fn component(&self, c: usize) -> &Tensor {
        match c {
            0 => &self.w,
            1 => &self.z,
            _ => panic!("component index out of range"),
        }
    }

    /// True when every boundary node of both components is exactly zero.
    pub fn boundary_is_zero(&self) -> bool {
        let (ny, nx) = (self.w.rows(), self.w.cols());
        for t in [&self.w, &self.z] {
            for ix in 0..nx {
                if t.get2(0, ix) != 0.0 || t.get2(ny - 1, ix) != 0.0 {
                    return false;
                }
            }
            for iy in 0..ny {
                if t.get2(iy, 0) != 0.0 || t.get2(iy, nx - 1) != 0.0 {
                    return false;
                }
            }
        }
        true
    }

    pub fn max_abs(&self) -> f64 {
        self.w.max_abs().max(self.z.max_abs())
    }
}

/// Number of solution components (w and z).
pub const N_COMPONENTS: usize = 2;

pub const COMPONENT_NAMES: [&str; N_COMPONENTS] = ["w", "z"];
