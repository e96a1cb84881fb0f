//! Spatial discretization, Newton stepping and trajectory integration.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::fom::linalg::{BandLu, Csr};
use crate::fom::{FieldState, FomConfig, GridSpec};

/// The initial bump evaluated at a physical coordinate, before boundary
/// clamping.
pub fn initial_profile(x: f64, y: f64) -> f64 {
    0.8 * (-(x * x + y * y) / 1.02).exp()
}

/// Gaussian bump initial condition with boundary nodes forced to zero.
/// Identical for every Reynolds number.
pub fn initial_condition(grid: &GridSpec) -> FieldState {
    let mut state = FieldState::zeros(grid);
    for iy in 1..grid.ny - 1 {
        for ix in 1..grid.nx - 1 {
            let v = initial_profile(grid.x(ix), grid.y(iy));
            state.w.set2(iy, ix, v);
            state.z.set2(iy, ix, v);
        }
    }
    state
}

/// Discrete right-hand side `-(v . grad) v + (1/mu) lap v` at interior
/// nodes; boundary entries are zero. Diffusion uses the 5-point central
/// Laplacian, advection first-order upwind differences with the direction
/// picked by the sign of the advecting velocity at the node.
pub fn spatial_residual(state: &FieldState, grid: &GridSpec, reynolds: f64) -> Result<FieldState> {
    if reynolds <= 0.0 {
        return Err(Error::Domain(format!(
            "reynolds must be positive, got {reynolds}"
        )));
    }
    let nu = 1.0 / reynolds;
    let (hx, hy) = (grid.hx(), grid.hy());
    let mut out = FieldState::zeros(grid);
    for iy in 1..grid.ny - 1 {
        for ix in 1..grid.nx - 1 {
            let a = state.w.get2(iy, ix);
            let b = state.z.get2(iy, ix);
            for (q, dst) in [(&state.w, &mut out.w), (&state.z, &mut out.z)] {
                let c = q.get2(iy, ix);
                let west = q.get2(iy, ix - 1);
                let east = q.get2(iy, ix + 1);
                let south = q.get2(iy - 1, ix);
                let north = q.get2(iy + 1, ix);
                let dqdx = if a >= 0.0 {
                    (c - west) / hx
                } else {
                    (east - c) / hx
                };
                let dqdy = if b >= 0.0 {
                    (c - south) / hy
                } else {
                    (north - c) / hy
                };
                let lap = (west - 2.0 * c + east) / (hx * hx) + (south - 2.0 * c + north) / (hy * hy);
                dst.set2(iy, ix, -(a * dqdx + b * dqdy) + nu * lap);
            }
        }
    }
    Ok(out)
}

/// Interleaved interior unknown index: component fastest, then x, then y.
fn unknown_index(grid: &GridSpec, iy: usize, ix: usize, comp: usize) -> usize {
    ((iy - 1) * (grid.nx - 2) + (ix - 1)) * 2 + comp
}

fn n_unknowns(grid: &GridSpec) -> usize {
    2 * (grid.nx - 2) * (grid.ny - 2)
}

fn gather(state: &FieldState, grid: &GridSpec) -> Vec<f64> {
    let mut u = vec![0.0; n_unknowns(grid)];
    for iy in 1..grid.ny - 1 {
        for ix in 1..grid.nx - 1 {
            u[unknown_index(grid, iy, ix, 0)] = state.w.get2(iy, ix);
            u[unknown_index(grid, iy, ix, 1)] = state.z.get2(iy, ix);
        }
    }
    u
}

fn scatter(u: &[f64], grid: &GridSpec) -> FieldState {
    let mut state = FieldState::zeros(grid);
    for iy in 1..grid.ny - 1 {
        for ix in 1..grid.nx - 1 {
            state.w.set2(iy, ix, u[unknown_index(grid, iy, ix, 0)]);
            state.z.set2(iy, ix, u[unknown_index(grid, iy, ix, 1)]);
        }
    }
    state
}

/// Analytic Jacobian of the spatial residual restricted to interior
/// unknowns, assembled row-wise in CSR. The upwind switch is frozen at the
/// current iterate, which is the standard Newton linearization for this
/// scheme.
pub(crate) fn residual_jacobian(state: &FieldState, grid: &GridSpec, reynolds: f64) -> Csr {
    let nu = 1.0 / reynolds;
    let (hx, hy) = (grid.hx(), grid.hy());
    let (ihx2, ihy2) = (1.0 / (hx * hx), 1.0 / (hy * hy));
    let n = n_unknowns(grid);
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(7); n];

    for iy in 1..grid.ny - 1 {
        for ix in 1..grid.nx - 1 {
            let a = state.w.get2(iy, ix);
            let b = state.z.get2(iy, ix);
            let sx = if a >= 0.0 { 1.0 } else { -1.0 };
            let sy = if b >= 0.0 { 1.0 } else { -1.0 };
            for comp in 0..2 {
                let q = state.component(comp);
                let c = q.get2(iy, ix);
                let west = q.get2(iy, ix - 1);
                let east = q.get2(iy, ix + 1);
                let south = q.get2(iy - 1, ix);
                let north = q.get2(iy + 1, ix);
                let dqdx = if a >= 0.0 {
                    (c - west) / hx
                } else {
                    (east - c) / hx
                };
                let dqdy = if b >= 0.0 {
                    (c - south) / hy
                } else {
                    (north - c) / hy
                };

                let row = unknown_index(grid, iy, ix, comp);
                let entries = &mut rows[row];

                // Same node, same component.
                let mut diag = -(a * sx / hx + b * sy / hy) - 2.0 * nu * (ihx2 + ihy2);
                // The advecting velocity of this component's own direction
                // also depends on the unknown at this node.
                if comp == 0 {
                    diag += -dqdx;
                } else {
                    diag += -dqdy;
                }
                entries.push((row, diag));

                // Same node, other component: cross advection term.
                let cross = if comp == 0 { -dqdy } else { -dqdx };
                entries.push((unknown_index(grid, iy, ix, 1 - comp), cross));

                // x neighbors.
                if ix > 1 {
                    let v = if a >= 0.0 { a / hx } else { 0.0 } + nu * ihx2;
                    entries.push((unknown_index(grid, iy, ix - 1, comp), v));
                }
                if ix < grid.nx - 2 {
                    let v = if a >= 0.0 { 0.0 } else { -a / hx } + nu * ihx2;
                    entries.push((unknown_index(grid, iy, ix + 1, comp), v));
                }
                // y neighbors.
                if iy > 1 {
                    let v = if b >= 0.0 { b / hy } else { 0.0 } + nu * ihy2;
                    entries.push((unknown_index(grid, iy - 1, ix, comp), v));
                }
                if iy < grid.ny - 2 {
                    let v = if b >= 0.0 { 0.0 } else { -b / hy } + nu * ihy2;
                    entries.push((unknown_index(grid, iy + 1, ix, comp), v));
                }
            }
        }
    }
    Csr::from_rows(n, rows)
}

/// Convergence record of one implicit step.
#[derive(Debug, Clone)]
pub struct NewtonStats {
    pub iterations: usize,
    pub final_residual: f64,
    /// Max-norm of the nonlinear residual at the start of each iteration.
    pub residual_history: Vec<f64>,
}

/// One backward-Euler step: solves
/// `u_next - u_n - dt * R(u_next) = 0` by Newton iteration with the analytic
/// banded Jacobian.
pub fn backward_euler_step(
    state: &FieldState,
    cfg: &FomConfig,
) -> Result<(FieldState, NewtonStats)> {
    backward_euler_step_at(state, cfg, 0, 0.0)
}

fn backward_euler_step_at(
    state: &FieldState,
    cfg: &FomConfig,
    time_index: usize,
    time: f64,
) -> Result<(FieldState, NewtonStats)> {
    let grid = &cfg.grid;
    let dt = cfg.dt;
    let u_n = gather(state, grid);
    let mut u = u_n.clone();
    let kl = 2 * (grid.nx - 2) + 1;
    let mut history = Vec::new();

    for iter in 1..=cfg.newton_max_iters {
        let current = scatter(&u, grid);
        let r = spatial_residual(&current, grid, cfg.reynolds)?;
        let r_flat = gather(&r, grid);
        let mut g = vec![0.0; u.len()];
        let mut norm: f64 = 0.0;
        for i in 0..u.len() {
            g[i] = u[i] - u_n[i] - dt * r_flat[i];
            norm = norm.max(g[i].abs());
        }
        history.push(norm);
        if norm < cfg.newton_tol {
            return Ok((
                current,
                NewtonStats {
                    iterations: iter,
                    final_residual: norm,
                    residual_history: history,
                },
            ));
        }

        // J = I - dt * dR/du
        let mut jac = residual_jacobian(&current, grid, cfg.reynolds);
        for row in 0..jac.n {
            for idx in jac.row_ptr[row]..jac.row_ptr[row + 1] {
                jac.vals[idx] *= -dt;
                if jac.cols[idx] == row {
                    jac.vals[idx] += 1.0;
                }
            }
        }
        let lu = BandLu::factor(&jac, kl, kl)?;
        for v in g.iter_mut() {
            *v = -*v;
        }
        lu.solve(&mut g);
        for i in 0..u.len() {
            u[i] += g[i];
        }
    }

    Err(Error::Solver {
        time_index,
        time,
        residual: *history.last().unwrap_or(&f64::NAN),
        iterations: cfg.newton_max_iters,
    })
}

/// Trajectory of snapshots plus solve diagnostics.
#[derive(Debug, Clone)]
pub struct FomTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<FieldState>,
    pub wall_seconds: f64,
    pub newton: Vec<NewtonStats>,
}

/// Marches the implicit solver from the initial condition to `t_final`,
/// recording every `snapshot_stride`-th state including step 0 and the
/// wall-clock time of the full solve.
pub fn solve(cfg: &FomConfig) -> Result<FomTrajectory> {
    cfg.validate()?;
    let start = Instant::now();
    let steps = cfg.n_steps()?;
    let mut state = initial_condition(&cfg.grid);
    let mut states = vec![state.clone()];
    let mut newton = Vec::new();
    for step in 1..=steps {
        let t = step as f64 * cfg.dt;
        let (next, stats) = backward_euler_step_at(&state, cfg, step, t)?;
        newton.push(stats);
        state = next;
        if step % cfg.snapshot_stride == 0 {
            states.push(state.clone());
        }
    }
    Ok(FomTrajectory {
        times: cfg.snapshot_times()?,
        states,
        wall_seconds: start.elapsed().as_secs_f64(),
        newton,
    })
}

/// Explicit classical RK4 march of the same spatial discretization, used as
/// the time-integration reference for convergence checks. Returns the state
/// at `t_final`.
pub fn explicit_rk4_final(cfg: &FomConfig, dt: f64) -> Result<FieldState> {
    cfg.grid.validate()?;
    if dt <= 0.0 {
        return Err(Error::config(format!("dt must be positive, got {dt}")));
    }
    let steps = (cfg.t_final / dt).round() as usize;
    let grid = &cfg.grid;
    let axpy = |s: &FieldState, k: &FieldState, h: f64| -> FieldState {
        let mut out = s.clone();
        for (dst, src) in [(&mut out.w, &k.w), (&mut out.z, &k.z)] {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += h * s;
            }
        }
        out
    };
    let mut state = initial_condition(grid);
    for _ in 0..steps {
        let k1 = spatial_residual(&state, grid, cfg.reynolds)?;
        let k2 = spatial_residual(&axpy(&state, &k1, dt / 2.0), grid, cfg.reynolds)?;
        let k3 = spatial_residual(&axpy(&state, &k2, dt / 2.0), grid, cfg.reynolds)?;
        let k4 = spatial_residual(&axpy(&state, &k3, dt), grid, cfg.reynolds)?;
        for c in 0..2 {
            let (dst, k1, k2, k3, k4) = match c {
                0 => (&mut state.w, &k1.w, &k2.w, &k3.w, &k4.w),
                _ => (&mut state.z, &k1.z, &k2.z, &k3.z, &k4.z),
            };
            for i in 0..dst.numel() {
                dst.data_mut()[i] += dt / 6.0
                    * (k1.data()[i] + 2.0 * k2.data()[i] + 2.0 * k3.data()[i] + k4.data()[i]);
            }
        }
    }
    Ok(state)
}
