//! Training objectives: data matching, physics-informed penalties and the
//! unsupervised fine-tuning loss.
//!
//! All terms are plain MSE reductions built from tape ops, so gradients flow
//! to the decoder, the latent dynamics and the latent initial state. The PDE
//! residual is discretized with second-order central differences in time
//! (interior snapshots) and space (interior nodes); those stencils are
//! linear slice/scale compositions on the tape rather than nested
//! autodifferentiation of the decoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::GridSpec;
use crate::tensor::{Tape, Tensor, Var};

/// Scaling factors of the supervised training loss
/// `data + residual + ic + bc` plus the orthogonality penalty weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub data: f64,
    pub residual: f64,
    pub ic: f64,
    pub bc: f64,
    pub rho_u: f64,
    pub rho_v: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        // The residual term scales with steep gradients at high Reynolds
        // numbers; a small weight keeps it subdominant to the data term.
        LossWeights {
            data: 1.0,
            residual: 1e-4,
            ic: 1.0,
            bc: 1.0,
            rho_u: 1e-3,
            rho_v: 1e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.data, self.residual, self.ic, self.bc, self.rho_u, self.rho_v];
        if all.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::config("loss weights must be non-negative"));
        }
        if self.data <= 0.0 {
            return Err(Error::config("supervised training needs a positive data weight"));
        }
        Ok(())
    }
}

/// Penalty weights of the physics-only fine-tuning objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneWeights {
    pub residual: f64,
    pub ic: f64,
    pub bc: f64,
}

impl Default for FineTuneWeights {
    fn default() -> Self {
        FineTuneWeights {
            residual: 1e-4,
            ic: 1.0,
            bc: 1.0,
        }
    }
}

impl FineTuneWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.residual, self.ic, self.bc]
            .iter()
            .any(|w| *w < 0.0 || !w.is_finite())
        {
            return Err(Error::config("fine-tune weights must be non-negative"));
        }
        if self.residual <= 0.0 {
            return Err(Error::config(
                "fine-tuning needs a positive residual weight; it is the only signal",
            ));
        }
        Ok(())
    }
}

/// Decoded snapshots: `[snapshot][component]`, each an `[ny, nx]` grid var.
pub type DecodedTrajectory = Vec<Vec<Var>>;

fn check_grid_fields(decoded: &DecodedTrajectory, what: &'static str) -> Result<(usize, usize)> {
    let first = decoded
        .first()
        .and_then(|s| s.first())
        .ok_or_else(|| Error::contract(format!("{what}: empty decoded trajectory")))?;
    let shape = first.shape();
    for snap in decoded {
        for f in snap {
            if f.shape() != shape {
                return Err(Error::Dimension {
                    op: what,
                    lhs: shape,
                    rhs: f.shape(),
                });
            }
        }
    }
    Ok((shape[0], shape[1]))
}

/// Mean squared difference over all snapshots, components and nodes.
pub fn data_loss(tape: &Tape, decoded: &DecodedTrajectory, truth: &[Vec<Tensor>]) -> Result<Var> {
    check_grid_fields(decoded, "data_loss")?;
    if decoded.len() != truth.len()
        || decoded
            .iter()
            .zip(truth)
            .any(|(d, t)| d.len() != t.len())
    {
        return Err(Error::contract(format!(
            "data_loss: decoded {} snapshots, truth {}",
            decoded.len(),
            truth.len()
        )));
    }
    let mut sum = tape.scalar(0.0);
    let mut count = 0usize;
    for (snap, truth_snap) in decoded.iter().zip(truth) {
        for (field, target) in snap.iter().zip(truth_snap) {
            if field.shape() != target.shape() {
                return Err(Error::Dimension {
                    op: "data_loss",
                    lhs: field.shape(),
                    rhs: target.shape().to_vec(),
                });
            }
            let t = tape.constant(target.clone());
            sum = sum.add(&field.sub(&t)?.square().sum())?;
            count += target.numel();
        }
    }
    Ok(sum.scale(1.0 / count as f64))
}

/// MSE of the decoded snapshot 0 against the true initial condition, over
/// all nodes and components.
pub fn ic_loss(tape: &Tape, decoded0: &[Var], truth_ic: &[Tensor]) -> Result<Var> {
    if decoded0.len() != truth_ic.len() {
        return Err(Error::contract("ic_loss: component count mismatch"));
    }
    let mut sum = tape.scalar(0.0);
    let mut count = 0usize;
    for (field, target) in decoded0.iter().zip(truth_ic) {
        if field.shape() != target.shape() {
            return Err(Error::Dimension {
                op: "ic_loss",
                lhs: field.shape(),
                rhs: target.shape().to_vec(),
            });
        }
        let t = tape.constant(target.clone());
        sum = sum.add(&field.sub(&t)?.square().sum())?;
        count += target.numel();
    }
    Ok(sum.scale(1.0 / count as f64))
}

/// MSE of the decoded boundary values against zero, over all snapshots and
/// components.
pub fn bc_loss(tape: &Tape, decoded: &DecodedTrajectory) -> Result<Var> {
    let (ny, nx) = check_grid_fields(decoded, "bc_loss")?;
    let mut sum = tape.scalar(0.0);
    let mut count = 0usize;
    for snap in decoded {
        for field in snap {
            // Four edge strips cover each boundary node exactly once.
            let strips = [
                field.slice2d(0, 1, 0, nx)?,
                field.slice2d(ny - 1, 1, 0, nx)?,
                field.slice2d(1, ny - 2, 0, 1)?,
                field.slice2d(1, ny - 2, nx - 1, 1)?,
            ];
            for s in strips {
                count += s.shape().iter().product::<usize>();
                sum = sum.add(&s.square().sum())?;
            }
        }
    }
    Ok(sum.scale(1.0 / count as f64))
}

/// Discrete PDE residual of a decoded trajectory at interior nodes and
/// interior snapshot instants.
#[derive(Debug)]
pub struct ResidualField {
    /// `[interior snapshot][component]`, each `[ny-2, nx-2]`.
    pub fields: Vec<Vec<Var>>,
}

impl ResidualField {
    /// Mean of squared residual entries. An optional 0/1 mask (shape
    /// `[ny-2, nx-2]`, shared across snapshots and components) restricts the
    /// collocation set; the mean then runs over the selected entries.
    pub fn mse(&self, tape: &Tape, mask: Option<&Tensor>) -> Result<Var> {
        let mut sum = tape.scalar(0.0);
        let mut count = 0usize;
        for snap in &self.fields {
            for r in snap {
                match mask {
                    None => {
                        sum = sum.add(&r.square().sum())?;
                        count += r.shape().iter().product::<usize>();
                    }
                    Some(m) => {
                        let mv = tape.constant(m.clone());
                        sum = sum.add(&r.square().mul(&mv)?.sum())?;
                        count += m.data().iter().filter(|&&v| v != 0.0).count();
                    }
                }
            }
        }
        if count == 0 {
            return Err(Error::contract("residual mse over an empty collocation set"));
        }
        Ok(sum.scale(1.0 / count as f64))
    }
}

fn interior(v: &Var, ny: usize, nx: usize) -> Result<Var> {
    v.slice2d(1, ny - 2, 1, nx - 2)
}

/// Assembles `r = D_t u + (u . grad) u - (1/mu) lap u` with central
/// differences on the decoded trajectory. Requires at least 3 snapshots at
/// uniform spacing.
pub fn pde_residual(
    decoded: &DecodedTrajectory,
    times: &[f64],
    grid: &GridSpec,
    reynolds: f64,
) -> Result<ResidualField> {
    if reynolds <= 0.0 {
        return Err(Error::Domain(format!(
            "reynolds must be positive, got {reynolds}"
        )));
    }
    let (ny, nx) = check_grid_fields(decoded, "pde_residual")?;
    if (ny, nx) != (grid.ny, grid.nx) {
        return Err(Error::Dimension {
            op: "pde_residual",
            lhs: vec![ny, nx],
            rhs: vec![grid.ny, grid.nx],
        });
    }
    if decoded.len() < 3 {
        return Err(Error::contract(format!(
            "pde_residual needs at least 3 snapshots, got {}",
            decoded.len()
        )));
    }
    if decoded.len() != times.len() {
        return Err(Error::contract("times and decoded snapshots disagree"));
    }
    let dt = times[1] - times[0];
    if times
        .windows(2)
        .any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0))
    {
        return Err(Error::contract("pde_residual requires uniform snapshot spacing"));
    }

    let nu = 1.0 / reynolds;
    let (hx, hy) = (grid.hx(), grid.hy());
    let mut fields = Vec::with_capacity(decoded.len() - 2);
    for s in 1..decoded.len() - 1 {
        let w_c = interior(&decoded[s][0], ny, nx)?;
        let z_c = interior(&decoded[s][1], ny, nx)?;
        let mut per_comp = Vec::with_capacity(decoded[s].len());
        for c in 0..decoded[s].len() {
            let q = &decoded[s][c];
            let center = interior(q, ny, nx)?;
            let east = q.slice2d(1, ny - 2, 2, nx - 2)?;
            let west = q.slice2d(1, ny - 2, 0, nx - 2)?;
            let north = q.slice2d(2, ny - 2, 1, nx - 2)?;
            let south = q.slice2d(0, ny - 2, 1, nx - 2)?;

            let ddt = interior(&decoded[s + 1][c], ny, nx)?
                .sub(&interior(&decoded[s - 1][c], ny, nx)?)?
                .scale(1.0 / (2.0 * dt));
            let dx = east.sub(&west)?.scale(1.0 / (2.0 * hx));
            let dy = north.sub(&south)?.scale(1.0 / (2.0 * hy));
            let lap_x = east.add(&west)?.sub(&center.scale(2.0))?.scale(1.0 / (hx * hx));
            let lap_y = north.add(&south)?.sub(&center.scale(2.0))?.scale(1.0 / (hy * hy));

            let advection = w_c.mul(&dx)?.add(&z_c.mul(&dy)?)?;
            let r = ddt
                .add(&advection)?
                .sub(&lap_x.add(&lap_y)?.scale(nu))?;
            per_comp.push(r);
        }
        fields.push(per_comp);
    }
    Ok(ResidualField { fields })
}

/// The individual loss terms of one forward pass, before weighting.
pub struct LossParts {
    pub data: Var,
    pub residual: Option<Var>,
    pub ic: Var,
    pub bc: Var,
    pub orthogonality: Option<Var>,
}

/// Scalar values of the weighted terms, for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data: f64,
    pub residual: f64,
    pub ic: f64,
    pub bc: f64,
    pub orthogonality: f64,
    pub total: f64,
}

/// Weighted sum of the loss terms. The residual term participates only in
/// physics-informed mode; the orthogonality penalty only when the model
/// provides one.
pub fn total_loss(
    parts: &LossParts,
    weights: &LossWeights,
    physics_informed: bool,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    let mut breakdown = LossBreakdown::default();
    let mut total = parts.data.scale(weights.data);
    breakdown.data = total.scalar_value()?;
    if physics_informed {
        let r = parts.residual.as_ref().ok_or_else(|| {
            Error::contract("physics-informed mode requires the residual term")
        })?;
        let wr = r.scale(weights.residual);
        breakdown.residual = wr.scalar_value()?;
        total = total.add(&wr)?;
    }
    let ic = parts.ic.scale(weights.ic);
    breakdown.ic = ic.scalar_value()?;
    total = total.add(&ic)?;
    let bc = parts.bc.scale(weights.bc);
    breakdown.bc = bc.scalar_value()?;
    total = total.add(&bc)?;
    if let Some(orth) = &parts.orthogonality {
        // rho_u / rho_v are already applied inside the penalty.
        breakdown.orthogonality = orth.scalar_value()?;
        total = total.add(orth)?;
    }
    breakdown.total = total.scalar_value()?;
    Ok((total, breakdown))
}

/// Unsupervised fine-tuning objective: PDE residual plus the analytic
/// initial condition and zero-boundary penalties. No ground-truth trajectory
/// enters.
pub fn finetune_loss(
    tape: &Tape,
    decoded: &DecodedTrajectory,
    times: &[f64],
    grid: &GridSpec,
    reynolds: f64,
    ic_truth: &[Tensor],
    weights: &FineTuneWeights,
    mask: Option<&Tensor>,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    let residual = pde_residual(decoded, times, grid, reynolds)?
        .mse(tape, mask)?
        .scale(weights.residual);
    let ic = ic_loss(tape, &decoded[0], ic_truth)?.scale(weights.ic);
    let bc = bc_loss(tape, decoded)?.scale(weights.bc);
    let total = residual.add(&ic)?.add(&bc)?;
    let breakdown = LossBreakdown {
        data: 0.0,
        residual: residual.scalar_value()?,
        ic: ic.scalar_value()?,
        bc: bc.scalar_value()?,
        orthogonality: 0.0,
        total: total.scalar_value()?,
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fom::{initial_condition, GridSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_trajectory(
        tape: &Tape,
        grid: &GridSpec,
        snaps: usize,
        value: f64,
    ) -> DecodedTrajectory {
        (0..snaps)
            .map(|_| {
                (0..2)
                    .map(|_| tape.constant(Tensor::full(&[grid.ny, grid.nx], value)))
                    .collect()
            })
            .collect()
    }

    fn random_trajectory(
        tape: &Tape,
        grid: &GridSpec,
        snaps: usize,
        seed: u64,
    ) -> (DecodedTrajectory, Vec<Vec<Tensor>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vars = Vec::new();
        let mut tensors = Vec::new();
        for _ in 0..snaps {
            let mut vs = Vec::new();
            let mut ts = Vec::new();
            for _ in 0..2 {
                let t = Tensor::from_fn(&[grid.ny, grid.nx], |_| rng.random_range(-1.0..1.0));
                vs.push(tape.constant(t.clone()));
                ts.push(t);
            }
            vars.push(vs);
            tensors.push(ts);
        }
        (vars, tensors)
    }

    #[test]
    fn data_loss_zero_on_equal_fields() {
        let tape = Tape::new();
        let grid = GridSpec::square(6);
        let (decoded, truth) = random_trajectory(&tape, &grid, 3, 1);
        let l = data_loss(&tape, &decoded, &truth).unwrap();
        assert_eq!(l.scalar_value().unwrap(), 0.0);
    }

    #[test]
    fn data_loss_one_for_unit_offset() {
        let tape = Tape::new();
        let grid = GridSpec::square(5);
        let decoded = constant_trajectory(&tape, &grid, 4, 1.0);
        let truth: Vec<Vec<Tensor>> = (0..4)
            .map(|_| (0..2).map(|_| Tensor::zeros(&[5, 5])).collect())
            .collect();
        let l = data_loss(&tape, &decoded, &truth).unwrap();
        assert!((l.scalar_value().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn data_loss_matches_loop_oracle() {
        let tape = Tape::new();
        let grid = GridSpec::square(7);
        let (decoded, _) = random_trajectory(&tape, &grid, 3, 2);
        let (_, truth) = {
            let t2 = Tape::new();
            let (_, t) = random_trajectory(&t2, &grid, 3, 3);
            ((), t)
        };
        let l = data_loss(&tape, &decoded, &truth).unwrap().scalar_value().unwrap();
        // Straight-loop MSE.
        let mut acc = 0.0;
        let mut n = 0usize;
        for (s, snap) in truth.iter().enumerate() {
            for (c, t) in snap.iter().enumerate() {
                let d = decoded[s][c].value();
                for (a, b) in d.data().iter().zip(t.data()) {
                    acc += (a - b) * (a - b);
                    n += 1;
                }
            }
        }
        assert!((l - acc / n as f64).abs() < 1e-12);
    }

    #[test]
    fn ic_loss_zero_when_decoding_the_gaussian() {
        let tape = Tape::new();
        let grid = GridSpec::square(9);
        let ic = initial_condition(&grid);
        let decoded0 = vec![tape.constant(ic.w.clone()), tape.constant(ic.z.clone())];
        let l = ic_loss(&tape, &decoded0, &[ic.w.clone(), ic.z.clone()]).unwrap();
        assert_eq!(l.scalar_value().unwrap(), 0.0);
    }

    #[test]
    fn bc_loss_of_constant_boundary() {
        let tape = Tape::new();
        let grid = GridSpec::square(6);
        // All nodes 0.1: boundary values are all 0.1, so the MSE is 0.01.
        let decoded = constant_trajectory(&tape, &grid, 2, 0.1);
        let l = bc_loss(&tape, &decoded).unwrap();
        assert!((l.scalar_value().unwrap() - 0.01).abs() < 1e-15);

        // Zero boundary: zero loss.
        let mut t = Tensor::zeros(&[6, 6]);
        for iy in 1..5 {
            for ix in 1..5 {
                t.set2(iy, ix, 3.0);
            }
        }
        let decoded = vec![vec![tape.constant(t.clone()), tape.constant(t)]];
        assert_eq!(bc_loss(&tape, &decoded).unwrap().scalar_value().unwrap(), 0.0);
    }

    #[test]
    fn residual_of_zero_trajectory_is_zero() {
        let tape = Tape::new();
        let grid = GridSpec::square(8);
        let decoded = constant_trajectory(&tape, &grid, 5, 0.0);
        let times: Vec<f64> = (0..5).map(|i| i as f64 * 0.1).collect();
        let r = pde_residual(&decoded, &times, &grid, 100.0).unwrap();
        let mse = r.mse(&tape, None).unwrap();
        assert_eq!(mse.scalar_value().unwrap(), 0.0);
    }

    #[test]
    fn residual_needs_three_snapshots_and_uniform_spacing() {
        let tape = Tape::new();
        let grid = GridSpec::square(6);
        let decoded = constant_trajectory(&tape, &grid, 2, 0.0);
        assert!(pde_residual(&decoded, &[0.0, 0.1], &grid, 10.0).is_err());
        let decoded = constant_trajectory(&tape, &grid, 3, 0.0);
        assert!(pde_residual(&decoded, &[0.0, 0.1, 0.3], &grid, 10.0).is_err());
    }

    #[test]
    fn time_constant_linear_field_reduces_to_advection() {
        // w = x, z = 0: away from the clamped frame D_t = 0, lap = 0 and
        // w dx(w) = x, so the w-residual equals x.
        let tape = Tape::new();
        let grid = GridSpec::square(13);
        let mut w = Tensor::zeros(&[13, 13]);
        for iy in 1..12 {
            for ix in 1..12 {
                w.set2(iy, ix, grid.x(ix));
            }
        }
        let z = Tensor::zeros(&[13, 13]);
        let decoded: DecodedTrajectory = (0..3)
            .map(|_| vec![tape.constant(w.clone()), tape.constant(z.clone())])
            .collect();
        let times = [0.0, 0.1, 0.2];
        let r = pde_residual(&decoded, &times, &grid, 1e6).unwrap();
        let rw = r.fields[0][0].value(); // interior snapshot 1, component w
        for iy in 2..11 {
            for ix in 2..11 {
                let got = rw.get2(iy - 1, ix - 1);
                let want = grid.x(ix);
                assert!((got - want).abs() < 1e-10, "({iy},{ix}): {got} vs {want}");
            }
        }
    }

    /// Independent loop implementation of the discrete residual.
    fn residual_oracle(
        decoded: &[Vec<Tensor>],
        times: &[f64],
        grid: &GridSpec,
        reynolds: f64,
    ) -> Vec<Vec<Tensor>> {
        let nu = 1.0 / reynolds;
        let dt = times[1] - times[0];
        let (hx, hy) = (grid.hx(), grid.hy());
        let mut out = Vec::new();
        for s in 1..decoded.len() - 1 {
            let mut per_comp = Vec::new();
            for c in 0..2 {
                let mut r = Tensor::zeros(&[grid.ny - 2, grid.nx - 2]);
                for iy in 1..grid.ny - 1 {
                    for ix in 1..grid.nx - 1 {
                        let q = &decoded[s][c];
                        let ddt = (decoded[s + 1][c].get2(iy, ix)
                            - decoded[s - 1][c].get2(iy, ix))
                            / (2.0 * dt);
                        let dx = (q.get2(iy, ix + 1) - q.get2(iy, ix - 1)) / (2.0 * hx);
                        let dy = (q.get2(iy + 1, ix) - q.get2(iy - 1, ix)) / (2.0 * hy);
                        let lap = (q.get2(iy, ix + 1) - 2.0 * q.get2(iy, ix)
                            + q.get2(iy, ix - 1))
                            / (hx * hx)
                            + (q.get2(iy + 1, ix) - 2.0 * q.get2(iy, ix) + q.get2(iy - 1, ix))
                                / (hy * hy);
                        let adv = decoded[s][0].get2(iy, ix) * dx
                            + decoded[s][1].get2(iy, ix) * dy;
                        r.set2(iy - 1, ix - 1, ddt + adv - nu * lap);
                    }
                }
                per_comp.push(r);
            }
            out.push(per_comp);
        }
        out
    }

    #[test]
    fn residual_matches_loop_oracle_on_random_fields() {
        let tape = Tape::new();
        let grid = GridSpec::square(9);
        let (decoded, tensors) = random_trajectory(&tape, &grid, 4, 5);
        let times: Vec<f64> = (0..4).map(|i| i as f64 * 0.05).collect();
        let r = pde_residual(&decoded, &times, &grid, 250.0).unwrap();
        let want = residual_oracle(&tensors, &times, &grid, 250.0);
        for (snap, want_snap) in r.fields.iter().zip(&want) {
            for (rf, wf) in snap.iter().zip(want_snap) {
                let rv = rf.value();
                for (a, b) in rv.data().iter().zip(wf.data()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn masked_residual_mse_counts_selected_points_only() {
        let tape = Tape::new();
        let grid = GridSpec::square(6);
        let decoded = constant_trajectory(&tape, &grid, 3, 0.5);
        let times = [0.0, 0.1, 0.2];
        let r = pde_residual(&decoded, &times, &grid, 100.0).unwrap();
        let mut mask = Tensor::zeros(&[4, 4]);
        mask.data_mut()[0] = 1.0;
        mask.data_mut()[5] = 1.0;
        let full = r.mse(&tape, None).unwrap().scalar_value().unwrap();
        let masked = r.mse(&tape, Some(&mask)).unwrap().scalar_value().unwrap();
        assert!(full.is_finite() && masked.is_finite());
    }

    fn toy_parts(tape: &Tape, seed: u64) -> (LossParts, [f64; 5]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mk = || {
            let v = rng.random_range(0.0..2.0);
            v
        };
        let vals = [mk(), mk(), mk(), mk(), mk()];
        (
            LossParts {
                data: tape.scalar(vals[0]),
                residual: Some(tape.scalar(vals[1])),
                ic: tape.scalar(vals[2]),
                bc: tape.scalar(vals[3]),
                orthogonality: Some(tape.scalar(vals[4])),
            },
            vals,
        )
    }

    #[test]
    fn total_loss_reduces_to_data_term() {
        let tape = Tape::new();
        let (parts, vals) = toy_parts(&tape, 1);
        let w = LossWeights {
            data: 1.0,
            residual: 0.0,
            ic: 0.0,
            bc: 0.0,
            rho_u: 0.0,
            rho_v: 0.0,
        };
        let parts_no_orth = LossParts {
            orthogonality: None,
            ..parts
        };
        let (total, _) = total_loss(&parts_no_orth, &w, false).unwrap();
        assert!((total.scalar_value().unwrap() - vals[0]).abs() < 1e-15);
    }

    #[test]
    fn non_pi_total_ignores_the_residual_term() {
        let tape = Tape::new();
        let (mut parts, _) = toy_parts(&tape, 2);
        parts.orthogonality = None;
        let w = LossWeights::default();
        let (a, _) = total_loss(&parts, &w, false).unwrap();
        parts.residual = Some(tape.scalar(999.0));
        let (b, _) = total_loss(&parts, &w, false).unwrap();
        assert_eq!(a.scalar_value().unwrap(), b.scalar_value().unwrap());
    }

    #[test]
    fn unit_weights_recompose_the_sum_of_terms() {
        let tape = Tape::new();
        let (parts, vals) = toy_parts(&tape, 3);
        let w = LossWeights {
            data: 1.0,
            residual: 1.0,
            ic: 1.0,
            bc: 1.0,
            rho_u: 1.0,
            rho_v: 1.0,
        };
        let (total, breakdown) = total_loss(&parts, &w, true).unwrap();
        let want: f64 = vals.iter().sum();
        assert!((total.scalar_value().unwrap() - want).abs() < 1e-12);
        assert!((breakdown.total - want).abs() < 1e-12);
    }

    #[test]
    fn total_is_linear_in_each_weight() {
        let tape = Tape::new();
        let (parts, vals) = toy_parts(&tape, 4);
        let base = LossWeights {
            data: 1.0,
            residual: 0.0,
            ic: 0.0,
            bc: 0.0,
            rho_u: 0.0,
            rho_v: 0.0,
        };
        for (i, term) in [(1usize, "residual"), (2, "ic"), (3, "bc")] {
            for scale in [0.5, 2.0] {
                let mut w = base;
                match term {
                    "residual" => w.residual = scale,
                    "ic" => w.ic = scale,
                    _ => w.bc = scale,
                }
                let (total, _) = total_loss(&parts, &w, true).unwrap();
                let want = vals[0] + scale * vals[i] + vals[4];
                assert!(
                    (total.scalar_value().unwrap() - want).abs() < 1e-12,
                    "term {term} scale {scale}"
                );
            }
        }
    }

    #[test]
    fn finetune_loss_composition_and_oracle() {
        let tape = Tape::new();
        let grid = GridSpec::square(7);
        let (decoded, tensors) = random_trajectory(&tape, &grid, 4, 6);
        let times: Vec<f64> = (0..4).map(|i| i as f64 * 0.1).collect();
        let ic = initial_condition(&grid);
        let ic_fields = [ic.w.clone(), ic.z.clone()];
        let weights = FineTuneWeights {
            residual: 0.3,
            ic: 0.7,
            bc: 1.3,
        };
        let (total, bd) =
            finetune_loss(&tape, &decoded, &times, &grid, 80.0, &ic_fields, &weights, None)
                .unwrap();

        // Loop-oracle recomputation of each term.
        let res = residual_oracle(&tensors, &times, &grid, 80.0);
        let mut racc = 0.0;
        let mut rn = 0usize;
        for snap in &res {
            for f in snap {
                for v in f.data() {
                    racc += v * v;
                    rn += 1;
                }
            }
        }
        let mut iacc = 0.0;
        let mut in_ = 0usize;
        for (c, icf) in ic_fields.iter().enumerate() {
            for (a, b) in tensors[0][c].data().iter().zip(icf.data()) {
                iacc += (a - b) * (a - b);
                in_ += 1;
            }
        }
        let mut bacc = 0.0;
        let mut bn = 0usize;
        for snap in &tensors {
            for f in snap {
                for iy in 0..7 {
                    for ix in 0..7 {
                        if iy == 0 || iy == 6 || ix == 0 || ix == 6 {
                            let v = f.get2(iy, ix);
                            bacc += v * v;
                            bn += 1;
                        }
                    }
                }
            }
        }
        let want = 0.3 * racc / rn as f64 + 0.7 * iacc / in_ as f64 + 1.3 * bacc / bn as f64;
        assert!((total.scalar_value().unwrap() - want).abs() < 1e-12);
        assert!((bd.total - want).abs() < 1e-12);

        // With residual weight ~0 the loss reduces to IC + BC. A zero
        // residual weight itself is rejected as a config error.
        let bad = FineTuneWeights {
            residual: 0.0,
            ..weights
        };
        assert!(
            finetune_loss(&tape, &decoded, &times, &grid, 80.0, &ic_fields, &bad, None).is_err()
        );
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        use crate::tensor::{GradCheck, ParamGroup, ParamStore};
        // Treat the decoded fields themselves as parameters and check every
        // term's gradient on a small grid.
        let grid = GridSpec::square(5);
        let times: Vec<f64> = (0..3).map(|i| i as f64 * 0.1).collect();
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
            let mut store = ParamStore::new();
            let mut ids = Vec::new();
            for s in 0..3 {
                for c in 0..2 {
                    ids.push(store.add(
                        format!("field{s}{c}"),
                        ParamGroup::Decoder,
                        Tensor::from_fn(&[5, 5], |_| rng.random_range(-1.0..1.0)),
                    ));
                }
            }
            let truth: Vec<Vec<Tensor>> = (0..3)
                .map(|_| {
                    (0..2)
                        .map(|_| Tensor::from_fn(&[5, 5], |_| rng.random_range(-1.0..1.0)))
                        .collect()
                })
                .collect();
            let ic = initial_condition(&grid);
            let check = GradCheck::run(&mut store, &ids, 1e-6, |tape, store| {
                let decoded: DecodedTrajectory = (0..3)
                    .map(|s| (0..2).map(|c| tape.param(store, ids[s * 2 + c])).collect())
                    .collect();
                let parts = LossParts {
                    data: data_loss(tape, &decoded, &truth)?,
                    residual: Some(
                        pde_residual(&decoded, &times, &grid, 120.0)?.mse(tape, None)?,
                    ),
                    ic: ic_loss(tape, &decoded[0], &[ic.w.clone(), ic.z.clone()])?,
                    bc: bc_loss(tape, &decoded)?,
                    orthogonality: None,
                };
                let (total, _) = total_loss(&parts, &LossWeights::default(), true)?;
                Ok(total)
            })
            .unwrap();
            assert!(
                check.max_rel_error < 1e-4,
                "seed {seed}: {} on {}",
                check.max_rel_error,
                check.worst_param
            );
        }
    }
}
