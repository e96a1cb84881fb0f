//! Unrolled classical RK4 time stepping on the tape.

use crate::error::{Error, Result};
use crate::tensor::Var;

/// One classical RK4 step of size `h` from `(u, t)`. The four stage
/// evaluations stay on the tape, so backpropagation runs through the whole
/// step.
pub fn rk4_step<F>(f: &mut F, u: &Var, t: f64, h: f64) -> Result<Var>
where
    F: FnMut(&Var, f64) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::contract(format!("step size must be positive, got {h}")));
    }
    let k1 = f(u, t)?;
    let k2 = f(&u.add(&k1.scale(h / 2.0))?, t + h / 2.0)?;
    let k3 = f(&u.add(&k2.scale(h / 2.0))?, t + h / 2.0)?;
    let k4 = f(&u.add(&k3.scale(h))?, t + h)?;
    let sum = k1
        .add(&k2.scale(2.0))?
        .add(&k3.scale(2.0))?
        .add(&k4)?;
    u.add(&sum.scale(h / 6.0))
}

/// Integrates the latent state across the snapshot instants using `n_sub`
/// RK4 substeps per interval, returning the state at every instant. The
/// first entry is `u0` itself.
pub fn integrate<F>(f: &mut F, u0: &Var, times: &[f64], n_sub: usize) -> Result<Vec<Var>>
where
    F: FnMut(&Var, f64) -> Result<Var>,
{
    if times.first() != Some(&0.0) {
        return Err(Error::contract(format!(
            "snapshot times must start at 0, got {:?}",
            times.first()
        )));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::contract("snapshot times must be strictly increasing"));
    }
    if n_sub == 0 {
        return Err(Error::contract("n_sub must be at least 1"));
    }
    let mut out = Vec::with_capacity(times.len());
    let mut u = u0.clone();
    out.push(u.clone());
    for w in times.windows(2) {
        let h = (w[1] - w[0]) / n_sub as f64;
        let mut t = w[0];
        for _ in 0..n_sub {
            u = rk4_step(f, &u, t, h)?;
            t += h;
        }
        out.push(u.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn zero_velocity_is_the_identity() {
        let tape = Tape::new();
        let u = tape.constant(Tensor::column(&[1.0, -2.0]));
        let mut f = |u: &Var, _t: f64| Ok(u.scale(0.0));
        let next = rk4_step(&mut f, &u, 0.0, 0.1).unwrap();
        assert_eq!(next.value().data(), &[1.0, -2.0]);
    }

    #[test]
    fn exponential_decay_matches_analytic_solution() {
        // u' = -u from u0 = 1: one RK4 step of h = 0.1 agrees with e^{-0.1}
        // to the local truncation error.
        let tape = Tape::new();
        let u = tape.constant(Tensor::column(&[1.0]));
        let mut f = |u: &Var, _t: f64| Ok(u.scale(-1.0));
        let next = rk4_step(&mut f, &u, 0.0, 0.1).unwrap();
        let got = next.value().data()[0];
        assert!((got - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn fourth_order_convergence_on_exponential_decay() {
        // Error at t = 1 shrinks by ~2^4 per step halving.
        let run = |steps: usize| -> f64 {
            let tape = Tape::new();
            let mut u = tape.constant(Tensor::column(&[1.0]));
            let h = 1.0 / steps as f64;
            let mut f = |u: &Var, _t: f64| Ok(u.scale(-1.0));
            for i in 0..steps {
                u = rk4_step(&mut f, &u, i as f64 * h, h).unwrap();
            }
            (u.value().data()[0] - (-1.0f64).exp()).abs()
        };
        let errs: Vec<f64> = [8, 16, 32, 64].iter().map(|&s| run(s)).collect();
        for w in errs.windows(2) {
            let factor = w[0] / w[1];
            assert!(
                (14.0..=18.0).contains(&factor),
                "convergence factor {factor}, errors {errs:?}"
            );
        }
    }

    #[test]
    fn single_instant_returns_the_initial_state() {
        let tape = Tape::new();
        let u0 = tape.constant(Tensor::column(&[0.5]));
        let mut f = |u: &Var, _t: f64| Ok(u.scale(-1.0));
        let traj = integrate(&mut f, &u0, &[0.0], 1).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj[0].value().data(), &[0.5]);
    }

    #[test]
    fn zero_velocity_gives_a_constant_trajectory() {
        let tape = Tape::new();
        let u0 = tape.constant(Tensor::column(&[2.0, 3.0]));
        let mut f = |u: &Var, _t: f64| Ok(u.scale(0.0));
        let traj = integrate(&mut f, &u0, &[0.0, 0.5, 1.0], 2).unwrap();
        for u in &traj {
            assert_eq!(u.value().data(), &[2.0, 3.0]);
        }
    }

    #[test]
    fn snapshot_count_implies_step_count() {
        // 51 snapshots with one substep per interval -> exactly 50 RK4
        // steps, i.e. 200 velocity evaluations.
        let tape = Tape::new();
        let u0 = tape.constant(Tensor::column(&[1.0]));
        let times: Vec<f64> = (0..51).map(|i| i as f64 / 50.0).collect();
        let mut evals = 0usize;
        let mut f = |u: &Var, _t: f64| {
            evals += 1;
            Ok(u.scale(-0.5))
        };
        let traj = integrate(&mut f, &u0, &times, 1).unwrap();
        assert_eq!(traj.len(), 51);
        assert_eq!(evals, 200);
    }

    #[test]
    fn non_monotone_times_are_rejected() {
        let tape = Tape::new();
        let u0 = tape.constant(Tensor::column(&[1.0]));
        let mut f = |u: &Var, _t: f64| Ok(u.scale(-1.0));
        assert!(integrate(&mut f, &u0, &[0.0, 0.2, 0.2], 1).is_err());
        assert!(integrate(&mut f, &u0, &[0.1, 0.2], 1).is_err());
        assert!(integrate(&mut f, &u0, &[], 1).is_err());
    }

    #[test]
    fn gradient_flows_through_a_50_step_unroll() {
        // d(loss)/d(u0) through 50 unrolled RK4 steps of a tanh net matches
        // finite differences on a 4-dimensional latent.
        use crate::tensor::{GradCheck, ParamGroup, ParamStore};
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let w = store.add(
            "w",
            ParamGroup::Dynamics,
            Tensor::from_fn(&[4, 4], |_| rng.random_range(-0.5..0.5)),
        );
        let u0 = store.add(
            "u0",
            ParamGroup::LatentIc,
            Tensor::from_fn(&[4, 1], |_| rng.random_range(-0.5..0.5)),
        );
        let check = GradCheck::run(&mut store, &[u0], 1e-6, |tape, store| {
            let wv = tape.param(store, w);
            let u0v = tape.param(store, u0);
            let mut f = |u: &Var, _t: f64| wv.matmul(u)?.tanh().scale(0.5).sub(&u.scale(0.1));
            let times: Vec<f64> = (0..51).map(|i| i as f64 / 50.0).collect();
            let traj = integrate(&mut f, &u0v, &times, 1)?;
            Ok(traj.last().unwrap().square().sum().scale(0.5))
        })
        .unwrap();
        assert!(
            check.max_rel_error < 1e-4,
            "relative error {}",
            check.max_rel_error
        );
    }
}
