//! Finite-difference gradient verification.
//!
//! Central differences with a caller-chosen step acting directly on the
//! parameter storage. The forward evaluations run on throwaway tapes, so the
//! check is independent of the reverse-mode path it validates.

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Relative error with an absolute floor, so gradients that are legitimately
/// zero on both sides compare as equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest elementwise [`relative_error`] across two equally shaped tensors.
pub fn max_relative_error(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

/// Central finite-difference gradients of a scalar objective with respect to
/// the listed parameters.
pub fn finite_difference_grads<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    step: f64,
    mut objective: F,
) -> Result<Vec<Tensor>>
where
    F: FnMut(&Tape, &ParamStore) -> Result<Var>,
{
    let mut eval = |store: &ParamStore| -> Result<f64> {
        let tape = Tape::inference();
        objective(&tape, store)?.scalar_value()
    };
    let mut grads = Vec::with_capacity(ids.len());
    for &id in ids {
        let numel = store.value(id).numel();
        let mut g = Tensor::zeros(store.value(id).shape());
        for i in 0..numel {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + step;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - step;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            g.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Outcome of one reverse-mode vs finite-difference comparison.
#[derive(Debug)]
pub struct GradCheck {
    /// Worst elementwise relative error across all checked parameters.
    pub max_rel_error: f64,
    /// Name of the parameter where the worst error occurred.
    pub worst_param: String,
}

impl GradCheck {
    /// Runs the objective once under reverse mode and compares every listed
    /// parameter's gradient against central differences.
    pub fn run<F>(
        store: &mut ParamStore,
        ids: &[ParamId],
        step: f64,
        mut objective: F,
    ) -> Result<GradCheck>
    where
        F: FnMut(&Tape, &ParamStore) -> Result<Var>,
    {
        store.zero_grads();
        {
            let tape = Tape::new();
            let loss = objective(&tape, store)?;
            loss.backward_into(store)?;
        }
        let reverse: Vec<Tensor> = ids.iter().map(|&id| store.grad(id).clone()).collect();
        let fd = finite_difference_grads(store, ids, step, objective)?;
        let mut worst = (0.0, String::new());
        for ((&id, ad), fd) in ids.iter().zip(&reverse).zip(&fd) {
            let err = max_relative_error(ad, fd);
            if err >= worst.0 {
                worst = (err, store.param(id).name.clone());
            }
        }
        Ok(GradCheck {
            max_rel_error: worst.0,
            worst_param: worst.1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamGroup;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_sin_of_matrix_vector_product_matches_fd() {
        // loss = sum(sin(W x)) for a random 3x3 W, checked against central
        // differences with step 1e-6 at relative error 1e-6.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let w = store.add(
            "w",
            ParamGroup::Dynamics,
            Tensor::from_fn(&[3, 3], |_| rng.random_range(-1.0..1.0)),
        );
        let x = Tensor::column(&[0.4, -0.9, 1.3]);
        let check = GradCheck::run(&mut store, &[w], 1e-6, |tape, store| {
            let wv = tape.param(store, w);
            let xv = tape.constant(x.clone());
            Ok(wv.matmul(&xv)?.sin().sum())
        })
        .unwrap();
        assert!(
            check.max_rel_error < 1e-6,
            "relative error {} on {}",
            check.max_rel_error,
            check.worst_param
        );
    }

    #[test]
    fn every_primitive_op_matches_fd() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let a = store.add(
                "a",
                ParamGroup::Dynamics,
                Tensor::from_fn(&[2, 3], |_| rng.random_range(-1.0..1.0)),
            );
            let b = store.add(
                "b",
                ParamGroup::Dynamics,
                Tensor::from_fn(&[2, 3], |_| rng.random_range(-1.0..1.0)),
            );
            let check = GradCheck::run(&mut store, &[a, b], 1e-6, |tape, store| {
                let av = tape.param(store, a);
                let bv = tape.param(store, b);
                // Exercise elementwise ops, transpose, matmul, tile, slice,
                // concat, reshape, frobenius norm, mean in one objective.
                let s = av.add(&bv)?.sin();
                let h = s.mul(&av.tanh())?;
                let m = h.matmul(&bv.transpose()?)?; // [2,2]
                let row = m.slice2d(0, 1, 0, 2)?;
                let tiled = row.tile_rows(3)?; // [3,2]
                let cat = crate::tensor::concat_rows(&[tiled, m.clone()])?; // [5,2]
                let flat = cat.reshape(&[10, 1])?;
                let q = flat.square().mean().scale(0.5);
                let n = av.sub(&bv)?.frob_norm();
                Ok(q.add(&n)?.add(&m.sum())?.sum())
            })
            .unwrap();
            assert!(
                check.max_rel_error < 1e-6,
                "seed {seed}: relative error {} on {}",
                check.max_rel_error,
                check.worst_param
            );
        }
    }
}
