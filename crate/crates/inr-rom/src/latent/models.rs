//! Velocity networks: dense MLPs and the hypernetwork-conditioned low-rank
//! variant.

use rand::Rng;

use crate::error::{Error, Result};
use crate::latent::{DynamicsArch, ModelKind};
use crate::tensor::{concat_rows, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};

fn uniform_init(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let limit = (1.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-limit..limit))
}

/// Orthonormal columns via modified Gram-Schmidt on a random matrix.
pub fn orthonormal_columns(rng: &mut impl Rng, n: usize, r: usize) -> Tensor {
    assert!(r <= n, "cannot orthonormalize {r} columns in dimension {n}");
    let mut cols: Vec<Vec<f64>> = (0..r)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    for j in 0..r {
        for i in 0..j {
            let dot: f64 = (0..n).map(|k| cols[j][k] * cols[i][k]).sum();
            for k in 0..n {
                cols[j][k] -= dot * cols[i][k];
            }
        }
        let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for k in 0..n {
            cols[j][k] /= norm;
        }
    }
    Tensor::from_fn(&[n, r], |i| cols[i % r][i / r])
}

/// Fully connected MLP with tanh hidden activations and a linear output.
/// Weights are stored `[out, in]` and applied to column vectors.
#[derive(Debug, Clone)]
pub struct DenseMlp {
    pub layers: Vec<(ParamId, ParamId)>,
    pub dims: Vec<usize>,
}

impl DenseMlp {
    /// Registers weights for the layer widths in `dims` (input first,
    /// output last), uniformly initialized in +-sqrt(1/fan_in).
    pub fn build(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        group: ParamGroup,
        dims: &[usize],
    ) -> Self {
        let mut layers = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weight = store.add(
                format!("{prefix}.layer{i}.weight"),
                group,
                uniform_init(rng, &[fan_out, fan_in], fan_in),
            );
            let bias = store.add(
                format!("{prefix}.layer{i}.bias"),
                group,
                uniform_init(rng, &[fan_out, 1], fan_in),
            );
            layers.push((weight, bias));
        }
        DenseMlp {
            layers,
            dims: dims.to_vec(),
        }
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: &Var) -> Result<Var> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, *w);
            let bv = tape.param(store, *b);
            h = wv.matmul(&h)?.add(&bv)?;
            if i != last {
                h = h.tanh();
            }
        }
        Ok(h)
    }
}

/// One internal low-rank layer: `U diag(s) V^T h + b` with externally
/// supplied diagonals.
#[derive(Debug, Clone)]
pub struct LowRankLayer {
    pub u: ParamId,
    pub v: ParamId,
    pub bias: ParamId,
}

/// MLP whose internal layers are low-rank factorizations; the first and
/// last layers stay dense. Hidden activations are tanh, output linear.
#[derive(Debug, Clone)]
pub struct LowRankMlp {
    pub first: (ParamId, ParamId),
    pub internal: Vec<LowRankLayer>,
    pub last: (ParamId, ParamId),
    pub units: usize,
    pub rank: usize,
}

impl LowRankMlp {
    pub fn build(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        group: ParamGroup,
        input_dim: usize,
        units: usize,
        rank: usize,
        internal_layers: usize,
        output_dim: usize,
    ) -> Self {
        let first = (
            store.add(
                format!("{prefix}.first.weight"),
                group,
                uniform_init(rng, &[units, input_dim], input_dim),
            ),
            store.add(
                format!("{prefix}.first.bias"),
                group,
                uniform_init(rng, &[units, 1], input_dim),
            ),
        );
        let mut internal = Vec::new();
        for i in 0..internal_layers {
            internal.push(LowRankLayer {
                u: store.add(
                    format!("{prefix}.lowrank{i}.u"),
                    group,
                    orthonormal_columns(rng, units, rank),
                ),
                v: store.add(
                    format!("{prefix}.lowrank{i}.v"),
                    group,
                    orthonormal_columns(rng, units, rank),
                ),
                bias: store.add(
                    format!("{prefix}.lowrank{i}.bias"),
                    group,
                    uniform_init(rng, &[units, 1], units),
                ),
            });
        }
        let last = (
            store.add(
                format!("{prefix}.out.weight"),
                group,
                uniform_init(rng, &[output_dim, units], units),
            ),
            store.add(
                format!("{prefix}.out.bias"),
                group,
                uniform_init(rng, &[output_dim, 1], units),
            ),
        );
        LowRankMlp {
            first,
            internal,
            last,
            units,
            rank,
        }
    }

    /// Forward pass; `diagonals` holds one `[rank, 1]` vector per internal
    /// layer.
    pub fn forward(
        &self,
        tape: &Tape,
        store: &ParamStore,
        x: &Var,
        diagonals: &[Var],
    ) -> Result<Var> {
        if diagonals.len() != self.internal.len() {
            return Err(Error::contract(format!(
                "expected {} diagonal vectors, got {}",
                self.internal.len(),
                diagonals.len()
            )));
        }
        let w0 = tape.param(store, self.first.0);
        let b0 = tape.param(store, self.first.1);
        let mut h = w0.matmul(x)?.add(&b0)?.tanh();
        for (layer, s) in self.internal.iter().zip(diagonals) {
            let u = tape.param(store, layer.u);
            let v = tape.param(store, layer.v);
            let b = tape.param(store, layer.bias);
            // U diag(s) V^T h  ==  U (s . (V^T h))
            let vth = v.transpose()?.matmul(&h)?;
            let scaled = s.mul(&vth)?;
            h = u.matmul(&scaled)?.add(&b)?.tanh();
        }
        let wl = tape.param(store, self.last.0);
        let bl = tape.param(store, self.last.1);
        wl.matmul(&h)?.add(&bl)
    }
}

/// A latent velocity model of one of the three kinds.
#[derive(Debug, Clone)]
pub enum DynamicsModel {
    Node { mlp: DenseMlp },
    Pnode { mlp: DenseMlp },
    HyperPnode { lowrank: LowRankMlp, hyper: DenseMlp },
}

/// Per-trajectory context: the hypernetwork diagonals are a pure function of
/// the encoded parameter, computed once and reused across all time steps.
#[derive(Debug, Clone)]
pub struct PreparedDynamics {
    pub mu_feature: f64,
    pub diagonals: Vec<Var>,
}

impl DynamicsModel {
    /// Builds the velocity net (and hypernetwork) for `arch`, registering
    /// parameters under the `dynamics.` / `hypernet.` prefixes.
    pub fn build(store: &mut ParamStore, rng: &mut impl Rng, arch: &DynamicsArch) -> Result<Self> {
        arch.validate()?;
        let n = arch.hidden_units;
        match arch.kind {
            ModelKind::Node | ModelKind::Pnode => {
                let mut dims = vec![arch.input_dim()];
                dims.extend(std::iter::repeat_n(n, arch.hidden_layers));
                dims.push(arch.latent_dim);
                let mlp = DenseMlp::build(store, rng, "dynamics", ParamGroup::Dynamics, &dims);
                Ok(match arch.kind {
                    ModelKind::Node => DynamicsModel::Node { mlp },
                    _ => DynamicsModel::Pnode { mlp },
                })
            }
            ModelKind::HyperPnode => {
                let lowrank = LowRankMlp::build(
                    store,
                    rng,
                    "dynamics",
                    ParamGroup::Dynamics,
                    arch.input_dim(),
                    n,
                    arch.rank,
                    arch.internal_layers(),
                    arch.latent_dim,
                );
                // Hypernetwork maps the scalar encoded parameter to the
                // concatenated diagonals. Its output layer starts near
                // s = 1 so the initial map is close to U V^T with
                // orthonormal factors.
                let mut dims = vec![1usize];
                dims.extend(std::iter::repeat_n(
                    arch.hyper_hidden_units,
                    arch.hyper_hidden_layers,
                ));
                dims.push(arch.rank * arch.internal_layers());
                let hyper = DenseMlp::build(store, rng, "hypernet", ParamGroup::Hypernet, &dims);
                let (out_w, out_b) = *hyper.layers.last().expect("hypernet has layers");
                for v in store.value_mut(out_w).data_mut() {
                    *v *= 0.01;
                }
                store.value_mut(out_b).fill(1.0);
                Ok(DynamicsModel::HyperPnode { lowrank, hyper })
            }
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            DynamicsModel::Node { .. } => ModelKind::Node,
            DynamicsModel::Pnode { .. } => ModelKind::Pnode,
            DynamicsModel::HyperPnode { .. } => ModelKind::HyperPnode,
        }
    }

    /// Runs the hypernetwork once for this trajectory's parameter encoding.
    /// For the dense kinds the context carries no diagonals.
    pub fn prepare(
        &self,
        tape: &Tape,
        store: &ParamStore,
        mu_feature: f64,
    ) -> Result<PreparedDynamics> {
        let diagonals = match self {
            DynamicsModel::HyperPnode { lowrank, hyper } => {
                let input = tape.constant(Tensor::column(&[mu_feature]));
                let all = hyper.forward(tape, store, &input)?;
                let r = lowrank.rank;
                (0..lowrank.internal.len())
                    .map(|i| all.slice2d(i * r, r, 0, 1))
                    .collect::<Result<Vec<_>>>()?
            }
            _ => Vec::new(),
        };
        Ok(PreparedDynamics {
            mu_feature,
            diagonals,
        })
    }

    /// Latent velocity at state `u` and time `t`.
    ///
    /// `Node` input is `[u; t]`, `Pnode` input `[u; t; mu]`, `HyperPnode`
    /// evaluates the low-rank MLP on `[u; t]` with the prepared diagonals.
    pub fn velocity(
        &self,
        tape: &Tape,
        store: &ParamStore,
        u: &Var,
        t: f64,
        ctx: &PreparedDynamics,
    ) -> Result<Var> {
        let expected_in = match self {
            DynamicsModel::Node { mlp } | DynamicsModel::Pnode { mlp } => mlp.dims[0],
            DynamicsModel::HyperPnode { lowrank, .. } => {
                store.value(lowrank.first.0).cols()
            }
        };
        let u_len = u.shape().iter().product::<usize>();
        let extra = match self {
            DynamicsModel::Pnode { .. } => 2,
            _ => 1,
        };
        if u.shape().len() != 2 || u.shape()[1] != 1 || u_len + extra != expected_in {
            return Err(Error::contract(format!(
                "latent state shape {:?} does not match the checkpoint input width {}",
                u.shape(),
                expected_in
            )));
        }
        let tv = tape.constant(Tensor::column(&[t]));
        match self {
            DynamicsModel::Node { mlp } => {
                let input = concat_rows(&[u.clone(), tv])?;
                mlp.forward(tape, store, &input)
            }
            DynamicsModel::Pnode { mlp } => {
                let muv = tape.constant(Tensor::column(&[ctx.mu_feature]));
                let input = concat_rows(&[u.clone(), tv, muv])?;
                mlp.forward(tape, store, &input)
            }
            DynamicsModel::HyperPnode { lowrank, .. } => {
                let input = concat_rows(&[u.clone(), tv])?;
                lowrank.forward(tape, store, &input, &ctx.diagonals)
            }
        }
    }
}

/// Orthogonality penalty over the internal low-rank layers:
/// `rho1 ||U^T U - I||_F + rho2 ||V^T V - I||_F` summed across layers.
/// Calling it on a dense-kind model is a contract error.
pub fn orthogonality_penalty(
    tape: &Tape,
    store: &ParamStore,
    model: &DynamicsModel,
    rho1: f64,
    rho2: f64,
) -> Result<Var> {
    let DynamicsModel::HyperPnode { lowrank, .. } = model else {
        return Err(Error::contract(format!(
            "orthogonality penalty applies to hyper_pnode only, got {}",
            model.kind()
        )));
    };
    let eye = tape.constant(Tensor::eye(lowrank.rank));
    let mut total = tape.scalar(0.0);
    for layer in &lowrank.internal {
        for (id, rho) in [(layer.u, rho1), (layer.v, rho2)] {
            let m = tape.param(store, id);
            let gram = m.transpose()?.matmul(&m)?;
            let dev = gram.sub(&eye)?.frob_norm().scale(rho);
            total = total.add(&dev)?;
        }
    }
    Ok(total)
}
