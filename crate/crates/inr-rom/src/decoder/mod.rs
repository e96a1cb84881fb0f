//! FourierNet implicit neural representation decoder.
//!
//! The decoder maps a continuous spatial coordinate and a latent state to
//! PDE state values, so decoded fields can be sampled at arbitrary points
//! independent of the training grid. Each stage multiplies a linear
//! transform of the running features by a sinusoidal filter of the input
//! coordinate; the latent state enters as per-stage amplitude modulation
//!
//! ```text
//! z_1     = m_1(u) . sin(X F_1 + p_1)
//! z_{i+1} = m_{i+1}(u) . ((z_i W_i + b_i) . sin(X F_{i+1} + p_{i+1}))
//! out     = z_d W_out + b_out,         m_i(u) = u^T M_i + c_i
//! ```
//!
//! One independent head per solution component, each conditioned on its own
//! block of the latent vector; heads share hyperparameters but not weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::GridSpec;
use crate::tensor::{ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};

/// Architecture of one FourierNet head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    /// Number of multiplicative stages.
    pub depth: usize,
    /// Feature width per stage.
    pub width: usize,
    /// Total frequency budget; per-stage entries are drawn uniformly in
    /// +-(omega_max / depth) because multiplicative stages compound
    /// frequencies.
    pub omega_max: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            depth: 3,
            width: 128,
            omega_max: 32.0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 {
            return Err(Error::config("decoder depth and width must be positive"));
        }
        if !(self.omega_max > 0.0) {
            return Err(Error::config("omega_max must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Stage {
    /// Frequency matrix, `[2, width]`.
    freq: ParamId,
    /// Phase row, `[1, width]`.
    phase: ParamId,
    /// Modulation map from the head's latent block, `[k, width]` and
    /// `[1, width]`.
    mod_weight: ParamId,
    mod_bias: ParamId,
}

#[derive(Debug, Clone)]
struct Head {
    stages: Vec<Stage>,
    /// Between-stage linear maps, `[width, width]` and `[1, width]`.
    linears: Vec<(ParamId, ParamId)>,
    /// Output map, `[width, 1]` and `[1, 1]`.
    out: (ParamId, ParamId),
}

/// The full decoder: one FourierNet head per solution component.
#[derive(Debug, Clone)]
pub struct Decoder {
    heads: Vec<Head>,
    pub latent_per_component: usize,
    pub config: DecoderConfig,
}

impl Decoder {
    pub fn build(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        config: &DecoderConfig,
        latent_per_component: usize,
        n_components: usize,
    ) -> Result<Self> {
        config.validate()?;
        if latent_per_component == 0 || n_components == 0 {
            return Err(Error::config("latent block and component count must be positive"));
        }
        let (d, w) = (config.depth, config.width);
        let freq_limit = config.omega_max / d as f64;
        let mut heads = Vec::with_capacity(n_components);
        for h in 0..n_components {
            let mut stages = Vec::with_capacity(d);
            for i in 0..d {
                let prefix = format!("decoder.head{h}.stage{i}");
                stages.push(Stage {
                    freq: store.add(
                        format!("{prefix}.freq"),
                        ParamGroup::Decoder,
                        Tensor::from_fn(&[2, w], |_| rng.random_range(-freq_limit..freq_limit)),
                    ),
                    phase: store.add(
                        format!("{prefix}.phase"),
                        ParamGroup::Decoder,
                        Tensor::from_fn(&[1, w], |_| {
                            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
                        }),
                    ),
                    mod_weight: store.add(
                        format!("{prefix}.mod_weight"),
                        ParamGroup::Decoder,
                        uniform(rng, &[latent_per_component, w], latent_per_component),
                    ),
                    // Bias 1 makes the modulation start as an identity-like
                    // amplitude for the zero-initialized latent state.
                    mod_bias: store.add(
                        format!("{prefix}.mod_bias"),
                        ParamGroup::Decoder,
                        Tensor::full(&[1, w], 1.0),
                    ),
                });
            }
            let mut linears = Vec::with_capacity(d.saturating_sub(1));
            for i in 0..d.saturating_sub(1) {
                let prefix = format!("decoder.head{h}.linear{i}");
                linears.push((
                    store.add(
                        format!("{prefix}.weight"),
                        ParamGroup::Decoder,
                        uniform(rng, &[w, w], w),
                    ),
                    store.add(
                        format!("{prefix}.bias"),
                        ParamGroup::Decoder,
                        uniform(rng, &[1, w], w),
                    ),
                ));
            }
            let out = (
                store.add(
                    format!("decoder.head{h}.out.weight"),
                    ParamGroup::Decoder,
                    uniform(rng, &[w, 1], w),
                ),
                store.add(
                    format!("decoder.head{h}.out.bias"),
                    ParamGroup::Decoder,
                    uniform(rng, &[1, 1], w),
                ),
            );
            heads.push(Head {
                stages,
                linears,
                out,
            });
        }
        Ok(Decoder {
            heads,
            latent_per_component,
            config: config.clone(),
        })
    }

    pub fn n_components(&self) -> usize {
        self.heads.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_per_component * self.heads.len()
    }

    /// Decodes one latent state at a set of query coordinates, returning one
    /// `[n_points, 1]` column per component.
    pub fn decode(
        &self,
        tape: &Tape,
        store: &ParamStore,
        latent: &Var,
        coords: &Var,
    ) -> Result<Vec<Var>> {
        Ok(self
            .decode_trajectory(tape, store, std::slice::from_ref(latent), coords)?
            .pop()
            .expect("one snapshot in, one snapshot out"))
    }

    /// Decodes a latent trajectory at fixed coordinates. The sinusoidal
    /// filters depend only on the coordinates, so they are computed once and
    /// shared across all snapshots on the tape.
    pub fn decode_trajectory(
        &self,
        tape: &Tape,
        store: &ParamStore,
        latents: &[Var],
        coords: &Var,
    ) -> Result<Vec<Vec<Var>>> {
        let cshape = coords.shape();
        if cshape.len() != 2 || cshape[1] != 2 {
            return Err(Error::Dimension {
                op: "decode",
                lhs: cshape,
                rhs: vec![0, 2],
            });
        }
        let n_points = cshape[0];
        let k = self.latent_per_component;
        for l in latents {
            let ls = l.shape();
            if ls != vec![self.latent_dim(), 1] {
                return Err(Error::Dimension {
                    op: "decode",
                    lhs: ls,
                    rhs: vec![self.latent_dim(), 1],
                });
            }
        }

        let mut out: Vec<Vec<Var>> = vec![Vec::with_capacity(self.heads.len()); latents.len()];
        for (h, head) in self.heads.iter().enumerate() {
            let filters: Vec<Var> = head
                .stages
                .iter()
                .map(|s| {
                    let f = tape.param(store, s.freq);
                    let p = tape.param(store, s.phase).tile_rows(n_points)?;
                    coords.matmul(&f)?.add(&p).map(|v| v.sin())
                })
                .collect::<Result<_>>()?;
            for (snap, latent) in latents.iter().enumerate() {
                let block = latent.slice2d(h * k, k, 0, 1)?.transpose()?; // [1, k]
                let modulation = |i: usize| -> Result<Var> {
                    let s = &head.stages[i];
                    let mw = tape.param(store, s.mod_weight);
                    let mb = tape.param(store, s.mod_bias);
                    block.matmul(&mw)?.add(&mb)?.tile_rows(n_points)
                };
                let mut z = modulation(0)?.mul(&filters[0])?;
                for i in 1..head.stages.len() {
                    let (w, b) = head.linears[i - 1];
                    let wv = tape.param(store, w);
                    let bv = tape.param(store, b).tile_rows(n_points)?;
                    let lin = z.matmul(&wv)?.add(&bv)?;
                    z = modulation(i)?.mul(&lin.mul(&filters[i])?)?;
                }
                let (w_out, b_out) = head.out;
                let wv = tape.param(store, w_out);
                let bv = tape.param(store, b_out).tile_rows(n_points)?;
                out[snap].push(z.matmul(&wv)?.add(&bv)?);
            }
        }
        Ok(out)
    }
}

fn uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let limit = (1.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-limit..limit))
}

/// Grid nodes as decoder query coordinates, normalized to [-1, 1]^2, in the
/// same row-major order as the field tensors (`point = iy * nx + ix`).
pub fn grid_coords(grid: &GridSpec) -> Tensor {
    let mut data = Vec::with_capacity(grid.n_nodes() * 2);
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            data.push(normalize(grid.x(ix), grid.x_range));
            data.push(normalize(grid.y(iy), grid.y_range));
        }
    }
    Tensor::new(vec![grid.n_nodes(), 2], data).expect("consistent layout")
}

fn normalize(v: f64, range: [f64; 2]) -> f64 {
    2.0 * (v - range[0]) / (range[1] - range[0]) - 1.0
}
