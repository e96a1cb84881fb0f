//! Reduced-order surrogates for a parametrized 2D Burgers problem.
//!
//! The crate couples four pieces into one trainable pipeline:
//!
//! * [`fom`] — an implicit backward-Euler finite-difference solver that
//!   produces ground-truth trajectories over a range of Reynolds numbers,
//! * [`latent`] — neural latent dynamics (NODE, PNODE, and a
//!   hypernetwork-conditioned low-rank PNODE) integrated by an unrolled RK4
//!   scheme,
//! * [`decoder`] — a FourierNet implicit neural representation that maps a
//!   spatial coordinate and a latent state to PDE state values,
//! * [`loss`] / [`train`] — data-matching plus physics-informed losses,
//!   full-trajectory Adam training, unsupervised fine-tuning on unseen
//!   Reynolds numbers and evaluation metrics.
//!
//! Everything runs on [`tensor`], a small dense f64 tensor type with
//! reverse-mode automatic differentiation. Binary dataset/checkpoint
//! formats, CSV logs, heatmap export and the command-line front end live in
//! [`io`].
//!
//! The `examples/` directory walks through each capability end to end; the
//! `inr-rom` binary exposes the same steps as `generate`, `train`,
//! `finetune`, `evaluate` and `export` subcommands.

pub mod decoder;
pub mod error;
pub mod fom;
pub mod io;
pub mod latent;
pub mod loss;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
