//! Operation tape and differentiable tensor handles.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::params::{ParamId, ParamStore};
use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};

/// Primitive operations with the extra state their backward rules need.
#[derive(Debug)]
enum Op {
    /// Constant or parameter input; nothing flows further back.
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    /// Hadamard product.
    Mul(usize, usize),
    Scale(usize, f64),
    /// Saves cos(x) from the forward pass.
    Sin { input: usize, cos: Tensor },
    Tanh(usize),
    Square(usize),
    Matmul(usize, usize),
    Transpose(usize),
    Sum(usize),
    Mean(usize),
    /// Repeats a `[1, n]` row `m` times.
    TileRows { input: usize, reps: usize },
    /// Vertical stack of matrices with equal column counts.
    ConcatRows(Vec<usize>),
    Slice2d {
        input: usize,
        row0: usize,
        rows: usize,
        col0: usize,
        cols: usize,
    },
    Reshape(usize),
    /// Frobenius norm; the gradient at exactly zero norm is defined as zero.
    FrobNorm(usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    param: Option<ParamId>,
}

#[derive(Debug)]
struct TapeInner {
    nodes: Vec<Node>,
    track: bool,
    /// Parameter leaves already materialized on this tape, so repeated use
    /// of a parameter shares one node and accumulates one gradient.
    param_leaves: HashMap<usize, usize>,
}

/// Append-only operation record for one forward/backward pass.
///
/// The tape is single-threaded and append-only, so the recorded graph is a
/// DAG in creation order by construction. Dropping the tape frees all
/// intermediate values; parameters live in the [`ParamStore`] outside it.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    /// Tape that records backward information.
    pub fn new() -> Self {
        Self::with_tracking(true)
    }

    /// Forward-only tape: values are computed but no backward state is kept.
    /// Used for inference and timing runs.
    pub fn inference() -> Self {
        Self::with_tracking(false)
    }

    fn with_tracking(track: bool) -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                track,
                param_leaves: HashMap::new(),
            })),
        }
    }

    pub fn is_tracking(&self) -> bool {
        self.inner.borrow().track
    }

    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn push(&self, op: Op, value: Tensor, param: Option<ParamId>) -> Var {
        let mut inner = self.inner.borrow_mut();
        let op = if inner.track { op } else { Op::Leaf };
        inner.nodes.push(Node { op, value, param });
        Var {
            tape: Rc::clone(&self.inner),
            id: inner.nodes.len() - 1,
        }
    }

    /// Records a constant input.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, None)
    }

    /// Scalar constant of shape `[1]`.
    pub fn scalar(&self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Materializes a parameter as a leaf on this tape. The leaf is cached:
    /// asking for the same parameter twice returns the same node, so its
    /// gradient accumulates across every use in the graph.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&node) = self.inner.borrow().param_leaves.get(&id.index()) {
            return Var {
                tape: Rc::clone(&self.inner),
                id: node,
            };
        }
        let var = self.push(Op::Leaf, store.value(id).clone(), Some(id));
        self.inner
            .borrow_mut()
            .param_leaves
            .insert(id.index(), var.id);
        var
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Handle to one tensor value recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    tape: Rc<RefCell<TapeInner>>,
    id: usize,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}


impl Var {
    fn tape(&self) -> Tape {
        Tape {
            inner: Rc::clone(&self.tape),
        }
    }

    fn same_tape(&self, other: &Var) -> Result<()> {
        if Rc::ptr_eq(&self.tape, &other.tape) {
            Ok(())
        } else {
            Err(Error::contract("operands recorded on different tapes"))
        }
    }

    /// Clones the forward value out of the tape.
    pub fn value(&self) -> Tensor {
        self.tape.borrow().nodes[self.id].value.clone()
    }

    /// Reads the forward value without cloning.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.borrow().nodes[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.borrow().nodes[self.id].value.shape().to_vec()
    }

    pub fn scalar_value(&self) -> Result<f64> {
        self.with_value(|t| t.scalar_value())
    }

    fn binary_elementwise(
        &self,
        other: &Var,
        op_name: &'static str,
        make_op: impl FnOnce(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        self.same_tape(other)?;
        let value = {
            let inner = self.tape.borrow();
            let a = &inner.nodes[self.id].value;
            let b = &inner.nodes[other.id].value;
            if a.shape() != b.shape() {
                return Err(Error::Dimension {
                    op: op_name,
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            Tensor {
                shape: a.shape().to_vec(),
                data: a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| f(*x, *y))
                    .collect(),
            }
        };
        Ok(self.tape().push(make_op(self.id, other.id), value, None))
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary_elementwise(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary_elementwise(other, "sub", Op::Sub, |a, b| a - b)
    }

    /// Hadamard (elementwise) product.
    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary_elementwise(other, "hadamard", Op::Mul, |a, b| a * b)
    }

    /// Multiplication by a plain scalar, the one permitted broadcast.
    pub fn scale(&self, factor: f64) -> Var {
        let value = self.with_value(|t| Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|x| x * factor).collect(),
        });
        self.tape().push(Op::Scale(self.id, factor), value, None)
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn sin(&self) -> Var {
        let (value, cos) = self.with_value(|t| {
            let mut s = Vec::with_capacity(t.numel());
            let mut c = Vec::with_capacity(t.numel());
            for &x in t.data() {
                let (sx, cx) = x.sin_cos();
                s.push(sx);
                c.push(cx);
            }
            (
                Tensor {
                    shape: t.shape().to_vec(),
                    data: s,
                },
                Tensor {
                    shape: t.shape().to_vec(),
                    data: c,
                },
            )
        });
        self.tape()
            .push(Op::Sin { input: self.id, cos }, value, None)
    }

    pub fn tanh(&self) -> Var {
        let value = self.with_value(|t| Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|x| x.tanh()).collect(),
        });
        self.tape().push(Op::Tanh(self.id), value, None)
    }

    pub fn square(&self) -> Var {
        let value = self.with_value(|t| Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|x| x * x).collect(),
        });
        self.tape().push(Op::Square(self.id), value, None)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Var) -> Result<Var> {
        self.same_tape(other)?;
        let value = {
            let inner = self.tape.borrow();
            let a = &inner.nodes[self.id].value;
            let b = &inner.nodes[other.id].value;
            if !a.is_matrix() || !b.is_matrix() || a.cols() != b.rows() {
                return Err(Error::Dimension {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut c = Tensor::zeros(&[a.rows(), b.cols()]);
            matmul_into(a, b, &mut c, false);
            c
        };
        Ok(self
            .tape()
            .push(Op::Matmul(self.id, other.id), value, None))
    }

    pub fn transpose(&self) -> Result<Var> {
        let value = self.with_value(|t| {
            if !t.is_matrix() {
                return Err(Error::contract(format!(
                    "transpose expects a matrix, got shape {:?}",
                    t.shape()
                )));
            }
            Ok(transpose_tensor(t))
        })?;
        Ok(self.tape().push(Op::Transpose(self.id), value, None))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&self) -> Var {
        let value = self.with_value(|t| Tensor::scalar(t.data().iter().sum()));
        self.tape().push(Op::Sum(self.id), value, None)
    }

    /// Mean of all entries, as a `[1]` tensor.
    pub fn mean(&self) -> Var {
        let value = self.with_value(|t| Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64));
        self.tape().push(Op::Mean(self.id), value, None)
    }

    /// Frobenius norm of all entries, as a `[1]` tensor.
    pub fn frob_norm(&self) -> Var {
        let value = self.with_value(|t| Tensor::scalar(t.frobenius_norm()));
        self.tape().push(Op::FrobNorm(self.id), value, None)
    }

    /// Repeats a `[1, n]` row vector into an `[m, n]` matrix.
    pub fn tile_rows(&self, reps: usize) -> Result<Var> {
        let value = self.with_value(|t| {
            if !t.is_matrix() || t.rows() != 1 {
                return Err(Error::Dimension {
                    op: "tile_rows",
                    lhs: t.shape().to_vec(),
                    rhs: vec![1, t.numel()],
                });
            }
            let n = t.cols();
            let mut data = Vec::with_capacity(reps * n);
            for _ in 0..reps {
                data.extend_from_slice(t.data());
            }
            Ok(Tensor {
                shape: vec![reps, n],
                data,
            })
        })?;
        Ok(self.tape().push(
            Op::TileRows {
                input: self.id,
                reps,
            },
            value,
            None,
        ))
    }

    /// Contiguous rectangular block of a rank-2 tensor.
    pub fn slice2d(&self, row0: usize, rows: usize, col0: usize, cols: usize) -> Result<Var> {
        let value = self.with_value(|t| {
            if !t.is_matrix() || row0 + rows > t.rows() || col0 + cols > t.cols() {
                return Err(Error::contract(format!(
                    "slice2d [{row0}..{}, {col0}..{}] out of bounds for shape {:?}",
                    row0 + rows,
                    col0 + cols,
                    t.shape()
                )));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for r in row0..row0 + rows {
                let start = r * t.cols() + col0;
                data.extend_from_slice(&t.data()[start..start + cols]);
            }
            Ok(Tensor {
                shape: vec![rows, cols],
                data,
            })
        })?;
        Ok(self.tape().push(
            Op::Slice2d {
                input: self.id,
                row0,
                rows,
                col0,
                cols,
            },
            value,
            None,
        ))
    }

    /// Reinterprets the entries under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let value = self.with_value(|t| {
            let numel: usize = shape.iter().product();
            if numel != t.numel() {
                return Err(Error::Dimension {
                    op: "reshape",
                    lhs: t.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            Ok(Tensor {
                shape: shape.to_vec(),
                data: t.data().to_vec(),
            })
        })?;
        Ok(self.tape().push(Op::Reshape(self.id), value, None))
    }

    /// Reverse-mode sweep from a scalar loss. Gradients of every parameter
    /// leaf reachable on the tape are *added* into the store's accumulators;
    /// the caller resets them between steps.
    pub fn backward_into(&self, store: &mut ParamStore) -> Result<()> {
        let inner = self.tape.borrow();
        if !inner.track {
            return Err(Error::contract(
                "backward requires a tracking tape; this one is forward-only",
            ));
        }
        if inner.nodes[self.id].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                inner.nodes[self.id].value.shape()
            )));
        }
        let nodes = &inner.nodes;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.id + 1];
        grads[self.id] = Some(Tensor::new(
            nodes[self.id].value.shape().to_vec(),
            vec![1.0],
        )?);

        for i in (0..=self.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc_map(&mut grads, nodes, *a, g.data(), |x| x);
                    acc_map(&mut grads, nodes, *b, g.data(), |x| x);
                }
                Op::Sub(a, b) => {
                    acc_map(&mut grads, nodes, *a, g.data(), |x| x);
                    acc_map(&mut grads, nodes, *b, g.data(), |x| -x);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    acc_zip(&mut grads, nodes, *a, g.data(), vb.data(), |g, y| g * y);
                    acc_zip(&mut grads, nodes, *b, g.data(), va.data(), |g, x| g * x);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    acc_map(&mut grads, nodes, *a, g.data(), |x| x * c);
                }
                Op::Sin { input, cos } => {
                    acc_zip(&mut grads, nodes, *input, g.data(), cos.data(), |g, c| g * c);
                }
                Op::Tanh(a) => {
                    let y = &nodes[i].value;
                    acc_zip(&mut grads, nodes, *a, g.data(), y.data(), |g, y| {
                        g * (1.0 - y * y)
                    });
                }
                Op::Square(a) => {
                    let x = &nodes[*a].value;
                    acc_zip(&mut grads, nodes, *a, g.data(), x.data(), |g, x| {
                        2.0 * g * x
                    });
                }
                Op::Matmul(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    {
                        let slot = slot(&mut grads, nodes, *a);
                        matmul_nt_into(&g, vb, slot, true);
                    }
                    {
                        let slot = slot(&mut grads, nodes, *b);
                        matmul_tn_into(va, &g, slot, true);
                    }
                }
                Op::Transpose(a) => {
                    let gt = transpose_tensor(&g);
                    acc_map(&mut grads, nodes, *a, gt.data(), |x| x);
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    let slot = slot(&mut grads, nodes, *a);
                    for s in slot.data_mut() {
                        *s += gv;
                    }
                }
                Op::Mean(a) => {
                    let n = nodes[*a].value.numel() as f64;
                    let gv = g.data()[0] / n;
                    let slot = slot(&mut grads, nodes, *a);
                    for s in slot.data_mut() {
                        *s += gv;
                    }
                }
                Op::FrobNorm(a) => {
                    let norm = nodes[i].value.data()[0];
                    if norm > 0.0 {
                        let f = g.data()[0] / norm;
                        let x = &nodes[*a].value;
                        acc_zip(&mut grads, nodes, *a, x.data(), x.data(), move |x, _| {
                            f * x
                        });
                    }
                }
                Op::TileRows { input, reps } => {
                    let n = nodes[*input].value.cols();
                    let slot = slot(&mut grads, nodes, *input);
                    for r in 0..*reps {
                        for c in 0..n {
                            slot.data_mut()[c] += g.data()[r * n + c];
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let cols = nodes[i].value.cols();
                    let mut row = 0;
                    for &p in parts {
                        let pr = nodes[p].value.rows();
                        let seg = &g.data()[row * cols..(row + pr) * cols];
                        acc_map(&mut grads, nodes, p, seg, |x| x);
                        row += pr;
                    }
                }
                Op::Slice2d {
                    input,
                    row0,
                    rows,
                    col0,
                    cols,
                } => {
                    let full_cols = nodes[*input].value.cols();
                    let (row0, rows, col0, cols) = (*row0, *rows, *col0, *cols);
                    let slot = slot(&mut grads, nodes, *input);
                    for r in 0..rows {
                        let dst = (row0 + r) * full_cols + col0;
                        let src = r * cols;
                        for c in 0..cols {
                            slot.data_mut()[dst + c] += g.data()[src + c];
                        }
                    }
                }
                Op::Reshape(a) => {
                    acc_map(&mut grads, nodes, *a, g.data(), |x| x);
                }
            }
            if let Some(pid) = nodes[i].param {
                store.accumulate_grad(pid, &g)?;
            }
        }
        Ok(())
    }
}

fn transpose_tensor(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut out = Tensor::zeros(&[c, r]);
    for i in 0..r {
        for j in 0..c {
            out.data_mut()[j * r + i] = t.data()[i * c + j];
        }
    }
    out
}

fn slot<'g>(grads: &'g mut [Option<Tensor>], nodes: &[Node], id: usize) -> &'g mut Tensor {
    grads[id].get_or_insert_with(|| Tensor::zeros(nodes[id].value.shape()))
}

/// grad[id] += f(seg) elementwise.
fn acc_map(
    grads: &mut [Option<Tensor>],
    nodes: &[Node],
    id: usize,
    seg: &[f64],
    f: impl Fn(f64) -> f64,
) {
    let slot = slot(grads, nodes, id);
    for (s, &v) in slot.data_mut().iter_mut().zip(seg) {
        *s += f(v);
    }
}

/// grad[id] += f(a, b) elementwise over two equally shaped slices.
fn acc_zip(
    grads: &mut [Option<Tensor>],
    nodes: &[Node],
    id: usize,
    a: &[f64],
    b: &[f64],
    f: impl Fn(f64, f64) -> f64,
) {
    let slot = slot(grads, nodes, id);
    for ((s, &x), &y) in slot.data_mut().iter_mut().zip(a).zip(b) {
        *s += f(x, y);
    }
}

/// Vertical stack of matrices with identical column counts.
pub fn concat_rows(parts: &[Var]) -> Result<Var> {
    let first = parts
        .first()
        .ok_or_else(|| Error::contract("concat_rows needs at least one operand"))?;
    for p in &parts[1..] {
        first.same_tape(p)?;
    }
    let tape = first.tape();
    let value = {
        let inner = first.tape.borrow();
        let cols = inner.nodes[first.id].value.cols();
        let mut rows = 0;
        for p in parts {
            let v = &inner.nodes[p.id].value;
            if !v.is_matrix() || v.cols() != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: inner.nodes[first.id].value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            rows += v.rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(inner.nodes[p.id].value.data());
        }
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    };
    let ids = parts.iter().map(|p| p.id).collect();
    Ok(tape.push(Op::ConcatRows(ids), value, None))
}
