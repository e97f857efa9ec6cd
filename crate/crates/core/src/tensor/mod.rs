//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] owns every node created during one forward pass. Handles into it
//! are [`DiffTensor`]s, which are cheap `Copy` values borrowing the tape.
//! Nodes are appended in evaluation order, so the reverse pass simply walks
//! node ids downwards from the root.
//!
//! ```
//! use spclt_core::tensor::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.leaf(&[1], vec![3.0]).unwrap();
//! let y = x.mul(x).unwrap();
//! y.backward().unwrap();
//! assert_eq!(x.grad().unwrap(), vec![6.0]);
//! ```

mod gemm;
mod gradcheck;
mod ops;
pub(crate) mod shape;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

pub use gradcheck::finite_diff_check;
pub(crate) use gemm::gemm_acc;

use crate::error::{Error, Result};
use shape::{numel, split_axis, Bcast};

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    Exp(usize),
    Log(usize),
    Square(usize),
    Gelu(usize),
    Sum(usize),
    SumAxis { input: usize, axis: usize },
    /// `out[i] = input[index[i]]`; covers slicing, transposes and max-pooling.
    Gather { input: usize, index: Vec<usize> },
    Reshape(usize),
    Concat { inputs: Vec<usize>, axis: usize },
    MatMul(usize, usize),
    Conv1d { x: usize, w: usize, dilation: usize },
    PairwiseDist(usize),
    /// Per-node metric `[B, T, P, P]` of `input` under fixed `B × T × T` operators.
    LapMetric { input: usize, lap: Rc<[f64]> },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => vec![*a, *b],
            AddScalar(a) | MulScalar(a, _) | Exp(a) | Log(a) | Square(a) | Gelu(a) | Sum(a)
            | Reshape(a) | PairwiseDist(a) => vec![*a],
            SumAxis { input, .. } | Gather { input, .. } | LapMetric { input, .. } => vec![*input],
            Concat { inputs, .. } => inputs.clone(),
            Conv1d { x, w, .. } => vec![*x, *w],
        }
    }
}

struct Node {
    shape: Vec<usize>,
    value: Rc<[f64]>,
    op: Op,
    requires_grad: bool,
}

/// Computation graph for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    // Gradient slots for leaves, allocated on first accumulation.
    grads: RefCell<Vec<Option<Vec<f64>>>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct DiffTensor<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for DiffTensor<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffTensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> DiffTensor<'_> {
        debug_assert_eq!(numel(&shape), value.len());
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        self.push_node(shape, value, op, requires_grad)
    }

    fn push_node(
        &self,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        requires_grad: bool,
    ) -> DiffTensor<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value: value.into(),
            op,
            requires_grad,
        });
        self.grads.borrow_mut().push(None);
        DiffTensor {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn check_len(shape: &[usize], values: &[f64]) -> Result<()> {
        if numel(shape) != values.len() {
            return Err(Error::shape(
                "leaf",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), values.len()),
            ));
        }
        Ok(())
    }

    /// A differentiable input whose gradient is accumulated by `backward`.
    pub fn leaf(&self, shape: &[usize], values: Vec<f64>) -> Result<DiffTensor<'_>> {
        Self::check_len(shape, &values)?;
        Ok(self.push_node(shape.to_vec(), values, Op::Leaf, true))
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&self, shape: &[usize], values: Vec<f64>) -> Result<DiffTensor<'_>> {
        Self::check_len(shape, &values)?;
        Ok(self.push_node(shape.to_vec(), values, Op::Leaf, false))
    }

    pub fn scalar(&self, v: f64) -> DiffTensor<'_> {
        self.push_node(vec![], vec![v], Op::Leaf, false)
    }

    /// Clears every accumulated leaf gradient.
    pub fn zero_grad(&self) {
        for g in self.grads.borrow_mut().iter_mut() {
            *g = None;
        }
    }

    fn value(&self, id: usize) -> Rc<[f64]> {
        self.nodes.borrow()[id].value.clone()
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }

    fn backward_from(&self, root: usize) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[root].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                nodes[root].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0]);
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let mut slots = self.grads.borrow_mut();
                match &mut slots[id] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            propagate(&nodes, id, &g, &mut grads);
        }
        Ok(())
    }
}

/// Adds `g` (indexed through `map`) into the gradient buffer of `input`.
fn accumulate<F>(nodes: &[Node], grads: &mut [Option<Vec<f64>>], input: usize, f: F)
where
    F: FnOnce(&mut [f64]),
{
    if !nodes[input].requires_grad {
        return;
    }
    let len = nodes[input].value.len();
    let buf = grads[input].get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

fn propagate(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let out_shape = &node.shape;
    let out = &node.value;
    match &node.op {
        Op::Leaf => unreachable!(),
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            let (a, b) = (*a, *b);
            let ba = Bcast::new(out_shape, &nodes[a].shape);
            accumulate(nodes, grads, a, |buf| {
                g.iter().enumerate().for_each(|(i, gi)| buf[ba.at(i)] += gi)
            });
            let bb = Bcast::new(out_shape, &nodes[b].shape);
            accumulate(nodes, grads, b, |buf| {
                g.iter().enumerate().for_each(|(i, gi)| buf[bb.at(i)] += sign * gi)
            });
        }
        Op::Mul(a, b) => {
            let (a, b) = (*a, *b);
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            let ba = Bcast::new(out_shape, &nodes[a].shape);
            let bb = Bcast::new(out_shape, &nodes[b].shape);
            accumulate(nodes, grads, a, |buf| {
                g.iter()
                    .enumerate()
                    .for_each(|(i, gi)| buf[ba.at(i)] += gi * vb[bb.at(i)])
            });
            accumulate(nodes, grads, b, |buf| {
                g.iter()
                    .enumerate()
                    .for_each(|(i, gi)| buf[bb.at(i)] += gi * va[ba.at(i)])
            });
        }
        Op::Div(a, b) => {
            let (a, b) = (*a, *b);
            let vb = &nodes[b].value;
            let ba = Bcast::new(out_shape, &nodes[a].shape);
            let bb = Bcast::new(out_shape, &nodes[b].shape);
            accumulate(nodes, grads, a, |buf| {
                g.iter()
                    .enumerate()
                    .for_each(|(i, gi)| buf[ba.at(i)] += gi / vb[bb.at(i)])
            });
            // d(a/b)/db = -(a/b)/b
            accumulate(nodes, grads, b, |buf| {
                g.iter()
                    .enumerate()
                    .for_each(|(i, gi)| buf[bb.at(i)] -= gi * out[i] / vb[bb.at(i)])
            });
        }
        Op::AddScalar(a) => accumulate(nodes, grads, *a, |buf| {
            buf.iter_mut().zip(g).for_each(|(b, gi)| *b += gi)
        }),
        Op::MulScalar(a, c) => accumulate(nodes, grads, *a, |buf| {
            buf.iter_mut().zip(g).for_each(|(b, gi)| *b += c * gi)
        }),
        Op::Exp(a) => accumulate(nodes, grads, *a, |buf| {
            buf.iter_mut()
                .zip(g.iter().zip(out.iter()))
                .for_each(|(b, (gi, o))| *b += gi * o)
        }),
        Op::Log(a) => {
            let va = &nodes[*a].value;
            accumulate(nodes, grads, *a, |buf| {
                buf.iter_mut()
                    .zip(g.iter().zip(va.iter()))
                    .for_each(|(b, (gi, x))| *b += gi / x)
            })
        }
        Op::Square(a) => {
            let va = &nodes[*a].value;
            accumulate(nodes, grads, *a, |buf| {
                buf.iter_mut()
                    .zip(g.iter().zip(va.iter()))
                    .for_each(|(b, (gi, x))| *b += 2.0 * gi * x)
            })
        }
        Op::Gelu(a) => {
            let va = &nodes[*a].value;
            accumulate(nodes, grads, *a, |buf| {
                buf.iter_mut()
                    .zip(g.iter().zip(va.iter()))
                    .for_each(|(b, (gi, x))| *b += gi * ops::gelu_grad(*x))
            })
        }
        Op::Sum(a) => accumulate(nodes, grads, *a, |buf| buf.iter_mut().for_each(|b| *b += g[0])),
        Op::SumAxis { input, axis } => {
            let (outer, len, inner) = split_axis(&nodes[*input].shape, *axis);
            accumulate(nodes, grads, *input, |buf| {
                for o in 0..outer {
                    for l in 0..len {
                        let dst = &mut buf[(o * len + l) * inner..(o * len + l + 1) * inner];
                        let src = &g[o * inner..(o + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
            })
        }
        Op::Gather { input, index } => accumulate(nodes, grads, *input, |buf| {
            index.iter().zip(g).for_each(|(&i, gi)| buf[i] += gi)
        }),
        Op::Reshape(a) => accumulate(nodes, grads, *a, |buf| {
            buf.iter_mut().zip(g).for_each(|(b, gi)| *b += gi)
        }),
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = split_axis(out_shape, *axis);
            let mut start = 0;
            for &inp in inputs {
                let len = nodes[inp].shape[*axis];
                accumulate(nodes, grads, inp, |buf| {
                    for o in 0..outer {
                        let src = &g[(o * total + start) * inner..(o * total + start + len) * inner];
                        let dst = &mut buf[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                });
                start += len;
            }
        }
        Op::MatMul(a, b) => {
            let (a, b) = (*a, *b);
            let sa = &nodes[a].shape;
            let sb = &nodes[b].shape;
            let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
            let n = sb[sb.len() - 1];
            let batch = numel(&sa[..sa.len() - 2]);
            let shared_b = sb.len() == 2;
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            accumulate(nodes, grads, a, |buf| {
                for t in 0..batch {
                    let bo = if shared_b { 0 } else { t * k * n };
                    gemm_acc(
                        m,
                        n,
                        k,
                        &g[t * m * n..],
                        false,
                        &vb[bo..],
                        true,
                        &mut buf[t * m * k..(t + 1) * m * k],
                    );
                }
            });
            accumulate(nodes, grads, b, |buf| {
                for t in 0..batch {
                    let bo = if shared_b { 0 } else { t * k * n };
                    gemm_acc(
                        k,
                        m,
                        n,
                        &va[t * m * k..],
                        true,
                        &g[t * m * n..],
                        false,
                        &mut buf[bo..bo + k * n],
                    );
                }
            });
        }
        Op::Conv1d { x, w, dilation } => {
            let (x, w, dil) = (*x, *w, *dilation);
            let xs = &nodes[x].shape;
            let ws = &nodes[w].shape;
            let (bsz, t_len, c_in) = (xs[0], xs[1], xs[2]);
            let (ksz, c_out) = (ws[0], ws[2]);
            let (vx, vw) = (&nodes[x].value, &nodes[w].value);
            accumulate(nodes, grads, x, |buf| {
                for j in 0..ksz {
                    let shift = (ksz - 1 - j) * dil;
                    if shift >= t_len {
                        continue;
                    }
                    let rows = t_len - shift;
                    for b in 0..bsz {
                        gemm_acc(
                            rows,
                            c_out,
                            c_in,
                            &g[(b * t_len + shift) * c_out..],
                            false,
                            &vw[j * c_in * c_out..],
                            true,
                            &mut buf[b * t_len * c_in..(b * t_len + rows) * c_in],
                        );
                    }
                }
            });
            accumulate(nodes, grads, w, |buf| {
                for j in 0..ksz {
                    let shift = (ksz - 1 - j) * dil;
                    if shift >= t_len {
                        continue;
                    }
                    let rows = t_len - shift;
                    for b in 0..bsz {
                        gemm_acc(
                            c_in,
                            rows,
                            c_out,
                            &vx[b * t_len * c_in..],
                            true,
                            &g[(b * t_len + shift) * c_out..],
                            false,
                            &mut buf[j * c_in * c_out..(j + 1) * c_in * c_out],
                        );
                    }
                }
            });
        }
        Op::LapMetric { input, lap } => {
            let si = &nodes[*input].shape;
            let (b, t, p) = (si[0], si[1], si[2]);
            let z = &nodes[*input].value;
            accumulate(nodes, grads, *input, |buf| {
                let mut gs = vec![0.0; p * p];
                let mut u = vec![0.0; p];
                let mut d = vec![0.0; p];
                for bi in 0..b {
                    let zb = &z[bi * t * p..(bi + 1) * t * p];
                    let lb = &lap[bi * t * t..(bi + 1) * t * t];
                    let gb = &mut buf[bi * t * p..(bi + 1) * t * p];
                    for n in 0..t {
                        let gn = &g[(bi * t + n) * p * p..(bi * t + n + 1) * p * p];
                        for a in 0..p {
                            for c in 0..p {
                                gs[a * p + c] = 0.5 * (gn[a * p + c] + gn[c * p + a]);
                            }
                        }
                        let mut r = 0.0;
                        for m in 0..t {
                            let w = lb[n * t + m];
                            r += w;
                            if w == 0.0 || m == n {
                                continue;
                            }
                            for q in 0..p {
                                d[q] = zb[m * p + q] - zb[n * p + q];
                            }
                            for a in 0..p {
                                u[a] = w * gs[a * p..(a + 1) * p].iter().zip(&d).map(|(x, y)| x * y).sum::<f64>();
                            }
                            for q in 0..p {
                                gb[m * p + q] += u[q];
                                gb[n * p + q] -= u[q];
                            }
                        }
                        // Correction for operators whose rows do not sum to zero.
                        for a in 0..p {
                            let s: f64 = (0..p).map(|c| gs[a * p + c] * zb[n * p + c]).sum();
                            gb[n * p + a] -= r * s;
                        }
                    }
                }
            });
        }
        Op::PairwiseDist(a) => {
            let sa = &nodes[*a].shape;
            let (n, p) = (sa[0], sa[1]);
            let va = &nodes[*a].value;
            accumulate(nodes, grads, *a, |buf| {
                for i in 0..n {
                    for j in 0..n {
                        let d = out[i * n + j];
                        // Coincident points: zero subgradient.
                        if i == j || d == 0.0 {
                            continue;
                        }
                        let s = g[i * n + j] / d;
                        for q in 0..p {
                            let diff = va[i * p + q] - va[j * p + q];
                            buf[i * p + q] += s * diff;
                            buf[j * p + q] -= s * diff;
                        }
                    }
                }
            });
        }
    }
}

impl<'t> DiffTensor<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn values(&self) -> Rc<[f64]> {
        self.tape.value(self.id)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values().to_vec()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.values()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Accumulated gradient of a leaf, if any has been computed.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.grads.borrow()[self.id].clone()
    }

    /// Reverse pass from this scalar, accumulating into every reachable leaf.
    pub fn backward(&self) -> Result<()> {
        self.tape.backward_from(self.id)
    }
}

#[cfg(test)]
mod tests;
