use super::shape::{broadcast_shape, numel, split_axis, transpose_index, Bcast};
use super::{gemm_acc, DiffTensor, Op};
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// GELU, tanh approximation.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

fn same_tape(op: &'static str, a: &DiffTensor<'_>, b: &DiffTensor<'_>) -> Result<()> {
    if !std::ptr::eq(a.tape, b.tape) {
        return Err(Error::shape(op, "operands live on different tapes"));
    }
    Ok(())
}

impl<'t> DiffTensor<'t> {
    fn binary(self, other: DiffTensor<'t>, op: &'static str, f: fn(f64, f64) -> f64) -> Result<Self> {
        same_tape(op, &self, &other)?;
        let (sa, sb) = (self.shape(), other.shape());
        let out_shape = broadcast_shape(&sa, &sb)
            .ok_or_else(|| Error::shape(op, format!("cannot broadcast {sa:?} with {sb:?}")))?;
        let (va, vb) = (self.values(), other.values());
        let ba = Bcast::new(&out_shape, &sa);
        let bb = Bcast::new(&out_shape, &sb);
        let value: Vec<f64> = (0..numel(&out_shape))
            .map(|i| f(va[ba.at(i)], vb[bb.at(i)]))
            .collect();
        let node = match op {
            "add" => Op::Add(self.id, other.id),
            "sub" => Op::Sub(self.id, other.id),
            "mul" => Op::Mul(self.id, other.id),
            _ => Op::Div(self.id, other.id),
        };
        Ok(self.tape.push(out_shape, value, node))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(self, other: DiffTensor<'t>) -> Result<Self> {
        self.binary(other, "add", |a, b| a + b)
    }

    pub fn sub(self, other: DiffTensor<'t>) -> Result<Self> {
        self.binary(other, "sub", |a, b| a - b)
    }

    pub fn mul(self, other: DiffTensor<'t>) -> Result<Self> {
        self.binary(other, "mul", |a, b| a * b)
    }

    pub fn div(self, other: DiffTensor<'t>) -> Result<Self> {
        self.binary(other, "div", |a, b| a / b)
    }

    fn unary(self, f: impl Fn(f64) -> f64, op: Op) -> Self {
        let value = self.values().iter().map(|&x| f(x)).collect();
        self.tape.push(self.shape(), value, op)
    }

    pub fn add_scalar(self, c: f64) -> Self {
        self.unary(|x| x + c, Op::AddScalar(self.id))
    }

    pub fn mul_scalar(self, c: f64) -> Self {
        self.unary(|x| x * c, Op::MulScalar(self.id, c))
    }

    pub fn neg(self) -> Self {
        self.mul_scalar(-1.0)
    }

    pub fn exp(self) -> Self {
        self.unary(f64::exp, Op::Exp(self.id))
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(self) -> Result<Self> {
        if let Some(bad) = self.values().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::NumericDomain {
                op: "log",
                detail: format!("argument {bad} is not positive"),
            });
        }
        Ok(self.unary(f64::ln, Op::Log(self.id)))
    }

    pub fn square(self) -> Self {
        self.unary(|x| x * x, Op::Square(self.id))
    }

    pub fn gelu(self) -> Self {
        self.unary(gelu, Op::Gelu(self.id))
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(self) -> Self {
        let s = self.values().iter().sum();
        self.tape.push(vec![], vec![s], Op::Sum(self.id))
    }

    pub fn mean(self) -> Self {
        let n = self.numel().max(1) as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<Vec<usize>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::shape(op, format!("axis {axis} out of range for {shape:?}")));
        }
        Ok(shape)
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<Self> {
        let shape = self.check_axis("sum_axis", axis)?;
        let (outer, len, inner) = split_axis(&shape, axis);
        let v = self.values();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &v[(o * len + l) * inner..(o * len + l + 1) * inner];
                out[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, s)| *d += s);
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok(self.tape.push(out_shape, out, Op::SumAxis { input: self.id, axis }))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Self> {
        let len = self.check_axis("mean_axis", axis)?[axis].max(1);
        Ok(self.sum_axis(axis)?.mul_scalar(1.0 / len as f64))
    }

    fn gather(self, out_shape: Vec<usize>, index: Vec<usize>) -> Self {
        let v = self.values();
        let value = index.iter().map(|&i| v[i]).collect();
        self.tape.push(out_shape, value, Op::Gather { input: self.id, index })
    }

    /// Maximum over `axis`; gradient routes to the first maximal index.
    pub fn max_axis(self, axis: usize) -> Result<Self> {
        let shape = self.check_axis("max_axis", axis)?;
        let (outer, len, inner) = split_axis(&shape, axis);
        if len == 0 {
            return Err(Error::shape("max_axis", "empty axis"));
        }
        let v = self.values();
        let mut index = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                for l in 1..len {
                    let cand = (o * len + l) * inner + i;
                    if v[cand] > v[best] {
                        best = cand;
                    }
                }
                index.push(best);
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok(self.gather(out_shape, index))
    }

    /// Max-pooling with window 2 and stride 2 along `axis`; an odd trailing
    /// element is dropped. Ties route to the lower index.
    pub fn max_pool2(self, axis: usize) -> Result<Self> {
        let shape = self.check_axis("max_pool2", axis)?;
        let (outer, len, inner) = split_axis(&shape, axis);
        if len < 2 {
            return Err(Error::shape("max_pool2", format!("axis length {len} < 2")));
        }
        let half = len / 2;
        let v = self.values();
        let mut index = Vec::with_capacity(outer * half * inner);
        for o in 0..outer {
            for h in 0..half {
                for i in 0..inner {
                    let first = (o * len + 2 * h) * inner + i;
                    let second = first + inner;
                    index.push(if v[second] > v[first] { second } else { first });
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = half;
        Ok(self.gather(out_shape, index))
    }

    pub fn transpose(self, ax1: usize, ax2: usize) -> Result<Self> {
        let shape = self.check_axis("transpose", ax1.max(ax2))?;
        if ax1 == ax2 {
            return Ok(self);
        }
        let (out_shape, index) = transpose_index(&shape, ax1, ax2);
        Ok(self.gather(out_shape, index))
    }

    /// Entries `start..end` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Self> {
        let shape = self.check_axis("slice", axis)?;
        let (outer, len, inner) = split_axis(&shape, axis);
        if start > end || end > len {
            return Err(Error::shape("slice", format!("range {start}..{end} outside 0..{len}")));
        }
        let mut index = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = (o * len + start) * inner;
            index.extend(base..base + (end - start) * inner);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        Ok(self.gather(out_shape, index))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?} changes element count", self.shape()),
            ));
        }
        let v = self.values().to_vec();
        Ok(self.tape.push(shape.to_vec(), v, Op::Reshape(self.id)))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[DiffTensor<'t>], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = first.check_axis("concat", axis)?;
        let mut total = 0;
        for p in parts {
            same_tape("concat", first, p)?;
            let s = p.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(k, (x, y))| k == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} incompatible with {base:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut value = Vec::with_capacity(outer * total * inner);
        let vals: Vec<_> = parts.iter().map(|p| (p.values(), p.shape()[axis])).collect();
        for o in 0..outer {
            for (v, len) in &vals {
                value.extend_from_slice(&v[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        Ok(first.tape.push(
            out_shape,
            value,
            Op::Concat {
                inputs: parts.iter().map(|p| p.id).collect(),
                axis,
            },
        ))
    }

    /// Matrix product over the trailing two axes. `other` is either batched
    /// with the same leading axes or a plain 2-D matrix shared across the batch.
    pub fn matmul(self, other: DiffTensor<'t>) -> Result<Self> {
        same_tape("matmul", &self, &other)?;
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", format!("{sa:?} @ {sb:?} needs rank >= 2")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let shared_b = sb.len() == 2;
        if k != kb || (!shared_b && sa[..sa.len() - 2] != sb[..sb.len() - 2]) {
            return Err(Error::shape("matmul", format!("{sa:?} @ {sb:?}")));
        }
        let batch = numel(&sa[..sa.len() - 2]);
        let (va, vb) = (self.values(), other.values());
        let mut out = vec![0.0; batch * m * n];
        for t in 0..batch {
            let bo = if shared_b { 0 } else { t * k * n };
            gemm_acc(
                m,
                k,
                n,
                &va[t * m * k..],
                false,
                &vb[bo..],
                false,
                &mut out[t * m * n..(t + 1) * m * n],
            );
        }
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([m, n]);
        Ok(self.tape.push(out_shape, out, Op::MatMul(self.id, other.id)))
    }

    /// Dilated causal 1-D convolution.
    ///
    /// `self` is `[B, T, C_in]`, `weight` is `[K, C_in, C_out]`; output timestamp
    /// `t` reads inputs `t - (K-1-j)*dilation` for tap `j`, zero before the start.
    pub fn conv1d_causal(self, weight: DiffTensor<'t>, dilation: usize) -> Result<Self> {
        same_tape("conv1d", &self, &weight)?;
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 3 || ws.len() != 3 || xs[2] != ws[1] || dilation == 0 {
            return Err(Error::shape(
                "conv1d",
                format!("input {xs:?}, weight {ws:?}, dilation {dilation}"),
            ));
        }
        let (bsz, t_len, c_in) = (xs[0], xs[1], xs[2]);
        let (ksz, c_out) = (ws[0], ws[2]);
        let (vx, vw) = (self.values(), weight.values());
        let mut out = vec![0.0; bsz * t_len * c_out];
        for j in 0..ksz {
            let shift = (ksz - 1 - j) * dilation;
            if shift >= t_len {
                continue;
            }
            let rows = t_len - shift;
            for b in 0..bsz {
                gemm_acc(
                    rows,
                    c_in,
                    c_out,
                    &vx[b * t_len * c_in..],
                    false,
                    &vw[j * c_in * c_out..],
                    false,
                    &mut out[(b * t_len + shift) * c_out..(b + 1) * t_len * c_out],
                );
            }
        }
        Ok(self.tape.push(
            vec![bsz, t_len, c_out],
            out,
            Op::Conv1d {
                x: self.id,
                w: weight.id,
                dilation,
            },
        ))
    }

    /// Euclidean distance matrix between the rows of a `[N, P]` tensor.
    /// Coincident rows receive a zero subgradient.
    pub fn pairwise_distances(self) -> Result<Self> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::shape("pairwise_distances", format!("expected [N, P], got {s:?}")));
        }
        let (n, p) = (s[0], s[1]);
        let v = self.values();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (0..p)
                    .map(|q| (v[i * p + q] - v[j * p + q]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                out[i * n + j] = d;
                out[j * n + i] = d;
            }
        }
        Ok(self.tape.push(vec![n, n], out, Op::PairwiseDist(self.id)))
    }

    /// Carré-du-champ metric per node of a `[B, T, P]` tensor under fixed
    /// linear operators `lap` (`B` row-major `T × T` blocks):
    /// `H[b, n] = ½ (L(z_a z_c) − z_a L z_c − z_c L z_a)_n`, shape `[B, T, P, P]`.
    pub fn laplacian_metric(self, lap: &[f64]) -> Result<Self> {
        let s = self.shape();
        if s.len() != 3 || lap.len() != s[0] * s[1] * s[1] {
            return Err(Error::shape(
                "laplacian_metric",
                format!("input {s:?} with {} operator entries", lap.len()),
            ));
        }
        let (b, t, p) = (s[0], s[1], s[2]);
        let v = self.values();
        let mut out = vec![0.0; b * t * p * p];
        let mut d = vec![0.0; p];
        for bi in 0..b {
            let z = &v[bi * t * p..(bi + 1) * t * p];
            let l = &lap[bi * t * t..(bi + 1) * t * t];
            for n in 0..t {
                let h = &mut out[(bi * t + n) * p * p..(bi * t + n + 1) * p * p];
                let zn = &z[n * p..(n + 1) * p];
                // With row sum r: H = ½ Σ_m L_nm (z_m − z_n)(z_m − z_n)ᵀ − ½ r z_n z_nᵀ.
                let mut r = 0.0;
                for m in 0..t {
                    let w = l[n * t + m];
                    r += w;
                    if w == 0.0 || m == n {
                        continue;
                    }
                    for q in 0..p {
                        d[q] = z[m * p + q] - zn[q];
                    }
                    for a in 0..p {
                        let da = 0.5 * w * d[a];
                        for c in a..p {
                            h[a * p + c] += da * d[c];
                        }
                    }
                }
                for a in 0..p {
                    for c in a..p {
                        h[a * p + c] -= 0.5 * r * zn[a] * zn[c];
                        h[c * p + a] = h[a * p + c];
                    }
                }
            }
        }
        let op = Op::LapMetric {
            input: self.id,
            lap: lap.into(),
        };
        Ok(self.tape.push(vec![b, t, p, p], out, op))
    }

    /// Picks flat (row-major) entries by index into a 1-D tensor.
    pub fn select(self, index: &[usize]) -> Result<Self> {
        let n = self.numel();
        if let Some(bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::shape("select", format!("index {bad} outside 0..{n}")));
        }
        Ok(self.gather(vec![index.len()], index.to_vec()))
    }

    /// Zeroes entries where `mask` is false. `mask_shape` broadcasts against `self`.
    pub fn masked(self, mask: &[bool], mask_shape: &[usize]) -> Result<Self> {
        let m = self
            .tape
            .constant(mask_shape, mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())?;
        self.mul(m)
    }
}
