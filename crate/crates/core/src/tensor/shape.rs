//! Shape arithmetic: broadcasting, strides and gather-index construction.

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes (trailing alignment, size-1 expansion).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// How the elements of an input map onto a (possibly larger) broadcast output.
pub(crate) enum Bcast {
    /// Same shape as the output.
    Same,
    /// The input is a trailing block repeated over leading axes: offset = i % len.
    Suffix(usize),
    /// General case: explicit input offset per output element.
    Index(Vec<usize>),
}

impl Bcast {
    pub(crate) fn new(out: &[usize], input: &[usize]) -> Self {
        if out == input {
            return Bcast::Same;
        }
        let n_in = numel(input);
        // Suffix case: input shape (after stripping leading ones) equals a
        // trailing slice of the output shape.
        let stripped: Vec<usize> = {
            let first = input.iter().position(|&d| d != 1).unwrap_or(input.len());
            input[first..].to_vec()
        };
        if stripped.len() <= out.len() && out[out.len() - stripped.len()..] == stripped[..] {
            return Bcast::Suffix(n_in.max(1));
        }
        let offset = out.len() - input.len();
        let in_strides = strides(input);
        let mut idx = Vec::with_capacity(numel(out));
        let mut counter = vec![0usize; out.len()];
        for _ in 0..numel(out) {
            let mut off = 0;
            for (k, &d) in input.iter().enumerate() {
                if d != 1 {
                    off += counter[k + offset] * in_strides[k];
                }
            }
            idx.push(off);
            for ax in (0..out.len()).rev() {
                counter[ax] += 1;
                if counter[ax] < out[ax] {
                    break;
                }
                counter[ax] = 0;
            }
        }
        Bcast::Index(idx)
    }

    #[inline]
    pub(crate) fn at(&self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Suffix(len) => i % len,
            Bcast::Index(idx) => idx[i],
        }
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

/// Gather index for swapping two axes.
pub(crate) fn transpose_index(shape: &[usize], ax1: usize, ax2: usize) -> (Vec<usize>, Vec<usize>) {
    let mut out_shape = shape.to_vec();
    out_shape.swap(ax1, ax2);
    let in_strides = strides(shape);
    let mut perm_strides = in_strides.clone();
    perm_strides.swap(ax1, ax2);
    let n = numel(shape);
    let mut idx = Vec::with_capacity(n);
    let mut counter = vec![0usize; out_shape.len()];
    for _ in 0..n {
        idx.push(counter.iter().zip(&perm_strides).map(|(c, s)| c * s).sum());
        for ax in (0..out_shape.len()).rev() {
            counter[ax] += 1;
            if counter[ax] < out_shape[ax] {
                break;
            }
            counter[ax] = 0;
        }
    }
    (out_shape, idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
        assert_eq!(broadcast_shape(&[], &[5]), Some(vec![5]));
    }

    #[test]
    fn general_index_matches_manual() {
        let b = Bcast::new(&[2, 3], &[2, 1]);
        let got: Vec<usize> = (0..6).map(|i| b.at(i)).collect();
        assert_eq!(got, vec![0, 0, 0, 1, 1, 1]);
        let s = Bcast::new(&[2, 3], &[1, 3]);
        assert!(matches!(s, Bcast::Suffix(3)));
    }

    #[test]
    fn transpose_2d() {
        let (shape, idx) = transpose_index(&[2, 3], 0, 1);
        assert_eq!(shape, vec![3, 2]);
        assert_eq!(idx, vec![0, 3, 1, 4, 2, 5]);
    }
}
