//! Plain Euclidean distance helpers on row-major point sets.

/// `n × n` Euclidean distance matrix between the `n` rows of length `dim`.
pub fn euclidean_matrix(points: &[f64], n: usize, dim: usize) -> Vec<f64> {
    debug_assert_eq!(points.len(), n * dim);
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let a = &points[i * dim..(i + 1) * dim];
        for j in (i + 1)..n {
            let b = &points[j * dim..(j + 1) * dim];
            let d = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    out
}

/// Checks symmetry, zero diagonal and non-negativity; returns a description of
/// the first violation.
pub fn check_distance_matrix(a: &[f64], n: usize) -> Option<String> {
    if a.len() != n * n {
        return Some(format!("expected {n}x{n} entries, got {}", a.len()));
    }
    for i in 0..n {
        if a[i * n + i] != 0.0 {
            return Some(format!("diagonal entry {i} is {}", a[i * n + i]));
        }
        for j in 0..n {
            let v = a[i * n + j];
            if v.is_nan() || v < 0.0 {
                return Some(format!("entry ({i},{j}) = {v} is negative"));
            }
            if v != a[j * n + i] {
                return Some(format!("entries ({i},{j}) and ({j},{i}) differ"));
            }
        }
    }
    None
}
