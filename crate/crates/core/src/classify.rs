//! k-nearest-neighbour classification of instance representations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub k: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub per_class: Vec<ClassReport>,
    pub predictions: Vec<usize>,
}

/// Majority vote among the `k` nearest training rows (Euclidean, ties in
/// distance broken by index). Vote ties go to the class whose voters have the
/// smallest summed distance, then to the smaller class id.
pub fn knn_predict(train: &[f64], train_labels: &[usize], test: &[f64], p: usize, k: usize) -> Result<Vec<usize>> {
    let m = train_labels.len();
    if m == 0 {
        return Err(Error::config("k-NN needs a non-empty training set"));
    }
    if p == 0 || train.len() != m * p || !test.len().is_multiple_of(p) {
        return Err(Error::shape(
            "knn_predict",
            format!("{} train values for {m} labels, {} test values, P={p}", train.len(), test.len()),
        ));
    }
    if k == 0 || k > m {
        return Err(Error::config(format!("k-NN needs 1 <= k <= {m}, got {k}")));
    }
    let classes = train_labels.iter().max().map_or(0, |c| c + 1);
    Ok(test
        .par_chunks(p)
        .map(|q| {
            let mut dist: Vec<(f64, usize)> = train
                .chunks(p)
                .enumerate()
                .map(|(j, r)| (r.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), j))
                .collect();
            dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes = vec![(0usize, 0.0f64); classes];
            for &(d, j) in &dist[..k] {
                let v = &mut votes[train_labels[j]];
                v.0 += 1;
                v.1 += d;
            }
            (0..classes)
                .max_by(|&a, &b| {
                    votes[a]
                        .0
                        .cmp(&votes[b].0)
                        .then(votes[b].1.total_cmp(&votes[a].1))
                        .then(b.cmp(&a))
                })
                .expect("at least one class")
        })
        .collect())
}

/// Accuracy plus macro precision and recall over the classes present in
/// `truth` or `pred`. A class never predicted has precision 0.
pub fn score(truth: &[usize], pred: &[usize], k: usize, n_train: usize) -> Result<ClassificationReport> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::shape(
            "score",
            format!("{} labels vs {} predictions", truth.len(), pred.len()),
        ));
    }
    let classes = truth.iter().chain(pred).max().map_or(0, |c| c + 1);
    let mut per_class = Vec::new();
    for c in 0..classes {
        let support = truth.iter().filter(|&&t| t == c).count();
        let predicted = pred.iter().filter(|&&p| p == c).count();
        if support == 0 && predicted == 0 {
            continue;
        }
        let hits = truth.iter().zip(pred).filter(|(&t, &p)| t == c && p == c).count() as f64;
        per_class.push(ClassReport {
            class: c,
            support,
            precision: if predicted == 0 { 0.0 } else { hits / predicted as f64 },
            recall: if support == 0 { 0.0 } else { hits / support as f64 },
        });
    }
    let nc = per_class.len() as f64;
    Ok(ClassificationReport {
        k,
        n_train,
        n_test: truth.len(),
        accuracy: truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64 / truth.len() as f64,
        macro_precision: per_class.iter().map(|c| c.precision).sum::<f64>() / nc,
        macro_recall: per_class.iter().map(|c| c.recall).sum::<f64>() / nc,
        per_class,
        predictions: pred.to_vec(),
    })
}

pub fn knn_classify(
    train: &[f64],
    train_labels: &[usize],
    test: &[f64],
    test_labels: &[usize],
    p: usize,
    k: usize,
) -> Result<ClassificationReport> {
    let distinct = {
        let mut l = train_labels.to_vec();
        l.sort_unstable();
        l.dedup();
        l.len()
    };
    if distinct < 2 && !train_labels.is_empty() {
        return Err(Error::config("k-NN classification needs at least two training classes"));
    }
    let pred = knn_predict(train, train_labels, test, p, k)?;
    score(test_labels, &pred, k, train_labels.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n_per: usize, seed: u64, offset: f64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for c in 0..2 {
            for _ in 0..n_per {
                x.push(g.sample(&mut rng) + c as f64 * offset);
                x.push(g.sample(&mut rng));
                y.push(c);
            }
        }
        (x, y)
    }

    #[test]
    fn k1_recovers_training_labels() {
        let (x, y) = blobs(10, 0, 1.0);
        assert_eq!(knn_predict(&x, &y, &x, 2, 1).unwrap(), y);
    }

    #[test]
    fn separated_blobs_are_perfect() {
        // Unit-variance blobs 40 apart: every test point is nearer its own centre's cloud.
        let (x, y) = blobs(20, 1, 40.0);
        let (q, qy) = blobs(15, 2, 40.0);
        let r = knn_classify(&x, &y, &q, &qy, 2, 5).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!((r.macro_precision, r.macro_recall), (1.0, 1.0));
    }

    #[test]
    fn k_equal_m_is_majority_vote() {
        let train = vec![0.0, 1.0, 2.0, 10.0, 11.0];
        let labels = vec![0, 0, 0, 1, 1];
        let test = vec![10.5, 0.0, 11.0];
        let r = knn_classify(&train, &labels, &test, &[1, 0, 1], 1, 5).unwrap();
        assert_eq!(r.predictions, vec![0, 0, 0]);
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1].precision, 0.0);
    }

    #[test]
    fn vote_ties_use_summed_distance() {
        // k = 2: one voter per class; class 1 is closer.
        let train = vec![0.0, 3.0];
        assert_eq!(knn_predict(&train, &[0, 1], &[2.0], 1, 2).unwrap(), vec![1]);
        assert_eq!(knn_predict(&train, &[0, 1], &[1.0], 1, 2).unwrap(), vec![0]);
        // Exact tie everywhere: smaller class id.
        assert_eq!(knn_predict(&train, &[1, 0], &[1.5], 1, 2).unwrap(), vec![0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(knn_predict(&[], &[], &[1.0], 1, 1), Err(Error::Config(_))));
        assert!(matches!(knn_predict(&[1.0], &[0], &[1.0], 1, 2), Err(Error::Config(_))));
        assert!(knn_classify(&[1.0, 2.0], &[0, 0], &[1.0], &[0], 1, 1).is_err());
        assert!(knn_predict(&[1.0, 2.0], &[0], &[1.0], 1, 1).is_err());
    }

    proptest! {
        #[test]
        fn rotation_invariant(seed in 0u64..1000, angle in 0.0f64..std::f64::consts::TAU, k in 1usize..6) {
            let (x, y) = blobs(8, seed, 2.0);
            let (q, qy) = blobs(6, seed + 1, 2.0);
            let rot = |v: &[f64]| -> Vec<f64> {
                v.chunks(2)
                    .flat_map(|p| {
                        let (c, s) = (angle.cos(), angle.sin());
                        [c * p[0] - s * p[1], s * p[0] + c * p[1]]
                    })
                    .collect()
            };
            let a = knn_classify(&x, &y, &q, &qy, 2, k).unwrap();
            let b = knn_classify(&rot(&x), &y, &rot(&q), &qy, 2, k).unwrap();
            prop_assert_eq!(a.accuracy, b.accuracy);
        }
    }
}
