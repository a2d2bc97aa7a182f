//! Hard (plurality vote) and soft (probability averaging) snapshot ensembles.

use crate::error::{arg_err, dim_err, Result};
use crate::tensor::{Scalar, Tensor};
use crate::train::argmax;

const SUM_TOLERANCE: f64 = 1e-6;

/// Softmax outputs of `M` snapshots for `N` samples over `C` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    /// `probs[i]` is the row-major `N×C` matrix of snapshot `i`, in cycle order.
    probs: Vec<Vec<f64>>,
    samples: usize,
    classes: usize,
    m: usize,
}

impl PredictionSet {
    /// Builds a set from per-snapshot `N×C` matrices. `m` defaults to all snapshots.
    pub fn new(per_snapshot: Vec<Vec<f64>>, samples: usize, classes: usize) -> Result<Self> {
        if per_snapshot.is_empty() || samples == 0 || classes == 0 {
            return Err(arg_err!("prediction set needs at least one snapshot, sample and class"));
        }
        for (s, p) in per_snapshot.iter().enumerate() {
            if p.len() != samples * classes {
                return Err(dim_err!(
                    "snapshot {s} has {} values, expected {samples}x{classes}",
                    p.len()
                ));
            }
            for (n, row) in p.chunks(classes).enumerate() {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > SUM_TOLERANCE || row.iter().any(|&v| !(v >= 0.0)) {
                    return Err(arg_err!(
                        "snapshot {s}, sample {n}: not a probability vector (sum {sum})"
                    ));
                }
            }
        }
        let m = per_snapshot.len();
        Ok(PredictionSet {
            probs: per_snapshot,
            samples,
            classes,
            m,
        })
    }

    /// Builds a set from per-snapshot `N×C` probability tensors.
    pub fn from_tensors<T: Scalar>(per_snapshot: &[Tensor<T>]) -> Result<Self> {
        let first = per_snapshot
            .first()
            .ok_or_else(|| arg_err!("no snapshot predictions"))?;
        let (n, cls) = first.dims2()?;
        let probs = per_snapshot
            .iter()
            .map(|t| t.data().iter().map(|v| v.to_f64().unwrap()).collect())
            .collect();
        Self::new(probs, n, cls)
    }

    /// Uses only the last `m` snapshots.
    pub fn with_m(mut self, m: usize) -> Result<Self> {
        if m == 0 || m > self.probs.len() {
            return Err(arg_err!("m = {m} outside 1..={}", self.probs.len()));
        }
        self.m = m;
        Ok(self)
    }

    pub fn snapshots(&self) -> usize {
        self.probs.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Probability vector of snapshot `s` for sample `n`.
    pub fn vector(&self, s: usize, n: usize) -> &[f64] {
        &self.probs[s][n * self.classes..(n + 1) * self.classes]
    }

    fn used(&self) -> std::ops::Range<usize> {
        self.probs.len() - self.m..self.probs.len()
    }

    fn mean(&self, n: usize) -> Vec<f64> {
        let mut mean = vec![0.0; self.classes];
        for s in self.used() {
            for (acc, &v) in mean.iter_mut().zip(self.vector(s, n)) {
                *acc += v;
            }
        }
        let m = self.m as f64;
        mean.iter_mut().for_each(|v| *v /= m);
        mean
    }

    /// Single-snapshot predictions of snapshot `s`.
    pub fn snapshot_predictions(&self, s: usize) -> Vec<usize> {
        (0..self.samples).map(|n| argmax(self.vector(s, n))).collect()
    }
}

/// Plurality vote of the last `m` snapshots' argmax predictions. Ties go to
/// the tied class with the highest mean probability, then the lowest index.
pub fn hard_ensemble(pset: &PredictionSet) -> Vec<usize> {
    (0..pset.samples)
        .map(|n| {
            let mut votes = vec![0usize; pset.classes];
            for s in pset.used() {
                votes[argmax(pset.vector(s, n))] += 1;
            }
            let top = *votes.iter().max().unwrap();
            let tied: Vec<usize> = (0..pset.classes).filter(|&k| votes[k] == top).collect();
            if tied.len() == 1 {
                return tied[0];
            }
            let mean = pset.mean(n);
            let mut best = tied[0];
            for &k in &tied[1..] {
                if mean[k] > mean[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Argmax of the mean of the last `m` probability vectors, with that mean.
pub fn soft_ensemble(pset: &PredictionSet) -> Vec<(usize, Vec<f64>)> {
    (0..pset.samples)
        .map(|n| {
            let mean = pset.mean(n);
            (argmax(&mean), mean)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_sample(vectors: &[[f64; 3]]) -> PredictionSet {
        PredictionSet::new(vectors.iter().map(|v| v.to_vec()).collect(), 1, 3).unwrap()
    }

    fn onehot(k: usize) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[k] = 1.0;
        v
    }

    #[test]
    fn clear_majority() {
        let p = one_sample(&[onehot(0), onehot(0), onehot(1), onehot(2), onehot(0)]);
        assert_eq!(hard_ensemble(&p), vec![0]);
    }

    #[test]
    fn m_one_is_last_snapshot() {
        let p = one_sample(&[onehot(0), onehot(0), onehot(2)]).with_m(1).unwrap();
        assert_eq!(hard_ensemble(&p), vec![2]);
        assert_eq!(soft_ensemble(&p)[0].0, 2);
    }

    #[test]
    fn tie_falls_back_to_mean_probability() {
        // Votes 0,0,1,1,2; mean p0 = 0.42, p1 = 0.40.
        let p = one_sample(&[
            [0.6, 0.3, 0.1],
            [0.5, 0.4, 0.1],
            [0.3, 0.6, 0.1],
            [0.3, 0.5, 0.2],
            [0.4, 0.2, 0.4 + 1e-9],
        ]);
        let mean = &soft_ensemble(&p)[0].1;
        assert!((mean[0] - 0.42).abs() < 1e-6 && (mean[1] - 0.40).abs() < 1e-6);
        assert_eq!(hard_ensemble(&p), vec![0]);
    }

    #[test]
    fn exact_tie_goes_to_lowest_index() {
        let p = one_sample(&[[0.5, 0.5, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(hard_ensemble(&p), vec![0]);
    }

    #[test]
    fn soft_mean_example() {
        let p = one_sample(&[[0.7, 0.2, 0.1], [0.5, 0.3, 0.2]]);
        let (k, mean) = &soft_ensemble(&p)[0];
        assert_eq!(*k, 0);
        for (a, b) in mean.iter().zip([0.6, 0.25, 0.15]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_vectors_are_idempotent() {
        let v = [0.2, 0.5, 0.3];
        let p = one_sample(&[v, v, v]);
        for (a, b) in soft_ensemble(&p)[0].1.iter().zip(v) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_sets_are_rejected() {
        assert!(PredictionSet::new(vec![], 1, 3).is_err());
        assert!(PredictionSet::new(vec![vec![0.5, 0.6, 0.0]], 1, 3).is_err());
        assert!(one_sample(&[onehot(0)]).with_m(0).is_err());
        assert!(one_sample(&[onehot(0)]).with_m(2).is_err());
    }

    fn random_vector(rng: &mut ChaCha8Rng) -> Vec<f64> {
        // Coarse values make ties frequent.
        let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0..4) as f64 + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    }

    /// Independent reference: explicit vote counting and sorting.
    fn brute_force(vectors: &[Vec<f64>], m: usize) -> (usize, usize) {
        let used = &vectors[vectors.len() - m..];
        let mean: Vec<f64> = (0..3)
            .map(|k| used.iter().map(|v| v[k]).sum::<f64>() / m as f64)
            .collect();
        let first_max = |v: &[f64]| {
            let mx = v.iter().cloned().fold(f64::MIN, f64::max);
            v.iter().position(|&x| x == mx).unwrap()
        };
        let soft = first_max(&mean);
        let mut votes = [0usize; 3];
        for v in used {
            votes[first_max(v)] += 1;
        }
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            votes[b]
                .cmp(&votes[a])
                .then(mean[b].partial_cmp(&mean[a]).unwrap())
                .then(a.cmp(&b))
        });
        (order[0], soft)
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let vectors: Vec<Vec<f64>> = (0..5).map(|_| random_vector(&mut rng)).collect();
            for m in 1..=5 {
                let p = PredictionSet::new(vectors.clone(), 1, 3).unwrap().with_m(m).unwrap();
                let (hard, soft) = brute_force(&vectors, m);
                assert_eq!(hard_ensemble(&p)[0], hard);
                assert_eq!(soft_ensemble(&p)[0].0, soft);
            }
        }
    }

    #[test]
    fn unanimous_snapshots_agree() {
        let p = one_sample(&[[0.1, 0.8, 0.1], [0.3, 0.4, 0.3], [0.0, 0.9, 0.1]]);
        assert_eq!(hard_ensemble(&p), vec![1]);
        assert_eq!(soft_ensemble(&p)[0].0, 1);
    }

    #[test]
    fn unused_snapshots_do_not_matter() {
        let a = one_sample(&[onehot(0), onehot(2), onehot(1), onehot(1)]).with_m(2).unwrap();
        let b = one_sample(&[onehot(2), onehot(0), onehot(1), onehot(1)]).with_m(2).unwrap();
        assert_eq!(hard_ensemble(&a), hard_ensemble(&b));
        assert_eq!(soft_ensemble(&a), soft_ensemble(&b));
    }
}
