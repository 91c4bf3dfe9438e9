//! Shared fixtures for the integration suites: dataset generators,
//! independent metric oracles, partition enumeration, and mock estimators.

#![allow(dead_code)]

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use laf_dbscan::cardest::{CardinalityEstimator, EstimatorError};
use laf_dbscan::dbscan::{ClusterAssignment, PointLabel};
use laf_dbscan::vecspace::Dataset;

/// Points on the unit circle at the given angles (degrees).
pub fn circle_dataset(degrees: &[f64]) -> Dataset {
    let rows: Vec<Vec<f32>> = degrees
        .iter()
        .map(|d| {
            let r = d.to_radians();
            vec![r.cos() as f32, r.sin() as f32]
        })
        .collect();
    Dataset::from_rows(&rows).unwrap()
}

pub fn six_point_circle() -> Dataset {
    circle_dataset(&[0.0, 5.0, 10.0, 120.0, 125.0, 240.0])
}

/// Seeded mixture on the unit sphere: `clusters` caps of `cap_size` points
/// with tangent Gaussian spread, plus `noise` uniform points.
pub fn sphere_mixture(
    seed: u64,
    dim: usize,
    clusters: usize,
    cap_size: usize,
    spread: f64,
    noise: usize,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(clusters * cap_size + noise);
    let mut unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    };
    for _ in 0..clusters {
        let center = unit(&mut rng);
        for _ in 0..cap_size {
            let row: Vec<f32> = center
                .iter()
                .map(|&c| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    (c + spread * g) as f32
                })
                .collect();
            rows.push(row);
        }
    }
    for _ in 0..noise {
        rows.push(unit(&mut rng).into_iter().map(|x| x as f32).collect());
    }
    // Interleave so cluster membership does not follow index order.
    let mut order: Vec<usize> = (0..rows.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let shuffled: Vec<Vec<f32>> = order.into_iter().map(|i| rows[i].clone()).collect();
    Dataset::from_rows_normalized(&shuffled).unwrap()
}

/// Test estimator driven by a closure over the raw point vector.
pub struct FnEstimator<F: Fn(&[f32], f64) -> f64 + Send + Sync> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f32], f64) -> f64 + Send + Sync> CardinalityEstimator for FnEstimator<F> {
    fn predict(&self, point: &[f32], eps: f64) -> Result<f64, EstimatorError> {
        Ok((self.f)(point, eps))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Builds an assignment from dense ids; negatives mean noise.
pub fn assignment_from_ids(ids: &[i64]) -> ClusterAssignment {
    let mut remap = std::collections::HashMap::new();
    let mut next = 0u32;
    let labels = ids
        .iter()
        .map(|&id| {
            if id < 0 {
                PointLabel::Noise
            } else {
                let c = *remap.entry(id).or_insert_with(|| {
                    next += 1;
                    next
                });
                PointLabel::Cluster(c)
            }
        })
        .collect();
    ClusterAssignment::from_labels(labels).unwrap()
}

/// All set partitions of `0..n` as restricted-growth label vectors.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut labels = vec![0usize; n];
    fn rec(labels: &mut Vec<usize>, pos: usize, max_used: usize, out: &mut Vec<Vec<usize>>) {
        if pos == labels.len() {
            out.push(labels.clone());
            return;
        }
        for label in 0..=max_used + 1 {
            labels[pos] = label;
            rec(labels, pos + 1, max_used.max(label), out);
        }
    }
    if n == 0 {
        return vec![Vec::new()];
    }
    rec(&mut labels, 1, 0, &mut out);
    out
}

/// Brute-force adjusted Rand index: pair statistics come from enumerating
/// every element pair, no contingency table.
pub fn ari_oracle(truth: &[usize], pred: &[usize]) -> f64 {
    assert_eq!(truth.len(), pred.len());
    let n = truth.len();
    let mut together_both = 0u64;
    let mut together_truth = 0u64;
    let mut together_pred = 0u64;
    let mut total = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            total += 1;
            let t = truth[i] == truth[j];
            let p = pred[i] == pred[j];
            together_truth += t as u64;
            together_pred += p as u64;
            together_both += (t && p) as u64;
        }
    }
    if total == 0 {
        return 1.0;
    }
    let expected = together_truth as f64 * together_pred as f64 / total as f64;
    let max_index = 0.5 * (together_truth + together_pred) as f64;
    if max_index == expected {
        1.0
    } else {
        (together_both as f64 - expected) / (max_index - expected)
    }
}

fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::from(0u32);
    }
    let mut num = BigUint::from(1u32);
    let mut den = BigUint::from(1u32);
    for i in 0..k.min(n - k) {
        num *= BigUint::from(n - i);
        den *= BigUint::from(i + 1);
    }
    num / den
}

/// Direct-summation adjusted mutual information: exact big-integer
/// binomials give each hypergeometric probability.
pub fn ami_oracle(truth: &[usize], pred: &[usize]) -> f64 {
    assert_eq!(truth.len(), pred.len());
    let n = truth.len() as u64;
    if n == 0 {
        return 1.0;
    }
    let k1 = truth.iter().max().map(|m| m + 1).unwrap_or(0);
    let k2 = pred.iter().max().map(|m| m + 1).unwrap_or(0);
    let mut counts = vec![vec![0u64; k2]; k1];
    for (&t, &p) in truth.iter().zip(pred) {
        counts[t][p] += 1;
    }
    let a: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
    let mut b = vec![0u64; k2];
    for row in &counts {
        for (j, &c) in row.iter().enumerate() {
            b[j] += c;
        }
    }
    let nf = n as f64;

    let mut mi = 0.0f64;
    for (i, row) in counts.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                mi += (nij as f64 / nf) * ((nij as f64 * nf) / (a[i] as f64 * b[j] as f64)).ln();
            }
        }
    }
    let entropy = |m: &[u64]| -> f64 {
        m.iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nf;
                -p * p.ln()
            })
            .sum()
    };
    let h1 = entropy(&a);
    let h2 = entropy(&b);

    let mut emi = 0.0f64;
    for &ai in &a {
        if ai == 0 {
            continue;
        }
        for &bj in &b {
            if bj == 0 {
                continue;
            }
            // Hypergeometric pmf C(ai,nij) C(n-ai,bj-nij) / C(n,bj).
            let denom = binomial(n, bj).to_f64().unwrap();
            let lo = 1.max((ai + bj).saturating_sub(n));
            let hi = ai.min(bj);
            for nij in lo..=hi {
                let ways = binomial(ai, nij) * binomial(n - ai, bj - nij);
                let prob = ways.to_f64().unwrap() / denom;
                emi += (nij as f64 / nf) * ((nij as f64 * nf) / (ai as f64 * bj as f64)).ln() * prob;
            }
        }
    }

    let denominator = 0.5 * (h1 + h2) - emi;
    if denominator == 0.0 {
        let identical = canonical(truth) == canonical(pred);
        return if identical { 1.0 } else { 0.0 };
    }
    (mi - emi) / denominator
}

fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut remap = std::collections::HashMap::new();
    let mut next = 0usize;
    labels
        .iter()
        .map(|&l| {
            *remap.entry(l).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            })
        })
        .collect()
}

/// Hypergeometric expectation has one subtlety worth double-checking: the
/// oracle's probability for a cell must sum to at most 1 over its support.
#[test]
fn oracle_probabilities_are_sane() {
    let n = 10u64;
    for ai in 1..=n {
        for bj in 1..=n {
            let denom = binomial(n, bj).to_f64().unwrap();
            let lo = 0.max((ai + bj).saturating_sub(n));
            let hi = ai.min(bj);
            let total: f64 = (lo..=hi)
                .map(|nij| {
                    (binomial(ai, nij) * binomial(n - ai, bj - nij))
                        .to_f64()
                        .unwrap()
                        / denom
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-9, "ai={ai} bj={bj} total={total}");
        }
    }
}

/// Bell numbers pin the partition generator.
#[test]
fn partition_enumeration_counts() {
    let bell = [1usize, 1, 2, 5, 15, 52, 203, 877, 4140];
    for (n, &expected) in bell.iter().enumerate() {
        assert_eq!(set_partitions(n).len(), expected, "Bell({n})");
    }
}
