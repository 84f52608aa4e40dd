//! Particle and chain summaries: ESS, functional estimates with Monte Carlo
//! standard errors, batch means, and run comparisons.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// `(mean, sample sd)`; sd is 0 for fewer than two values.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Linear-interpolation quantile of an ascending sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Normalised weights from log-weights. All `-∞` gives all zeros.
pub fn normalize_log_weights(log_weights: &[f64]) -> Vec<f64> {
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return vec![0.0; log_weights.len()];
    }
    let w: Vec<f64> = log_weights.iter().map(|lw| (lw - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// `(Σw)² / Σw²`, in `[1, N]` whenever some weight is positive, else 0.
pub fn effective_sample_size(log_weights: &[f64]) -> f64 {
    let w = normalize_log_weights(log_weights);
    let s2: f64 = w.iter().map(|x| x * x).sum();
    if s2 == 0.0 {
        0.0
    } else {
        1.0 / s2
    }
}

/// Number of distinct entries of an ancestor vector.
pub fn unique_count(ancestors: &[usize]) -> usize {
    let mut a = ancestors.to_vec();
    a.sort_unstable();
    a.dedup();
    a.len()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalEstimate {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// `sd / √N`, ignoring dependence between particles.
    pub se_naive: f64,
    /// `sd / √K` with `K` the number of distinct ancestors.
    pub se: f64,
}

/// Equally weighted particle estimate of a functional.
pub fn estimate_functional(name: &str, values: &[f64], unique: usize) -> Result<FunctionalEstimate> {
    if values.is_empty() {
        return Err(Error::Usage(format!("no live particles to estimate `{name}`")));
    }
    let (mean, sd) = mean_sd(values);
    let n = values.len().max(1) as f64;
    let k = unique.clamp(1, values.len().max(1)) as f64;
    Ok(FunctionalEstimate { name: name.to_string(), mean, sd, se_naive: sd / n.sqrt(), se: sd / k.sqrt() })
}

/// Batch-means standard error of the mean of a correlated series.
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let b = batches.max(2).min(xs.len().max(2));
    let size = xs.len() / b;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..b).map(|j| xs[j * size..(j + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let (_, sd) = mean_sd(&means);
    sd / (b as f64).sqrt()
}

/// Per-functional comparison of two estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub name: String,
    pub a: f64,
    pub b: f64,
    pub se_a: f64,
    pub se_b: f64,
    /// `(a - b) / √(se_a² + se_b²)`.
    pub z: f64,
}

impl Comparison {
    pub fn new(name: &str, a: f64, se_a: f64, b: f64, se_b: f64) -> Self {
        let z = if a == b { 0.0 } else { (a - b) / (se_a * se_a + se_b * se_b).sqrt() };
        Comparison { name: name.to_string(), a, b, se_a, se_b, z }
    }

    pub fn within(&self, k: f64) -> bool {
        self.z.abs() < k
    }
}

/// Compare estimates matched by name.
pub fn compare_runs(a: &[FunctionalEstimate], b: &[FunctionalEstimate]) -> Vec<Comparison> {
    a.iter()
        .filter_map(|x| {
            b.iter().find(|y| y.name == x.name).map(|y| Comparison::new(&x.name, x.mean, x.se, y.mean, y.se))
        })
        .collect()
}

/// Total-variation distance between two discrete laws.
pub fn total_variation<K: Ord + Clone>(p: &BTreeMap<K, f64>, q: &BTreeMap<K, f64>) -> f64 {
    let mut keys: Vec<&K> = p.keys().chain(q.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys.into_iter().map(|k| (p.get(k).unwrap_or(&0.0) - q.get(k).unwrap_or(&0.0)).abs()).sum::<f64>()
}

/// Empirical law of a sample.
pub fn empirical<K: Ord + Clone>(xs: impl IntoIterator<Item = K>) -> BTreeMap<K, f64> {
    let mut counts: BTreeMap<K, f64> = BTreeMap::new();
    let mut n = 0.0;
    for x in xs {
        *counts.entry(x).or_insert(0.0) += 1.0;
        n += 1.0;
    }
    counts.values_mut().for_each(|c| *c /= n);
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ess_extremes() {
        assert_relative_eq!(effective_sample_size(&[0.3; 10]), 10.0, max_relative = 1e-12);
        let mut w = vec![f64::NEG_INFINITY; 10];
        w[3] = -5.0;
        assert_relative_eq!(effective_sample_size(&w), 1.0);
        assert_eq!(effective_sample_size(&[f64::NEG_INFINITY; 3]), 0.0);
    }

    #[test]
    fn functional_errors() {
        let e = estimate_functional("x", &[1.0, 2.0, 3.0, 4.0], 1).unwrap();
        assert!(estimate_functional("x", &[], 1).is_err());
        assert_relative_eq!(e.mean, 2.5);
        assert_relative_eq!(e.se, e.sd);
        assert_relative_eq!(e.se_naive, e.sd / 2.0);
    }

    #[test]
    fn batch_means_of_iid_noise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..40_000).map(|_| rng.random::<f64>()).collect();
        let se = batch_means_se(&xs, 40);
        let want = (1.0f64 / 12.0).sqrt() / 200.0;
        assert!((se / want - 1.0).abs() < 0.35, "{se} vs {want}");
    }

    #[test]
    fn tv_of_disjoint_laws_is_one() {
        let p = empirical([1, 1, 2]);
        let q = empirical([3]);
        assert_relative_eq!(total_variation(&p, &q), 1.0);
        assert_relative_eq!(total_variation(&p, &p), 0.0);
    }

    #[test]
    fn quantiles_interpolate() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_relative_eq!(quantile(&xs, 0.5), 3.0);
        assert_relative_eq!(quantile(&xs, 0.125), 1.5);
        assert_relative_eq!(quantile(&xs, 1.0), 5.0);
    }

    #[test]
    fn comparison_z() {
        let c = Comparison::new("x", 1.0, 0.3, 0.0, 0.4);
        assert_relative_eq!(c.z, 2.0);
        assert!(c.within(3.0));
    }
}
