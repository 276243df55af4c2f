//! Bernoulli observation sampling and splitting of the observed set into
//! per-iteration subsets.
//!
//! Three split modes are supported. `PaperLiteral` draws, for each retained
//! entry, a subset-size r with weight C(T,r)/(2^T−1) and then a uniform
//! size-r subset of the T sets. `ExactCoupling` assigns memberships by the
//! conditional product law P(S) = p^|S|(1−p)^(T−|S|)/p′ over nonempty
//! S ⊆ [T], which makes every output set marginally Bernoulli(p) and the
//! sets mutually independent. `NoSplit` hands the full observed set to every
//! iteration, which is what works best in practice.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An observed index set, sorted in row-major order.
pub type IndexSet = Vec<(usize, usize)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    PaperLiteral,
    ExactCoupling,
    NoSplit,
}

/// How the observed set is carved into per-iteration subsets.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitPlan {
    /// Number of output sets (Q·T+1 for the stagewise solver, r·T+1 for the
    /// rank-increment variant).
    pub num_sets: usize,
    /// Target per-set sampling rate.
    pub per_set_rate: f64,
    pub mode: SplitMode,
}

impl SplitPlan {
    pub fn new(num_sets: usize, per_set_rate: f64, mode: SplitMode) -> Result<Self> {
        if num_sets < 1 {
            return Err(Error::InvalidArgument("num_sets must be at least 1".into()));
        }
        if !(per_set_rate > 0.0 && per_set_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "per_set_rate must be in (0, 1], got {per_set_rate}"
            )));
        }
        Ok(Self {
            num_sets,
            per_set_rate,
            mode,
        })
    }
}

/// Samples each of the m·n indices independently with probability p.
/// Deterministic given the seed; output sorted row-major.
pub fn bernoulli_sample(m: usize, n: usize, p: f64, seed: u64) -> Result<IndexSet> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling probability must be in (0, 1], got {p}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(((m * n) as f64 * p * 1.1) as usize + 16);
    for i in 0..m {
        for j in 0..n {
            if rng.gen::<f64>() < p {
                out.push((i, j));
            }
        }
    }
    Ok(out)
}

/// Subset-size weights q_r = C(T,r)/(2^T − 1) for r = 1..=T.
pub fn subset_size_weights(t: usize) -> Vec<f64> {
    let mut binom = vec![0.0f64; t + 1];
    binom[0] = 1.0;
    for r in 0..t {
        binom[r + 1] = binom[r] * (t - r) as f64 / (r + 1) as f64;
    }
    let denom = 2.0f64.powi(t as i32) - 1.0;
    (1..=t).map(|r| binom[r] / denom).collect()
}

fn draw_weighted(rng: &mut ChaCha12Rng, weights: &[f64]) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (idx, w) in weights.iter().enumerate() {
        acc += w;
        if x < acc {
            return idx;
        }
    }
    weights.len() - 1
}

/// Uniform random size-r subset of 0..t (Floyd's algorithm).
fn random_subset(rng: &mut ChaCha12Rng, t: usize, r: usize) -> Vec<usize> {
    let mut chosen = std::collections::BTreeSet::new();
    for j in (t - r)..t {
        let x = rng.gen_range(0..=j);
        if !chosen.insert(x) {
            chosen.insert(j);
        }
    }
    chosen.into_iter().collect()
}

/// Splits `omega` (drawn at rate `p_in`) into `plan.num_sets` subsets.
///
/// Retention for the subsampled Ω′ uses probability min(1, p′/p_in) with
/// p′ = 1 − (1 − p)^T; the ratio can exceed 1 when the input rate is below
/// what the formula assumes, so it is clamped.
pub fn split_samples(
    omega: &[(usize, usize)],
    p_in: f64,
    plan: &SplitPlan,
    seed: u64,
) -> Result<Vec<IndexSet>> {
    if omega.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot split an empty observed set".into(),
        ));
    }
    if !(p_in > 0.0 && p_in <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "input rate must be in (0, 1], got {p_in}"
        )));
    }
    let t = plan.num_sets;
    let p = plan.per_set_rate;
    match plan.mode {
        SplitMode::NoSplit => Ok(vec![omega.to_vec(); t]),
        SplitMode::PaperLiteral => {
            let p_prime = 1.0 - (1.0 - p).powi(t as i32);
            let retain = (p_prime / p_in).min(1.0);
            let weights = subset_size_weights(t);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut sets: Vec<IndexSet> = vec![Vec::new(); t];
            for &idx in omega {
                if rng.gen::<f64>() >= retain {
                    continue;
                }
                let r = draw_weighted(&mut rng, &weights) + 1;
                for s in random_subset(&mut rng, t, r) {
                    sets[s].push(idx);
                }
            }
            Ok(sets)
        }
        SplitMode::ExactCoupling => {
            let p_prime = 1.0 - (1.0 - p).powi(t as i32);
            let retain = (p_prime / p_in).min(1.0);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut sets: Vec<IndexSet> = vec![Vec::new(); t];
            let mut membership = vec![false; t];
            for &idx in omega {
                if rng.gen::<f64>() >= retain {
                    continue;
                }
                // conditional product law over nonempty membership vectors,
                // sampled by rejection (expected 1/p' attempts)
                loop {
                    let mut any = false;
                    for b in membership.iter_mut() {
                        *b = rng.gen::<f64>() < p;
                        any |= *b;
                    }
                    if any {
                        break;
                    }
                }
                for (s, &b) in membership.iter().enumerate() {
                    if b {
                        sets[s].push(idx);
                    }
                }
            }
            Ok(sets)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_full_rate() {
        let omega = bernoulli_sample(7, 5, 1.0, 3).unwrap();
        assert_eq!(omega.len(), 35);
    }

    #[test]
    fn bernoulli_rejects_bad_rate() {
        assert!(bernoulli_sample(2, 2, 0.0, 0).is_err());
        assert!(bernoulli_sample(2, 2, 1.5, 0).is_err());
    }

    #[test]
    fn bernoulli_concentration() {
        // binomial concentration: mean rate over 50 seeds within 4 standard
        // errors of p
        let (m, n, p) = (200usize, 200usize, 0.3f64);
        let trials = 50;
        let mut total = 0usize;
        for seed in 0..trials {
            total += bernoulli_sample(m, n, p, seed).unwrap().len();
        }
        let cells = (m * n * trials as usize) as f64;
        let rate = total as f64 / cells;
        let se = (p * (1.0 - p) / cells).sqrt();
        assert!(
            (rate - p).abs() <= 4.0 * se,
            "rate {rate} outside 4 standard errors of {p}"
        );
    }

    #[test]
    fn bernoulli_tiny_rate_mostly_empty() {
        let omega = bernoulli_sample(100, 100, 1e-9, 12).unwrap();
        assert!(omega.len() <= 1);
    }

    #[test]
    fn bernoulli_deterministic() {
        let a = bernoulli_sample(50, 50, 0.2, 9).unwrap();
        let b = bernoulli_sample(50, 50, 0.2, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weights_t3() {
        // C(3,r)/(2^3-1) = [3/7, 3/7, 1/7]
        let w = subset_size_weights(3);
        assert!((w[0] - 3.0 / 7.0).abs() <= 1e-15);
        assert!((w[1] - 3.0 / 7.0).abs() <= 1e-15);
        assert!((w[2] - 1.0 / 7.0).abs() <= 1e-15);
    }

    #[test]
    fn degenerate_single_set() {
        let omega = bernoulli_sample(20, 20, 0.5, 4).unwrap();
        for mode in [SplitMode::PaperLiteral, SplitMode::ExactCoupling, SplitMode::NoSplit] {
            let plan = SplitPlan::new(1, 0.5, mode).unwrap();
            let sets = split_samples(&omega, 0.5, &plan, 1).unwrap();
            assert_eq!(sets.len(), 1);
            // T=1: p' = p, retention 1, q_1 = 1 → the set equals omega
            assert_eq!(sets[0], omega);
        }
    }

    #[test]
    fn no_split_returns_identical_sets() {
        let omega = bernoulli_sample(10, 10, 0.4, 7).unwrap();
        let plan = SplitPlan::new(5, 0.08, SplitMode::NoSplit).unwrap();
        let sets = split_samples(&omega, 0.4, &plan, 0).unwrap();
        assert_eq!(sets.len(), 5);
        for s in &sets {
            assert_eq!(*s, omega);
        }
    }

    #[test]
    fn split_outputs_subsets_of_input() {
        let omega = bernoulli_sample(40, 40, 0.5, 21).unwrap();
        let lookup: std::collections::BTreeSet<_> = omega.iter().copied().collect();
        for mode in [SplitMode::PaperLiteral, SplitMode::ExactCoupling] {
            let plan = SplitPlan::new(4, 0.1, mode).unwrap();
            let sets = split_samples(&omega, 0.5, &plan, 5).unwrap();
            for s in &sets {
                for idx in s {
                    assert!(lookup.contains(idx));
                }
            }
        }
    }

    #[test]
    fn split_empty_input_errors() {
        let plan = SplitPlan::new(2, 0.1, SplitMode::PaperLiteral).unwrap();
        assert!(split_samples(&[], 0.5, &plan, 0).is_err());
    }

    #[test]
    fn split_deterministic() {
        let omega = bernoulli_sample(30, 30, 0.6, 2).unwrap();
        let plan = SplitPlan::new(3, 0.15, SplitMode::ExactCoupling).unwrap();
        let a = split_samples(&omega, 0.6, &plan, 42).unwrap();
        let b = split_samples(&omega, 0.6, &plan, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exact_coupling_marginals_and_pairwise() {
        // Monte Carlo against the product law: per-set inclusion rate p and
        // pairwise co-membership rate p², both within 4 standard errors.
        let (m, n) = (150usize, 150usize);
        let p = 0.2f64;
        let t = 4usize;
        let n_seeds = 200u64;
        // feed a fully-observed grid so p_in = 1 and retention = p'
        let omega: IndexSet = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        let plan = SplitPlan::new(t, p, SplitMode::ExactCoupling).unwrap();
        let mut per_set = vec![0usize; t];
        let mut pair01 = 0usize;
        for seed in 0..n_seeds {
            let sets = split_samples(&omega, 1.0, &plan, seed).unwrap();
            for (k, s) in sets.iter().enumerate() {
                per_set[k] += s.len();
            }
            let s0: std::collections::BTreeSet<_> = sets[0].iter().copied().collect();
            pair01 += sets[1].iter().filter(|idx| s0.contains(idx)).count();
        }
        let draws = (m * n) as f64 * n_seeds as f64;
        let se_single = (p * (1.0 - p) / draws).sqrt();
        for k in 0..t {
            let rate = per_set[k] as f64 / draws;
            assert!(
                (rate - p).abs() <= 4.0 * se_single,
                "set {k} rate {rate} outside band around {p}"
            );
        }
        let p2 = p * p;
        let se_pair = (p2 * (1.0 - p2) / draws).sqrt();
        let rate01 = pair01 as f64 / draws;
        assert!(
            (rate01 - p2).abs() <= 4.0 * se_pair,
            "pairwise rate {rate01} outside band around {p2}"
        );
    }
}
