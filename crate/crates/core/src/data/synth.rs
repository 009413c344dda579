//! Synthetic cross-network data with a known target→source mapping.
//!
//! Generative process, all draws from one seeded ChaCha stream:
//!
//! 1. `archetypes` topic profiles are drawn from a symmetric Dirichlet.
//! 2. A fixed source mapping `Q = ((1-μ)I + μS)·P` is drawn: `P` a random
//!    topic permutation, `S` a circulant neighbour-averaging matrix. `Q` is
//!    column-stochastic so it maps distributions to distributions.
//! 3. Each item picks an archetype and draws its topic vector from a
//!    Dirichlet concentrated on it; popularity follows a power law over a
//!    random rank order.
//! 4. Each user mixes archetypes with Dirichlet weights that drift a little
//!    every interval, giving a per-interval profile `p`.
//! 5. Per interval the user consumes `n ∈ [min, max]` new items (never
//!    repeating an earlier one), drawn without replacement with weight
//!    `⟨p, item_topics⟩^γ × popularity`. `n = 0` makes the interval inactive.
//! 6. Target vector: `p` plus Gaussian noise of scale `target_noise_ratio·η/K`,
//!    clipped and renormalized. Source vector: `Q·p` plus noise of scale `η/K`,
//!    likewise; the source side is inactive with probability `1 - source_activity`.
//! 7. A seeded random subset of `overlap × U` users is marked overlapped; the
//!    others' source timelines are withheld and returned separately.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, ItemId, TopicalDistribution, UserId, UserTimeline};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub users: usize,
    pub items: usize,
    pub topics: usize,
    pub intervals: usize,
    pub archetypes: usize,
    pub interactions_min: usize,
    pub interactions_max: usize,
    pub overlap: f64,
    pub popularity_skew: f64,
    /// γ: item choice weight is `affinity^γ × popularity`.
    pub preference_sharpness: f64,
    /// η: scale of the observation noise on both networks.
    pub mapping_noise: f64,
    /// Target-side noise is this multiple of η.
    pub target_noise_ratio: f64,
    /// Per-interval fraction of a user's archetype mixture that is redrawn.
    pub drift: f64,
    pub archetype_concentration: f64,
    pub user_concentration: f64,
    pub item_concentration: f64,
    /// μ: weight of neighbour averaging in the source mapping.
    pub source_mixing: f64,
    pub source_activity: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            users: 200,
            items: 500,
            topics: 16,
            intervals: 24,
            archetypes: 8,
            interactions_min: 0,
            interactions_max: 8,
            overlap: 0.5,
            popularity_skew: 0.5,
            preference_sharpness: 8.0,
            mapping_noise: 0.2,
            target_noise_ratio: 4.0,
            drift: 0.02,
            archetype_concentration: 0.2,
            user_concentration: 0.1,
            item_concentration: 30.0,
            source_mixing: 0.3,
            source_activity: 0.9,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.users == 0 || self.items == 0 || self.topics == 0 || self.intervals == 0 {
            return bad(format!(
                "users, items, topics and intervals must be positive (got U={}, M={}, K_t={}, T={})",
                self.users, self.items, self.topics, self.intervals
            ));
        }
        if self.archetypes == 0 {
            return bad("archetypes must be >= 1".into());
        }
        if self.interactions_min > self.interactions_max {
            return bad(format!(
                "interactions_min {} > interactions_max {}",
                self.interactions_min, self.interactions_max
            ));
        }
        if self.interactions_max * self.intervals > self.items {
            return bad(format!(
                "interactions_max × T = {} exceeds M = {}: users would run out of new items",
                self.interactions_max * self.intervals,
                self.items
            ));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return bad(format!("overlap {} outside [0, 1]", self.overlap));
        }
        if !(0.0..=1.0).contains(&self.drift) {
            return bad(format!("drift {} outside [0, 1]", self.drift));
        }
        if !(0.0..=1.0).contains(&self.source_mixing) {
            return bad(format!("source_mixing {} outside [0, 1]", self.source_mixing));
        }
        if !(0.0..=1.0).contains(&self.source_activity) {
            return bad(format!("source_activity {} outside [0, 1]", self.source_activity));
        }
        for (name, v) in [
            ("popularity_skew", self.popularity_skew),
            ("preference_sharpness", self.preference_sharpness),
            ("mapping_noise", self.mapping_noise),
            ("target_noise_ratio", self.target_noise_ratio),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        for (name, v) in [
            ("archetype_concentration", self.archetype_concentration),
            ("user_concentration", self.user_concentration),
            ("item_concentration", self.item_concentration),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        Ok(())
    }

    pub fn num_overlapped(&self) -> usize {
        (self.overlap * self.users as f64).round() as usize
    }
}

/// A synthesized dataset plus the source timelines withheld from
/// non-overlapped users (diagnostics only; never part of the dataset).
#[derive(Debug, Clone)]
pub struct Synthesized {
    pub dataset: Dataset,
    pub withheld_source: BTreeMap<UserId, Vec<TopicalDistribution>>,
    /// Column-stochastic `K×K` source mapping, row-major.
    pub mapping: Vec<Vec<f64>>,
}

fn dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter_mut().for_each(|d| *d /= sum);
    } else {
        // every component underflowed; fall back to a one-hot draw
        let k = rng.random_range(0..alpha.len());
        draws.iter_mut().enumerate().for_each(|(i, d)| *d = if i == k { 1.0 } else { 0.0 });
    }
    draws
}

fn noisy_distribution<R: Rng + ?Sized>(
    clean: &[f64],
    sd: f64,
    rng: &mut R,
) -> TopicalDistribution {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let noisy: Vec<f64> = clean
        .iter()
        .map(|&p| (p + sd * normal.sample(rng)).max(0.0))
        .collect();
    if sd == 0.0 || noisy.iter().sum::<f64>() <= 0.0 {
        TopicalDistribution::normalized(clean.to_vec())
    } else {
        TopicalDistribution::normalized(noisy)
    }
}

fn source_mapping<R: Rng + ?Sized>(k: usize, mixing: f64, rng: &mut R) -> Vec<Vec<f64>> {
    let mut perm: Vec<usize> = (0..k).collect();
    perm.shuffle(rng);
    // A = (1-μ)I + μS with S averaging each topic with its two neighbours.
    let mut a = vec![vec![0.0; k]; k];
    for (j, row) in a.iter_mut().enumerate() {
        row[j] += 1.0 - mixing;
        for d in [k - 1, 0, 1] {
            row[(j + d) % k] += mixing / 3.0;
        }
    }
    // Q = A·P where (P p)_j = p_{perm[j]}.
    let mut q = vec![vec![0.0; k]; k];
    for (j, row) in q.iter_mut().enumerate() {
        for (c, &a_jc) in a[j].iter().enumerate() {
            row[perm[c]] += a_jc;
        }
    }
    q
}

fn apply(q: &[Vec<f64>], p: &[f64]) -> Vec<f64> {
    q.iter()
        .map(|row| row.iter().zip(p).map(|(a, b)| a * b).sum())
        .collect()
}

fn sample_items<R: Rng + ?Sized>(
    profile: &[f64],
    sharpness: f64,
    item_topics: &[Vec<f64>],
    popularity: &[f64],
    consumed: &[bool],
    n: usize,
    rng: &mut R,
) -> Vec<ItemId> {
    let mut weights: Vec<f64> = item_topics
        .iter()
        .zip(popularity)
        .zip(consumed)
        .map(|((topics, pop), &used)| {
            if used {
                0.0
            } else {
                let affinity: f64 = topics.iter().zip(profile).map(|(a, b)| a * b).sum();
                // keep every unconsumed item reachable
                (affinity.powf(sharpness) * pop).max(1e-300)
            }
        })
        .collect();
    let mut picked = Vec::with_capacity(n);
    for _ in 0..n {
        let total: f64 = weights.iter().sum();
        let mut r = rng.random::<f64>() * total;
        let mut choice = None;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            choice = Some(i);
            if r < w {
                break;
            }
            r -= w;
        }
        let i = choice.expect("feasibility checked by SynthSpec::validate");
        weights[i] = 0.0;
        picked.push(i as ItemId);
    }
    picked.sort_unstable();
    picked
}

/// Deterministic synthetic dataset for `spec` and `seed`.
pub fn synthesize_dataset(spec: &SynthSpec, seed: u64) -> Result<Synthesized> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.topics;

    let archetypes: Vec<Vec<f64>> = (0..spec.archetypes)
        .map(|_| dirichlet(&vec![spec.archetype_concentration; k], &mut rng))
        .collect();
    let mapping = source_mapping(k, spec.source_mixing, &mut rng);

    let item_topics: Vec<Vec<f64>> = (0..spec.items)
        .map(|_| {
            let a = &archetypes[rng.random_range(0..spec.archetypes)];
            let alpha: Vec<f64> = a.iter().map(|w| spec.item_concentration * w + 0.05).collect();
            dirichlet(&alpha, &mut rng)
        })
        .collect();
    let mut ranks: Vec<usize> = (0..spec.items).collect();
    ranks.shuffle(&mut rng);
    let popularity: Vec<f64> = ranks
        .iter()
        .map(|&r| (1.0 + r as f64).powf(-spec.popularity_skew))
        .collect();

    let mut order: Vec<usize> = (0..spec.users).collect();
    order.shuffle(&mut rng);
    let mut overlapped = vec![false; spec.users];
    for &u in order.iter().take(spec.num_overlapped()) {
        overlapped[u] = true;
    }

    let target_sd = spec.target_noise_ratio * spec.mapping_noise / k as f64;
    let source_sd = spec.mapping_noise / k as f64;
    let user_alpha = vec![spec.user_concentration; spec.archetypes];

    let mut users = Vec::with_capacity(spec.users);
    let mut withheld_source = BTreeMap::new();
    for (u, &is_overlapped) in overlapped.iter().enumerate() {
        let mut mix = dirichlet(&user_alpha, &mut rng);
        let mut consumed = vec![false; spec.items];
        let mut target = Vec::with_capacity(spec.intervals);
        let mut source = Vec::with_capacity(spec.intervals);
        let mut interactions = Vec::with_capacity(spec.intervals);
        for t in 0..spec.intervals {
            if t > 0 && spec.drift > 0.0 {
                let fresh = dirichlet(&user_alpha, &mut rng);
                for (m, f) in mix.iter_mut().zip(&fresh) {
                    *m = (1.0 - spec.drift) * *m + spec.drift * f;
                }
            }
            let profile: Vec<f64> = (0..k)
                .map(|c| archetypes.iter().zip(&mix).map(|(a, w)| w * a[c]).sum())
                .collect();

            let n = rng.random_range(spec.interactions_min..=spec.interactions_max);
            let items = sample_items(&profile, spec.preference_sharpness, &item_topics, &popularity, &consumed, n, &mut rng);
            for &i in &items {
                consumed[i as usize] = true;
            }

            let tn = noisy_distribution(&profile, target_sd, &mut rng);
            target.push(if n == 0 { TopicalDistribution::inactive(k) } else { tn });

            let source_active = rng.random::<f64>() < spec.source_activity;
            let sn = noisy_distribution(&apply(&mapping, &profile), source_sd, &mut rng);
            source.push(if source_active { sn } else { TopicalDistribution::inactive(k) });

            interactions.push(items);
        }
        let user_id = u as UserId;
        if !is_overlapped {
            withheld_source.insert(user_id, source);
            users.push(UserTimeline {
                user_id,
                overlapped: false,
                target,
                source: None,
                interactions,
            });
        } else {
            users.push(UserTimeline {
                user_id,
                overlapped: true,
                target,
                source: Some(source),
                interactions,
            });
        }
    }

    let dataset = Dataset::new(users, spec.items, k, spec.intervals, item_topics)?;
    Ok(Synthesized {
        dataset,
        withheld_source,
        mapping,
    })
}

/// Mean squared residual of the best linear map (ridge-stabilised least
/// squares) from target to source vectors over overlapped users' intervals
/// where both sides are active. `None` when no such pair exists.
pub fn least_squares_mapping_mse(dataset: &Dataset) -> Option<f64> {
    let k = dataset.num_topics;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for u in dataset.users.iter().filter(|u| u.overlapped) {
        for t in 0..dataset.num_intervals {
            let (tn, sn) = (&u.target[t], u.source_at(t)?);
            if tn.is_active() && sn.is_active() {
                xs.push(tn.values().to_vec());
                ys.push(sn.values().to_vec());
            }
        }
    }
    if xs.is_empty() {
        return None;
    }
    // normal equations (XᵀX + εI) W = XᵀY, solved by Cholesky
    let mut g = vec![vec![0.0; k]; k];
    let mut b = vec![vec![0.0; k]; k];
    for (x, y) in xs.iter().zip(&ys) {
        for i in 0..k {
            for j in 0..k {
                g[i][j] += x[i] * x[j];
                b[i][j] += x[i] * y[j];
            }
        }
    }
    let trace: f64 = (0..k).map(|i| g[i][i]).sum();
    let ridge = 1e-13 * trace.max(1e-300);
    for (i, row) in g.iter_mut().enumerate() {
        row[i] += ridge;
    }
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = g[i][j] - (0..j).map(|c| l[i][c] * l[j][c]).sum::<f64>();
            if i == j {
                l[i][i] = s.max(1e-300).sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut w = vec![vec![0.0; k]; k];
    for col in 0..k {
        let mut z = vec![0.0; k];
        for i in 0..k {
            z[i] = (b[i][col] - (0..i).map(|c| l[i][c] * z[c]).sum::<f64>()) / l[i][i];
        }
        for i in (0..k).rev() {
            w[i][col] = (z[i] - (i + 1..k).map(|c| l[c][i] * w[c][col]).sum::<f64>()) / l[i][i];
        }
    }
    let mut sse = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        for col in 0..k {
            let pred: f64 = (0..k).map(|i| x[i] * w[i][col]).sum();
            sse += (pred - y[col]).powi(2);
        }
    }
    Some(sse / (xs.len() * k) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{write_dataset, SUM_TOLERANCE};

    fn small() -> SynthSpec {
        SynthSpec {
            users: 40,
            items: 120,
            topics: 8,
            intervals: 10,
            interactions_max: 6,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn default_spec_distributions_sum_to_one() {
        let s = synthesize_dataset(&SynthSpec::default(), 3).unwrap();
        let ds = &s.dataset;
        assert_eq!((ds.num_users(), ds.num_items, ds.num_topics, ds.num_intervals), (200, 500, 16, 24));
        let mut active = 0;
        for u in &ds.users {
            let mut all: Vec<&TopicalDistribution> = u.target.iter().collect();
            if let Some(src) = &u.source {
                all.extend(src.iter());
            }
            for d in all {
                if d.is_active() {
                    active += 1;
                    assert!((d.values().iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE);
                } else {
                    assert!(d.values().iter().all(|&v| v == 0.0));
                }
            }
        }
        assert!(active > 0);
        assert_eq!(ds.partition_overlap().0.len(), 100);
        assert_eq!(s.withheld_source.len(), 100);
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let bytes = |seed| {
            let mut buf = Vec::new();
            write_dataset(&synthesize_dataset(&small(), seed).unwrap().dataset, &mut buf).unwrap();
            buf
        };
        assert_eq!(bytes(5), bytes(5));
        assert_ne!(bytes(5), bytes(6));
    }

    #[test]
    fn single_archetype_without_noise_maps_common_profile() {
        let spec = SynthSpec {
            archetypes: 1,
            mapping_noise: 0.0,
            source_activity: 1.0,
            ..small()
        };
        let s = synthesize_dataset(&spec, 11).unwrap();
        let reference = s.dataset.users.iter().find(|u| u.overlapped).unwrap().source_at(0).unwrap().clone();
        for u in s.dataset.users.iter().filter(|u| u.overlapped) {
            for d in u.source.as_ref().unwrap() {
                for (a, b) in d.values().iter().zip(reference.values()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
        let q = &s.mapping;
        let target = s.dataset.users[0].target.iter().find(|d| d.is_active()).unwrap();
        let mapped = apply(q, target.values());
        for (a, b) in mapped.iter().zip(reference.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_mapping_is_linearly_recoverable() {
        let spec = SynthSpec {
            mapping_noise: 0.0,
            ..SynthSpec::default()
        };
        let s = synthesize_dataset(&spec, 1).unwrap();
        let mse = least_squares_mapping_mse(&s.dataset).unwrap();
        assert!(mse < 1e-6, "mse = {mse}");
        let noisy = synthesize_dataset(&SynthSpec::default(), 1).unwrap();
        assert!(least_squares_mapping_mse(&noisy.dataset).unwrap() > 1e-6);
    }

    #[test]
    fn mapping_is_column_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = source_mapping(7, 0.3, &mut rng);
        for c in 0..7 {
            let s: f64 = q.iter().map(|r| r[c]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn users_never_repeat_items() {
        let s = synthesize_dataset(&small(), 2).unwrap();
        for u in &s.dataset.users {
            let mut all: Vec<ItemId> = u.interactions.iter().flatten().copied().collect();
            let n = all.len();
            all.sort_unstable();
            all.dedup();
            assert_eq!(all.len(), n);
            for (t, items) in u.interactions.iter().enumerate() {
                assert_eq!(items.is_empty(), !u.target[t].is_active());
            }
        }
    }

    #[test]
    fn infeasible_spec_is_rejected() {
        let spec = SynthSpec {
            items: 10,
            interactions_max: 5,
            intervals: 24,
            ..SynthSpec::default()
        };
        assert!(matches!(synthesize_dataset(&spec, 0), Err(Error::Config(_))));
        let zero = SynthSpec {
            users: 0,
            ..SynthSpec::default()
        };
        assert!(synthesize_dataset(&zero, 0).is_err());
    }
}
