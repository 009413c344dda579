//! Cross-network user timelines.
//!
//! Each user has one target-network topical distribution per interval and,
//! when overlapped, a matching source-network distribution. Item-level
//! interactions are kept per interval for the recommender and the metrics.

mod io;
mod synth;

pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, FORMAT_VERSION};
pub use synth::{least_squares_mapping_mse, synthesize_dataset, SynthSpec, Synthesized};

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type UserId = u32;
pub type ItemId = u32;

/// Tolerance on the unit-sum constraint of active distributions.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Relative topic frequencies for one user in one interval. Inactive
/// intervals (no interactions) are the all-zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicalDistribution {
    values: Vec<f64>,
    active: bool,
}

impl TopicalDistribution {
    pub fn inactive(num_topics: usize) -> Self {
        TopicalDistribution {
            values: vec![0.0; num_topics],
            active: false,
        }
    }

    /// Relative frequencies from absolute topic counts.
    pub fn from_counts(counts: &[u64]) -> Self {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Self::inactive(counts.len());
        }
        TopicalDistribution {
            values: counts.iter().map(|&c| c as f64 / total as f64).collect(),
            active: true,
        }
    }

    /// Validating constructor: all-zero means inactive, anything else must be a
    /// non-negative vector summing to one.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Validation(format!(
                "topic weight {v} is negative or non-finite"
            )));
        }
        let sum: f64 = values.iter().sum();
        if sum == 0.0 {
            return Ok(TopicalDistribution {
                values,
                active: false,
            });
        }
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Validation(format!(
                "active topical distribution sums to {sum}, expected 1"
            )));
        }
        Ok(TopicalDistribution {
            values,
            active: true,
        })
    }

    /// Normalizes non-negative weights; a zero total gives an inactive vector.
    pub(crate) fn normalized(mut weights: Vec<f64>) -> Self {
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Self::inactive(weights.len());
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        TopicalDistribution {
            values: weights,
            active: true,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `build_topical_distribution` from topic counts.
pub fn build_topical_distribution(topic_counts: &[u64]) -> TopicalDistribution {
    TopicalDistribution::from_counts(topic_counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserTimeline {
    pub user_id: UserId,
    pub overlapped: bool,
    pub target: Vec<TopicalDistribution>,
    /// Present only for overlapped users.
    pub source: Option<Vec<TopicalDistribution>>,
    /// Sorted, de-duplicated item ids per interval.
    pub interactions: Vec<Vec<ItemId>>,
}

impl UserTimeline {
    /// Source distribution at `t`, `None` for non-overlapped users.
    pub fn source_at(&self, t: usize) -> Option<&TopicalDistribution> {
        if !self.overlapped {
            return None;
        }
        self.source.as_ref().map(|s| &s[t])
    }
}

/// Binary vector with bit `i` set iff the user touched item `i` before some interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrevInteractionVector {
    bits: Vec<bool>,
}

impl PrevInteractionVector {
    pub fn empty(num_items: usize) -> Self {
        PrevInteractionVector {
            bits: vec![false; num_items],
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.bits.get(item as usize).copied().unwrap_or(false)
    }

    pub fn set(&mut self, item: ItemId) {
        self.bits[item as usize] = true;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn ones(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i as ItemId)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub users: Vec<UserTimeline>,
    pub num_items: usize,
    pub num_topics: usize,
    pub num_intervals: usize,
    /// `num_items × num_topics` item content vectors.
    pub item_topics: Vec<Vec<f64>>,
    index: HashMap<UserId, usize>,
}

impl Dataset {
    /// Builds and validates a dataset.
    pub fn new(
        users: Vec<UserTimeline>,
        num_items: usize,
        num_topics: usize,
        num_intervals: usize,
        item_topics: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(users.len());
        for (pos, u) in users.iter().enumerate() {
            if index.insert(u.user_id, pos).is_some() {
                return Err(Error::Validation(format!("duplicate user id {}", u.user_id)));
            }
        }
        let ds = Dataset {
            users,
            num_items,
            num_topics,
            num_intervals,
            item_topics,
            index,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, k, t) = (self.num_items, self.num_topics, self.num_intervals);
        if m == 0 || k == 0 || t == 0 {
            return Err(Error::Validation(format!(
                "dimensions must be positive (M={m}, K_t={k}, T={t})"
            )));
        }
        if self.item_topics.len() != m {
            return Err(Error::Validation(format!(
                "item_topics has {} rows, expected {m}",
                self.item_topics.len()
            )));
        }
        if let Some(row) = self.item_topics.iter().position(|r| r.len() != k) {
            return Err(Error::Validation(format!("item_topics row {row} is not length {k}")));
        }
        for u in &self.users {
            let id = u.user_id;
            if u.target.len() != t || u.interactions.len() != t {
                return Err(Error::Validation(format!("user {id}: expected {t} intervals")));
            }
            if u.target.iter().any(|d| d.len() != k) {
                return Err(Error::Validation(format!("user {id}: target vector not length {k}")));
            }
            match (&u.source, u.overlapped) {
                (Some(src), true) => {
                    if src.len() != t || src.iter().any(|d| d.len() != k) {
                        return Err(Error::Validation(format!("user {id}: malformed source timeline")));
                    }
                }
                (None, true) => {
                    return Err(Error::Validation(format!("user {id}: overlapped without source")));
                }
                (Some(_), false) => {
                    return Err(Error::Validation(format!(
                        "user {id}: non-overlapped user carries source data"
                    )));
                }
                (None, false) => {}
            }
            for items in &u.interactions {
                if let Some(&bad) = items.iter().find(|&&i| i as usize >= m) {
                    return Err(Error::Validation(format!("user {id}: item {bad} >= M={m}")));
                }
                if items.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Validation(format!(
                        "user {id}: interaction list not sorted/unique"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn position(&self, user: UserId) -> Result<usize> {
        self.index.get(&user).copied().ok_or(Error::UnknownUser(user))
    }

    pub fn user(&self, user: UserId) -> Result<&UserTimeline> {
        Ok(&self.users[self.position(user)?])
    }

    /// Positions of overlapped / non-overlapped users, in storage order.
    pub fn partition_overlap(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.users.len()).partition(|&p| self.users[p].overlapped)
    }

    pub fn total_interactions(&self) -> usize {
        self.users
            .iter()
            .flat_map(|u| &u.interactions)
            .map(Vec::len)
            .sum()
    }

    /// Per-item interaction counts over intervals `< before`.
    pub fn item_counts_before(&self, before: usize) -> Vec<u64> {
        let mut counts = vec![0u64; self.num_items];
        for u in &self.users {
            for items in u.interactions.iter().take(before) {
                for &i in items {
                    counts[i as usize] += 1;
                }
            }
        }
        counts
    }

    /// Per-item interaction counts in interval `t`, over all users.
    pub fn item_counts_at(&self, t: usize) -> Vec<u64> {
        let mut counts = vec![0u64; self.num_items];
        for u in &self.users {
            for &i in &u.interactions[t] {
                counts[i as usize] += 1;
            }
        }
        counts
    }
}

/// Union of a user's interaction sets over intervals `< t`, by storage position.
pub fn prev_interactions_at(dataset: &Dataset, position: usize, t: usize) -> PrevInteractionVector {
    let mut v = PrevInteractionVector::empty(dataset.num_items);
    for items in dataset.users[position].interactions.iter().take(t) {
        for &i in items {
            v.set(i);
        }
    }
    v
}

/// Union of `user`'s interaction sets over intervals `< t`.
pub fn prev_interactions(dataset: &Dataset, user: UserId, t: usize) -> Result<PrevInteractionVector> {
    if t > dataset.num_intervals {
        return Err(Error::Validation(format!(
            "interval {t} beyond T={}",
            dataset.num_intervals
        )));
    }
    let pos = dataset.position(user)?;
    Ok(prev_interactions_at(dataset, pos, t))
}
