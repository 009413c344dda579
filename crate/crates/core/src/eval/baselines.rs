use std::collections::BTreeSet;

use super::{diversity, hit_ratio, ndcg, novelty, EvalReport, EvalRow};
use crate::data::{Dataset, ItemId};
use crate::error::{Error, Result};
use crate::recommender::top_n_from_scores;

pub const DEFAULT_TBKNN_K: [usize; 6] = [4, 10, 20, 30, 40, 50];

fn check_interval(dataset: &Dataset, s: usize) -> Result<()> {
    if s == 0 || s >= dataset.num_intervals {
        return Err(Error::Validation(format!(
            "baseline interval {s} outside 1..{}",
            dataset.num_intervals
        )));
    }
    Ok(())
}

/// The `n` items most consumed in interval `s - 1`, ties by ascending id.
pub fn baseline_timepop(dataset: &Dataset, s: usize, n: usize) -> Result<Vec<ItemId>> {
    check_interval(dataset, s)?;
    let scores: Vec<f64> = dataset.item_counts_at(s - 1).iter().map(|&c| c as f64).collect();
    Ok(top_n_from_scores(&scores, n, None))
}

/// Users ranked by cosine similarity of their binary interaction histories
/// over intervals `< s`, for one requesting user.
#[derive(Debug, Clone)]
pub struct TbknnNeighbours {
    /// `(similarity, position)` of every other user, most similar first
    /// (ties by ascending user id).
    pub ranked: Vec<(f64, usize)>,
}

impl TbknnNeighbours {
    pub fn compute(dataset: &Dataset, position: usize, histories: &[BTreeSet<ItemId>]) -> Self {
        let mine = &histories[position];
        let mut ranked: Vec<(f64, usize)> = histories
            .iter()
            .enumerate()
            .filter(|&(p, _)| p != position)
            .map(|(p, h)| {
                let common = mine.intersection(h).count() as f64;
                let norm = ((mine.len() * h.len()) as f64).sqrt();
                (if norm > 0.0 { common / norm } else { 0.0 }, p)
            })
            .collect();
        ranked.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(dataset.users[a.1].user_id.cmp(&dataset.users[b.1].user_id))
        });
        TbknnNeighbours { ranked }
    }

    /// Pools the latest-interval items of the `k` nearest users.
    pub fn recommend(&self, dataset: &Dataset, s: usize, k: usize, n: usize) -> Vec<ItemId> {
        let mut scores = vec![0.0; dataset.num_items];
        for &(_, p) in self.ranked.iter().take(k) {
            for &i in &dataset.users[p].interactions[s - 1] {
                scores[i as usize] += 1.0;
            }
        }
        top_n_from_scores(&scores, n, None)
    }
}

fn histories_before(dataset: &Dataset, s: usize) -> Vec<BTreeSet<ItemId>> {
    dataset
        .users
        .iter()
        .map(|u| u.interactions[..s].iter().flatten().copied().collect())
        .collect()
}

fn clip_k(k: usize, others: usize) -> usize {
    if k > others {
        log::warn!("TBKNN: K={k} exceeds the {others} other user(s); clipped");
        others
    } else {
        k
    }
}

/// One recommendation list per K in `k_values`, for user at `position`.
pub fn tbknn_lists(
    dataset: &Dataset,
    s: usize,
    position: usize,
    n: usize,
    k_values: &[usize],
) -> Result<Vec<Vec<ItemId>>> {
    check_interval(dataset, s)?;
    let histories = histories_before(dataset, s);
    let nb = TbknnNeighbours::compute(dataset, position, &histories);
    let others = dataset.num_users() - 1;
    Ok(k_values
        .iter()
        .map(|&k| nb.recommend(dataset, s, clip_k(k, others), n))
        .collect())
}

/// TBKNN list for a single K.
pub fn baseline_tbknn(dataset: &Dataset, s: usize, position: usize, n: usize, k: usize) -> Result<Vec<ItemId>> {
    Ok(tbknn_lists(dataset, s, position, n, &[k])?.remove(0))
}

/// TimePop and TBKNN rows for every `population` user and predicted interval
/// in `intervals`. TBKNN metrics are averaged over `k_values`.
pub fn evaluate_baselines(
    dataset: &Dataset,
    intervals: std::ops::Range<usize>,
    ns: &[usize],
    population: &[usize],
    k_values: &[usize],
) -> Result<EvalReport> {
    if k_values.is_empty() {
        return Err(Error::Config("TBKNN needs at least one K".into()));
    }
    let max_n = ns.iter().copied().max().unwrap_or(0);
    let mut pop_report = EvalReport::default();
    let mut knn_report = EvalReport::default();
    let others = dataset.num_users().saturating_sub(1);
    let ks: Vec<usize> = k_values.iter().map(|&k| clip_k(k, others)).collect();
    for s in intervals {
        check_interval(dataset, s)?;
        let counts = dataset.item_counts_before(s);
        let histories = histories_before(dataset, s);
        let pop = baseline_timepop(dataset, s, max_n)?;
        for &p in population {
            let user = &dataset.users[p];
            let truth: BTreeSet<ItemId> = user.interactions[s].iter().copied().collect();
            if truth.is_empty() {
                pop_report.skipped_empty_truth += 1;
                knn_report.skipped_empty_truth += 1;
                continue;
            }
            pop_report.score_lists("timepop", s, user.user_id, ns, &pop, &truth, &counts, &dataset.item_topics)?;

            let nb = TbknnNeighbours::compute(dataset, p, &histories);
            let lists: Vec<Vec<ItemId>> = ks.iter().map(|&k| nb.recommend(dataset, s, k, max_n)).collect();
            for &n in ns {
                let mut sums = [0.0; 4];
                let mut short = false;
                for list in &lists {
                    let list = &list[..n.min(list.len())];
                    let Some(div) = diversity(list, &dataset.item_topics) else {
                        short = true;
                        break;
                    };
                    for (a, v) in sums
                        .iter_mut()
                        .zip([hit_ratio(list, &truth)?, ndcg(list, &truth)?, novelty(list, &counts), div])
                    {
                        *a += v;
                    }
                }
                if short {
                    knn_report.skipped_short_list += 1;
                    continue;
                }
                let k = lists.len() as f64;
                knn_report.rows.push(EvalRow {
                    variant: "tbknn".into(),
                    interval: s,
                    user: user.user_id,
                    n,
                    hr: sums[0] / k,
                    ndcg: sums[1] / k,
                    novelty: sums[2] / k,
                    diversity: sums[3] / k,
                });
            }
        }
    }
    pop_report.extend(knn_report);
    Ok(pop_report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{TopicalDistribution, UserTimeline};

    fn dataset(interactions: Vec<Vec<Vec<ItemId>>>, m: usize) -> Dataset {
        let t = interactions[0].len();
        let users = interactions
            .into_iter()
            .enumerate()
            .map(|(u, inter)| UserTimeline {
                user_id: u as u32,
                overlapped: false,
                target: vec![TopicalDistribution::inactive(1); t],
                source: None,
                interactions: inter,
            })
            .collect();
        Dataset::new(users, m, 1, t, vec![vec![1.0]; m]).unwrap()
    }

    #[test]
    fn timepop_ties_and_empty_interval() {
        // counts {5:3, 2:3, 9:1}
        let mut inter = vec![
            vec![vec![2, 5, 9], vec![]],
            vec![vec![2, 5], vec![]],
            vec![vec![2, 5], vec![]],
        ];
        let ds = dataset(inter.clone(), 10);
        assert_eq!(baseline_timepop(&ds, 1, 2).unwrap(), vec![2, 5]);
        for u in &mut inter {
            u[0].clear();
        }
        let ds = dataset(inter, 10);
        assert_eq!(baseline_timepop(&ds, 1, 3).unwrap(), vec![0, 1, 2]);
        assert!(baseline_timepop(&ds, 0, 3).is_err());
    }

    #[test]
    fn tbknn_single_other_user() {
        let ds = dataset(vec![vec![vec![0], vec![]], vec![vec![3, 4], vec![]]], 6);
        for k in [1, 4, 50] {
            assert_eq!(baseline_tbknn(&ds, 1, 0, 2, k).unwrap(), vec![3, 4]);
        }
    }

    #[test]
    fn tbknn_identical_neighbour_dominates() {
        // user 0 and 1 share history {0,1}; users 2,3 are disjoint
        let ds = dataset(
            vec![
                vec![vec![0, 1], vec![]],
                vec![vec![0, 1], vec![]],
                vec![vec![5], vec![]],
                vec![vec![6, 7], vec![]],
            ],
            8,
        );
        assert_eq!(baseline_tbknn(&ds, 1, 0, 2, 1).unwrap(), vec![0, 1]);
    }

    #[test]
    fn tbknn_hand_fixture() {
        // histories over interval 0 (the latest before s=1):
        // u0 {0,1,2}, u1 {0,1}, u2 {1,3}, u3 {4}
        // cos(u0,u1)=2/√6≈0.816, cos(u0,u2)=1/√6≈0.408, cos(u0,u3)=0
        // K=2 pools u1,u2: 1→2, 0→1, 3→1 → [1, 0, 3]
        let ds = dataset(
            vec![
                vec![vec![0, 1, 2], vec![]],
                vec![vec![0, 1], vec![]],
                vec![vec![1, 3], vec![]],
                vec![vec![4], vec![]],
            ],
            6,
        );
        assert_eq!(baseline_tbknn(&ds, 1, 0, 3, 2).unwrap(), vec![1, 0, 3]);
        // K=1: only u1 → [0, 1], then zero-score ids ascending
        assert_eq!(baseline_tbknn(&ds, 1, 0, 3, 1).unwrap(), vec![0, 1, 2]);
    }
}
