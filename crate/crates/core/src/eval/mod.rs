//! Top-N metrics, the non-neural baselines and the per-row evaluation report.

mod baselines;
mod report;

use std::collections::BTreeSet;

pub use baselines::{
    baseline_tbknn, baseline_timepop, evaluate_baselines, tbknn_lists, TbknnNeighbours, DEFAULT_TBKNN_K,
};
pub use report::{Aggregate, EvalReport, EvalRow, AGGREGATE_HEADER, REPORT_HEADER};

use crate::data::ItemId;
use crate::error::{Error, Result};

fn check_truth(truth: &BTreeSet<ItemId>) -> Result<()> {
    if truth.is_empty() {
        return Err(Error::Validation("metric needs a nonempty ground-truth set".into()));
    }
    Ok(())
}

/// `|topn ∩ truth| / min(N, |truth|)` with `N = topn.len()`.
pub fn hit_ratio(topn: &[ItemId], truth: &BTreeSet<ItemId>) -> Result<f64> {
    check_truth(truth)?;
    if topn.is_empty() {
        return Ok(0.0);
    }
    let hits = topn.iter().filter(|i| truth.contains(i)).count();
    Ok(hits as f64 / topn.len().min(truth.len()) as f64)
}

fn discount(position: usize) -> f64 {
    1.0 / ((position + 2) as f64).log2()
}

/// Binary-relevance NDCG with a `log2(p + 2)` discount on 0-based positions.
pub fn ndcg(topn: &[ItemId], truth: &BTreeSet<ItemId>) -> Result<f64> {
    check_truth(truth)?;
    if topn.is_empty() {
        return Ok(0.0);
    }
    let dcg: f64 = topn
        .iter()
        .enumerate()
        .filter(|(_, i)| truth.contains(i))
        .map(|(p, _)| discount(p))
        .sum();
    let idcg: f64 = (0..topn.len().min(truth.len())).map(discount).sum();
    Ok(dcg / idcg)
}

/// Mean self-information `-log2((c_i + 1) / (total + M))` of the listed items,
/// where `counts` are per-item interaction counts from earlier intervals.
pub fn novelty(topn: &[ItemId], counts: &[u64]) -> f64 {
    if topn.is_empty() {
        return 0.0;
    }
    let total: u64 = counts.iter().sum();
    let denom = (total + counts.len() as u64) as f64;
    let sum: f64 = topn
        .iter()
        .map(|&i| -((counts[i as usize] + 1) as f64 / denom).log2())
        .sum();
    sum / topn.len() as f64
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Mean pairwise `1 - cos` between the listed items' topic vectors, clamped
/// to `[0, 1]`. `None` for lists shorter than two.
pub fn diversity(topn: &[ItemId], item_topics: &[Vec<f64>]) -> Option<f64> {
    if topn.len() < 2 {
        return None;
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (k, &i) in topn.iter().enumerate() {
        for &j in &topn[k + 1..] {
            sum += 1.0 - cosine(&item_topics[i as usize], &item_topics[j as usize]);
            pairs += 1;
        }
    }
    Some((sum / pairs as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[ItemId]) -> BTreeSet<ItemId> {
        items.iter().copied().collect()
    }

    #[test]
    fn hit_ratio_fixtures() {
        assert_eq!(hit_ratio(&[1, 2, 3], &set(&[2, 3])).unwrap(), 1.0);
        assert_eq!(hit_ratio(&[1, 2, 3], &set(&[4])).unwrap(), 0.0);
        let hr = hit_ratio(&[1, 2, 3], &set(&[2, 5, 7, 9, 11])).unwrap();
        assert!((hr - 1.0 / 3.0).abs() < 1e-15);
        assert!(hit_ratio(&[1], &set(&[])).is_err());
    }

    #[test]
    fn ndcg_fixtures() {
        assert_eq!(ndcg(&[4, 1, 2], &set(&[4])).unwrap(), 1.0);
        let v = ndcg(&[1, 4, 2], &set(&[4])).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg(&[1, 2], &set(&[4])).unwrap(), 0.0);
        assert_eq!(ndcg(&[5, 6, 1], &set(&[6, 5, 9])).unwrap(), ndcg(&[6, 5, 1], &set(&[5, 6, 9])).unwrap());
    }

    #[test]
    fn novelty_fixtures() {
        let uniform = [2u64, 2, 2];
        let expected = -(3.0f64 / 9.0).log2();
        assert!((novelty(&[0, 1, 2], &uniform) - expected).abs() < 1e-15);
        // counts {a:3, b:1}, M=2, total=4
        let counts = [3u64, 1];
        let expected = (-(4.0f64 / 6.0).log2() - (2.0f64 / 6.0).log2()) / 2.0;
        assert!((novelty(&[0, 1], &counts) - expected).abs() < 1e-12);
        let with_unseen = [5u64, 0];
        assert!(novelty(&[1], &with_unseen) > novelty(&[0], &with_unseen));
    }

    #[test]
    fn diversity_fixtures() {
        let topics = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
        assert_eq!(diversity(&[0, 1], &topics), Some(0.0));
        assert_eq!(diversity(&[0, 2], &topics), Some(1.0));
        assert_eq!(diversity(&[0], &topics), None);
        // cos(0,2)=0, cos(0,3)=0.6, cos(2,3)=0.8
        let d = diversity(&[0, 2, 3], &topics).unwrap();
        assert!((d - (1.0 + 0.4 + 0.2) / 3.0).abs() < 1e-12);
    }
}
