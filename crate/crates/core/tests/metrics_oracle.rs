use std::collections::BTreeSet;

use cngan::eval::{diversity, hit_ratio, ndcg, novelty};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FIXTURES: usize = 1000;
const TOL: f64 = 1e-12;

struct Fixture {
    topn: Vec<u32>,
    truth: Vec<u32>,
    counts: Vec<u64>,
    topics: Vec<Vec<f64>>,
}

fn fixture(rng: &mut ChaCha8Rng) -> Fixture {
    let m = rng.random_range(5..60usize);
    let k = rng.random_range(1..8usize);
    let n = rng.random_range(1..=m.min(20));
    let mut pool: Vec<u32> = (0..m as u32).collect();
    for i in (1..pool.len()).rev() {
        pool.swap(i, rng.random_range(0..=i));
    }
    let topn = pool[..n].to_vec();
    let mut truth: Vec<u32> = (0..rng.random_range(1..=m.min(15)))
        .map(|_| rng.random_range(0..m as u32))
        .collect();
    truth.sort();
    truth.dedup();
    let counts = (0..m).map(|_| rng.random_range(0..50u64)).collect();
    let topics = (0..m)
        .map(|_| (0..k).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() }).collect())
        .collect();
    Fixture { topn, truth, counts, topics }
}

fn oracle_hr(f: &Fixture) -> f64 {
    let mut hits = 0.0;
    for item in &f.topn {
        for t in &f.truth {
            if item == t {
                hits += 1.0;
            }
        }
    }
    let denom = if f.topn.len() < f.truth.len() { f.topn.len() } else { f.truth.len() };
    hits / denom as f64
}

fn oracle_ndcg(f: &Fixture) -> f64 {
    let mut dcg = 0.0;
    for (rank, item) in f.topn.iter().enumerate() {
        if f.truth.contains(item) {
            dcg += 1.0 / (rank as f64 + 2.0).ln() * 2f64.ln();
        }
    }
    let ideal_hits = f.topn.len().min(f.truth.len());
    let mut idcg = 0.0;
    for rank in 0..ideal_hits {
        idcg += 2f64.ln() / (rank as f64 + 2.0).ln();
    }
    dcg / idcg
}

fn oracle_novelty(f: &Fixture) -> f64 {
    let mut total = 0.0;
    for c in &f.counts {
        total += *c as f64;
    }
    let mut acc = 0.0;
    for item in &f.topn {
        let p = (f.counts[*item as usize] as f64 + 1.0) / (total + f.counts.len() as f64);
        acc -= p.ln() / 2f64.ln();
    }
    acc / f.topn.len() as f64
}

fn oracle_diversity(f: &Fixture) -> Option<f64> {
    if f.topn.len() < 2 {
        return None;
    }
    let mut acc = 0.0;
    let mut pairs = 0.0;
    for a in 0..f.topn.len() {
        for b in 0..a {
            let x = &f.topics[f.topn[a] as usize];
            let y = &f.topics[f.topn[b] as usize];
            let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
            for d in 0..x.len() {
                xy += x[d] * y[d];
                xx += x[d] * x[d];
                yy += y[d] * y[d];
            }
            let cos = if xx == 0.0 || yy == 0.0 { 0.0 } else { xy / (xx.sqrt() * yy.sqrt()) };
            acc += 1.0 - cos;
            pairs += 1.0;
        }
    }
    Some((acc / pairs).clamp(0.0, 1.0))
}

#[test]
pub fn metrics_match_brute_force_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..FIXTURES {
        let f = fixture(&mut rng);
        let truth: BTreeSet<u32> = f.truth.iter().copied().collect();
        let hr = hit_ratio(&f.topn, &truth).unwrap();
        let nd = ndcg(&f.topn, &truth).unwrap();
        let nov = novelty(&f.topn, &f.counts);
        let div = diversity(&f.topn, &f.topics);
        assert!((hr - oracle_hr(&f)).abs() <= TOL, "hr case {case}");
        assert!((nd - oracle_ndcg(&f)).abs() <= TOL, "ndcg case {case}");
        assert!((nov - oracle_novelty(&f)).abs() <= TOL, "novelty case {case}");
        match (div, oracle_diversity(&f)) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= TOL, "diversity case {case}: {a} vs {b}"),
            (None, None) => {}
            other => panic!("diversity case {case}: {other:?}"),
        }
    }
}
