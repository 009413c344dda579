use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{diversity, hit_ratio, ndcg, novelty};
use crate::data::{ItemId, UserId};
use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "variant,interval,user,N,hr,ndcg,novelty,diversity";
pub const AGGREGATE_HEADER: &str = "variant,N,rows,hr,ndcg,novelty,diversity";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub variant: String,
    /// The predicted interval.
    pub interval: usize,
    pub user: UserId,
    pub n: usize,
    pub hr: f64,
    pub ndcg: f64,
    pub novelty: f64,
    pub diversity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub variant: String,
    pub n: usize,
    pub rows: usize,
    pub hr: f64,
    pub ndcg: f64,
    pub novelty: f64,
    pub diversity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// (user, interval) cells skipped because the user had no ground truth.
    pub skipped_empty_truth: usize,
    /// Rows skipped because the list was too short for diversity.
    pub skipped_short_list: usize,
}

impl EvalReport {
    /// Scores one list against its truth for every cutoff in `ns` (prefixes of
    /// `ranked`). `truth` must be nonempty; the caller counts empty cells.
    #[allow(clippy::too_many_arguments)]
    pub fn score_lists(
        &mut self,
        variant: &str,
        interval: usize,
        user: UserId,
        ns: &[usize],
        ranked: &[ItemId],
        truth: &BTreeSet<ItemId>,
        counts: &[u64],
        item_topics: &[Vec<f64>],
    ) -> Result<()> {
        for &n in ns {
            let list = &ranked[..n.min(ranked.len())];
            let Some(div) = diversity(list, item_topics) else {
                self.skipped_short_list += 1;
                continue;
            };
            self.rows.push(EvalRow {
                variant: variant.to_string(),
                interval,
                user,
                n,
                hr: hit_ratio(list, truth)?,
                ndcg: ndcg(list, truth)?,
                novelty: novelty(list, counts),
                diversity: div,
            });
        }
        Ok(())
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
        self.skipped_empty_truth += other.skipped_empty_truth;
        self.skipped_short_list += other.skipped_short_list;
    }

    /// Per-(variant, N) means over all rows, ordered by variant then N.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut acc: BTreeMap<(&str, usize), (usize, [f64; 4])> = BTreeMap::new();
        for r in &self.rows {
            let e = acc.entry((r.variant.as_str(), r.n)).or_default();
            e.0 += 1;
            for (s, v) in e.1.iter_mut().zip([r.hr, r.ndcg, r.novelty, r.diversity]) {
                *s += v;
            }
        }
        acc.into_iter()
            .map(|((variant, n), (rows, s))| {
                let k = rows as f64;
                Aggregate {
                    variant: variant.to_string(),
                    n,
                    rows,
                    hr: s[0] / k,
                    ndcg: s[1] / k,
                    novelty: s[2] / k,
                    diversity: s[3] / k,
                }
            })
            .collect()
    }

    pub fn aggregate(&self, variant: &str, n: usize) -> Option<Aggregate> {
        self.aggregates().into_iter().find(|a| a.variant == variant && a.n == n)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{REPORT_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.variant, r.interval, r.user, r.n, r.hr, r.ndcg, r.novelty, r.diversity
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::parse(1, "header", "empty report"))?;
        if header.trim_end() != REPORT_HEADER {
            return Err(Error::parse(1, "header", format!("expected `{REPORT_HEADER}`")));
        }
        let mut report = EvalReport::default();
        for (k, line) in lines.enumerate() {
            let line = line?;
            let lineno = k + 2;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::parse(lineno, "row", format!("expected 8 fields, got {}", f.len())));
            }
            let num = |idx: usize, name: &str| -> Result<f64> {
                f[idx]
                    .parse::<f64>()
                    .map_err(|e| Error::parse(lineno, name, e.to_string()))
            };
            let int = |idx: usize, name: &str| -> Result<usize> {
                f[idx]
                    .parse::<usize>()
                    .map_err(|e| Error::parse(lineno, name, e.to_string()))
            };
            report.rows.push(EvalRow {
                variant: f[0].to_string(),
                interval: int(1, "interval")?,
                user: f[2]
                    .parse::<UserId>()
                    .map_err(|e| Error::parse(lineno, "user", e.to_string()))?,
                n: int(3, "N")?,
                hr: num(4, "hr")?,
                ndcg: num(5, "ndcg")?,
                novelty: num(6, "novelty")?,
                diversity: num(7, "diversity")?,
            });
        }
        Ok(report)
    }

    pub fn write_aggregates_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{AGGREGATE_HEADER}")?;
        for a in self.aggregates() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                a.variant, a.n, a.rows, a.hr, a.ndcg, a.novelty, a.diversity
            )?;
        }
        Ok(())
    }
}
