//! JSON-lines dataset format.
//!
//! Line 1 is a header `{"version":1,"U":..,"M":..,"K_t":..,"T":..,"item_topics":[[..],..]}`.
//! Every following line is one `(user, interval)` record:
//! `{"u":..,"t":..,"overlapped":..,"tn":[[k,v],..],"sn":[[k,v],..]|null,"items":[..]}`
//! with sparse `(topic, weight)` pairs. Reals are written with 17 significant
//! digits so a load/save cycle is byte-stable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::Value;

use super::{Dataset, ItemId, TopicalDistribution, UserId, UserTimeline};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u64 = 1;

fn fmt_real(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("write to string");
}

fn fmt_sparse(out: &mut String, d: &TopicalDistribution) {
    out.push('[');
    let mut first = true;
    for (k, &v) in d.values().iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        if !first {
            out.push(',');
        }
        first = false;
        write!(out, "[{k},").unwrap();
        fmt_real(out, v);
        out.push(']');
    }
    out.push(']');
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut w: W) -> Result<()> {
    let mut line = String::new();
    write!(
        line,
        "{{\"version\":{FORMAT_VERSION},\"U\":{},\"M\":{},\"K_t\":{},\"T\":{},\"item_topics\":[",
        dataset.num_users(),
        dataset.num_items,
        dataset.num_topics,
        dataset.num_intervals
    )
    .unwrap();
    for (i, row) in dataset.item_topics.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        line.push('[');
        for (k, &v) in row.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            fmt_real(&mut line, v);
        }
        line.push(']');
    }
    line.push_str("]}\n");
    w.write_all(line.as_bytes())?;

    for u in &dataset.users {
        for t in 0..dataset.num_intervals {
            line.clear();
            write!(
                line,
                "{{\"u\":{},\"t\":{t},\"overlapped\":{},\"tn\":",
                u.user_id, u.overlapped
            )
            .unwrap();
            fmt_sparse(&mut line, &u.target[t]);
            line.push_str(",\"sn\":");
            match u.source_at(t) {
                Some(d) => fmt_sparse(&mut line, d),
                None => line.push_str("null"),
            }
            line.push_str(",\"items\":[");
            for (n, i) in u.interactions[t].iter().enumerate() {
                if n > 0 {
                    line.push(',');
                }
                write!(line, "{i}").unwrap();
            }
            line.push_str("]}\n");
            w.write_all(line.as_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path)?;
    write_dataset(dataset, BufWriter::new(f))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(File::open(path)?)
}

fn field<'a>(obj: &'a Value, name: &str, line: usize) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| Error::parse(line, name, "missing field"))
}

fn as_usize(v: &Value, name: &str, line: usize) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::parse(line, name, "expected a non-negative integer"))
}

fn as_real(v: &Value, name: &str, line: usize) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::parse(line, name, "expected a number"))
}

fn parse_sparse(v: &Value, name: &str, k_t: usize, line: usize) -> Result<TopicalDistribution> {
    let pairs = v
        .as_array()
        .ok_or_else(|| Error::parse(line, name, "expected an array of [topic, weight] pairs"))?;
    let mut values = vec![0.0; k_t];
    for p in pairs {
        let pair = p
            .as_array()
            .filter(|a| a.len() == 2)
            .ok_or_else(|| Error::parse(line, name, "expected a [topic, weight] pair"))?;
        let k = as_usize(&pair[0], name, line)?;
        if k >= k_t {
            return Err(Error::parse(line, name, format!("topic {k} >= K_t={k_t}")));
        }
        values[k] = as_real(&pair[1], name, line)?;
    }
    TopicalDistribution::from_values(values).map_err(|e| Error::parse(line, name, e.to_string()))
}

struct Partial {
    overlapped: bool,
    target: Vec<Option<TopicalDistribution>>,
    source: Vec<Option<TopicalDistribution>>,
    items: Vec<Option<Vec<ItemId>>>,
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut lines = BufReader::new(reader).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::parse(1, "version", "empty file"))??;
    let header: Value =
        serde_json::from_str(&header_line).map_err(|e| Error::parse(1, "header", e.to_string()))?;
    let version = field(&header, "version", 1)?
        .as_u64()
        .ok_or_else(|| Error::parse(1, "version", "expected an integer"))?;
    if version != FORMAT_VERSION {
        return Err(Error::parse(1, "version", format!("unsupported version {version}")));
    }
    let n_users = as_usize(field(&header, "U", 1)?, "U", 1)?;
    let m = as_usize(field(&header, "M", 1)?, "M", 1)?;
    let k_t = as_usize(field(&header, "K_t", 1)?, "K_t", 1)?;
    let t_max = as_usize(field(&header, "T", 1)?, "T", 1)?;
    let rows = field(&header, "item_topics", 1)?
        .as_array()
        .ok_or_else(|| Error::parse(1, "item_topics", "expected an array"))?;
    if rows.len() != m {
        return Err(Error::parse(1, "item_topics", format!("{} rows, expected M={m}", rows.len())));
    }
    let mut item_topics = Vec::with_capacity(m);
    for row in rows {
        let r = row
            .as_array()
            .filter(|r| r.len() == k_t)
            .ok_or_else(|| Error::parse(1, "item_topics", format!("row must have K_t={k_t} entries")))?;
        item_topics.push(
            r.iter()
                .map(|v| as_real(v, "item_topics", 1))
                .collect::<Result<Vec<_>>>()?,
        );
    }

    let mut partial: BTreeMap<UserId, (usize, Partial)> = BTreeMap::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Value =
            serde_json::from_str(&line).map_err(|e| Error::parse(lineno, "record", e.to_string()))?;
        let u = as_usize(field(&rec, "u", lineno)?, "u", lineno)?;
        let uid = UserId::try_from(u).map_err(|_| Error::parse(lineno, "u", "user id too large"))?;
        let t = as_usize(field(&rec, "t", lineno)?, "t", lineno)?;
        if t >= t_max {
            return Err(Error::parse(lineno, "t", format!("interval {t} >= T={t_max}")));
        }
        let overlapped = field(&rec, "overlapped", lineno)?
            .as_bool()
            .ok_or_else(|| Error::parse(lineno, "overlapped", "expected a boolean"))?;
        let tn = parse_sparse(field(&rec, "tn", lineno)?, "tn", k_t, lineno)?;
        let sn_v = field(&rec, "sn", lineno)?;
        let sn = match (sn_v.is_null(), overlapped) {
            (true, false) => None,
            (false, true) => Some(parse_sparse(sn_v, "sn", k_t, lineno)?),
            (true, true) => return Err(Error::parse(lineno, "sn", "overlapped user needs source data")),
            (false, false) => {
                return Err(Error::parse(lineno, "sn", "non-overlapped user must have sn = null"))
            }
        };
        let mut items = field(&rec, "items", lineno)?
            .as_array()
            .ok_or_else(|| Error::parse(lineno, "items", "expected an array"))?
            .iter()
            .map(|v| {
                let i = as_usize(v, "items", lineno)?;
                if i >= m {
                    return Err(Error::parse(lineno, "items", format!("item {i} >= M={m}")));
                }
                Ok(i as ItemId)
            })
            .collect::<Result<Vec<_>>>()?;
        items.sort_unstable();
        items.dedup();

        let next_order = partial.len();
        let (_, p) = partial.entry(uid).or_insert_with(|| {
            (
                next_order,
                Partial {
                    overlapped,
                    target: vec![None; t_max],
                    source: vec![None; t_max],
                    items: vec![None; t_max],
                },
            )
        });
        if p.overlapped != overlapped {
            return Err(Error::parse(lineno, "overlapped", "inconsistent with earlier records"));
        }
        if p.target[t].is_some() {
            return Err(Error::parse(lineno, "t", format!("duplicate record for user {uid}")));
        }
        p.target[t] = Some(tn);
        p.source[t] = sn;
        p.items[t] = Some(items);
    }

    if partial.len() != n_users {
        return Err(Error::parse(1, "U", format!("header says {n_users} users, found {}", partial.len())));
    }
    let mut ordered: Vec<(usize, UserId, Partial)> =
        partial.into_iter().map(|(id, (ord, p))| (ord, id, p)).collect();
    ordered.sort_by_key(|(ord, _, _)| *ord);
    let mut users = Vec::with_capacity(ordered.len());
    for (_, id, p) in ordered {
        let missing = |what: &str| Error::Validation(format!("user {id}: missing {what} record"));
        let target = p
            .target
            .into_iter()
            .map(|d| d.ok_or_else(|| missing("interval")))
            .collect::<Result<Vec<_>>>()?;
        let interactions = p.items.into_iter().map(|i| i.unwrap_or_default()).collect();
        let source = if p.overlapped {
            Some(
                p.source
                    .into_iter()
                    .map(|d| d.ok_or_else(|| missing("source")))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        users.push(UserTimeline {
            user_id: id,
            overlapped: p.overlapped,
            target,
            source,
            interactions,
        });
    }
    Dataset::new(users, m, k_t, t_max, item_topics)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = concat!(
        "{\"version\":1,\"U\":2,\"M\":3,\"K_t\":2,\"T\":2,\"item_topics\":[[1,0],[0,1],[0.5,0.5]]}\n",
        "{\"u\":10,\"t\":0,\"overlapped\":true,\"tn\":[[0,0.25],[1,0.75]],\"sn\":[[1,1.0]],\"items\":[2,0]}\n",
        "{\"u\":10,\"t\":1,\"overlapped\":true,\"tn\":[],\"sn\":[],\"items\":[]}\n",
        "{\"u\":11,\"t\":1,\"overlapped\":false,\"tn\":[[0,1.0]],\"sn\":null,\"items\":[1]}\n",
        "{\"u\":11,\"t\":0,\"overlapped\":false,\"tn\":[[1,1.0]],\"sn\":null,\"items\":[]}\n",
    );

    #[test]
    fn hand_written_fixture_parses() {
        let ds = read_dataset(FIXTURE.as_bytes()).unwrap();
        assert_eq!((ds.num_users(), ds.num_items, ds.num_topics, ds.num_intervals), (2, 3, 2, 2));
        let u10 = ds.user(10).unwrap();
        assert!(u10.overlapped);
        assert_eq!(u10.target[0].values(), &[0.25, 0.75]);
        assert_eq!(u10.source_at(0).unwrap().values(), &[0.0, 1.0]);
        assert!(!u10.target[1].is_active());
        assert!(!u10.source_at(1).unwrap().is_active());
        assert_eq!(u10.interactions, vec![vec![0, 2], vec![]]);
        let u11 = ds.user(11).unwrap();
        assert!(u11.source.is_none());
        assert_eq!(u11.target[1].values(), &[1.0, 0.0]);
        assert_eq!(u11.interactions, vec![vec![], vec![1]]);
        assert_eq!(ds.item_topics[2], vec![0.5, 0.5]);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ds = read_dataset(FIXTURE.as_bytes()).unwrap();
        let mut a = Vec::new();
        write_dataset(&ds, &mut a).unwrap();
        let back = read_dataset(a.as_slice()).unwrap();
        assert_eq!(back, ds);
        let mut b = Vec::new();
        write_dataset(&back, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn active_vector_not_summing_to_one_is_rejected() {
        let bad = FIXTURE.replace("[[0,0.25],[1,0.75]]", "[[0,0.25],[1,0.65]]");
        let err = read_dataset(bad.as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "tn");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_records_report_line_and_field() {
        let bad = FIXTURE.replace("\"items\":[1]", "\"items\":[7]");
        match read_dataset(bad.as_bytes()).unwrap_err() {
            Error::Parse { line, field, .. } => assert_eq!((line, field.as_str()), (4, "items")),
            other => panic!("unexpected {other}"),
        }
        let bad = FIXTURE.replace("\"sn\":null,\"items\":[1]", "\"sn\":[[0,1.0]],\"items\":[1]");
        assert!(matches!(read_dataset(bad.as_bytes()), Err(Error::Parse { line: 4, .. })));
        let missing = FIXTURE.lines().take(4).collect::<Vec<_>>().join("\n");
        assert!(read_dataset(missing.as_bytes()).is_err());
    }

    #[test]
    fn reals_carry_seventeen_significant_digits() {
        let mut s = String::new();
        fmt_real(&mut s, 0.1);
        assert_eq!(s, "1.0000000000000001e-1");
        let v: f64 = s.parse().unwrap();
        assert_eq!(v, 0.1);
    }
}
