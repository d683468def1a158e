//! LIBSVM text ingestion and per-agent partitioning.

use super::{AgentData, Dataset};
use crate::error::ProblemError;
use crate::linalg::Vector;
use crate::rng::{stream, Purpose};
use rand::seq::SliceRandom;
use std::collections::BTreeMap;
use std::io::BufRead;

/// One parsed line: a binary label and 1-based sparse features.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRecord {
    pub label: f64,
    pub features: BTreeMap<usize, f64>,
}

/// Parse `<label> <index>:<value> ...` lines. Labels `<= 0` map to 0, all
/// others to 1.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Vec<SparseRecord>, ProblemError> {
    parse_libsvm_with(reader, None)
}

/// As [`parse_libsvm`], additionally mapping `negative_label` to class 0.
pub fn parse_libsvm_with<R: BufRead>(reader: R, negative_label: Option<f64>) -> Result<Vec<SparseRecord>, ProblemError> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line_no = lineno + 1;
        let err = |message: String| ProblemError::Parse { line: line_no, message };
        let line = line.map_err(|e| err(e.to_string()))?;
        let mut tokens = line.split_whitespace();
        let Some(label_tok) = tokens.next() else { continue };
        let raw: f64 = label_tok.parse().map_err(|_| err(format!("invalid label `{label_tok}`")))?;
        let label = if raw <= 0.0 || Some(raw) == negative_label { 0.0 } else { 1.0 };
        let mut features = BTreeMap::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| err(format!("malformed token `{tok}`")))?;
            let idx: usize = idx.parse().map_err(|_| err(format!("invalid index in `{tok}`")))?;
            if idx == 0 {
                return Err(err(format!("indices are 1-based, found `{tok}`")));
            }
            if idx <= last {
                return Err(err(format!("index {idx} does not increase (previous {last})")));
            }
            let val: f64 = val.parse().map_err(|_| err(format!("non-numeric value in `{tok}`")))?;
            features.insert(idx, val);
            last = idx;
        }
        out.push(SparseRecord { label, features });
    }
    Ok(out)
}

/// Dense dataset over the largest index seen.
pub fn densify(records: &[SparseRecord]) -> Dataset {
    let dim = records.iter().filter_map(|r| r.features.keys().next_back().copied()).max().unwrap_or(0);
    let mut data = Dataset::default();
    for r in records {
        let mut v = Vector::zeros(dim);
        for (&i, &x) in &r.features {
            v[i - 1] = x;
        }
        data.points.push(v);
        data.labels.push(r.label);
    }
    data
}

/// Sizes of `k` contiguous shards of `n` items; the remainder goes to the
/// first shards.
pub fn shard_sizes(n: usize, k: usize) -> Vec<usize> {
    let (base, rem) = (n / k, n % k);
    (0..k).map(|i| base + usize::from(i < rem)).collect()
}

fn shard(data: &Dataset, order: &[usize], k: usize) -> Vec<Dataset> {
    let mut start = 0;
    shard_sizes(order.len(), k)
        .into_iter()
        .map(|len| {
            let d = data.subset(&order[start..start + len]);
            start += len;
            d
        })
        .collect()
}

/// Shuffle by `seed`, split into training/validation by `train_ratio`, then
/// deal each part into `k` contiguous shards.
pub fn split_partition(data: &Dataset, k: usize, seed: u64, train_ratio: f64) -> Result<Vec<AgentData>, ProblemError> {
    let n = data.len();
    if k == 0 || k > n {
        return Err(ProblemError::TooManyAgents { k, size: n });
    }
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(ProblemError::InvalidParameter(format!("train_ratio must lie in (0, 1), got {train_ratio}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Purpose::Shuffle, 0, 0, 0));
    let n_train = ((n as f64) * train_ratio).round() as usize;
    let (tr, va) = order.split_at(n_train);
    if tr.len() < k {
        return Err(ProblemError::TooManyAgents { k, size: tr.len() });
    }
    if va.len() < k {
        return Err(ProblemError::TooManyAgents { k, size: va.len() });
    }
    let train = shard(data, tr, k);
    let val = shard(data, va, k);
    Ok(train.into_iter().zip(val).map(|(train, val)| AgentData { train, val }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Vec<SparseRecord>, ProblemError> {
        parse_libsvm(s.as_bytes())
    }

    #[test]
    fn parses_records() {
        let r = parse("1 1:0.5 3:-2\n").unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].label, 1.0);
        assert_eq!(r[0].features, BTreeMap::from([(1, 0.5), (3, -2.0)]));

        let r = parse("-1 2:1\n").unwrap();
        assert_eq!(r[0].label, 0.0);
        assert_eq!(r[0].features, BTreeMap::from([(2, 1.0)]));
    }

    #[test]
    fn skips_blank_lines_and_maps_negative_class() {
        let r = parse_libsvm_with("2 1:1\n\n   \n1 2:3\n".as_bytes(), Some(2.0)).unwrap();
        assert_eq!(r.iter().map(|r| r.label).collect::<Vec<_>>(), vec![0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_lines() {
        assert_eq!(
            parse("1 3:1 2:4\n"),
            Err(ProblemError::Parse { line: 1, message: "index 2 does not increase (previous 3)".into() })
        );
        assert!(matches!(parse("1 1:1\n1 2:x\n"), Err(ProblemError::Parse { line: 2, .. })));
        assert!(matches!(parse("1 12\n"), Err(ProblemError::Parse { line: 1, .. })));
        assert!(matches!(parse("one 1:1\n"), Err(ProblemError::Parse { line: 1, .. })));
        assert!(matches!(parse("1 0:1\n"), Err(ProblemError::Parse { line: 1, .. })));
    }

    #[test]
    fn densifies_to_max_index() {
        let d = densify(&parse("1 1:0.5 3:-2\n0 2:1\n").unwrap());
        assert_eq!(d.dim(), Some(3));
        assert_eq!(d.points[0].as_slice(), &[0.5, 0.0, -2.0]);
        assert_eq!(d.points[1].as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn shard_size_rule() {
        assert_eq!(shard_sizes(10, 2), vec![5, 5]);
        assert_eq!(shard_sizes(10, 3), vec![4, 3, 3]);
    }

    #[test]
    fn partition_is_deterministic_and_complete() {
        let data = Dataset::synthetic(40, 3, 2);
        let a = split_partition(&data, 3, 17, 0.5).unwrap();
        let b = split_partition(&data, 3, 17, 0.5).unwrap();
        assert_eq!(a, b);
        let total: usize = a.iter().map(|p| p.train.len() + p.val.len()).sum();
        assert_eq!(total, 40);
        assert_eq!(a.iter().map(|p| p.train.len()).collect::<Vec<_>>(), vec![7, 7, 6]);
        let c = split_partition(&data, 3, 18, 0.5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn partition_rejects_too_many_agents() {
        let data = Dataset::synthetic(5, 2, 0);
        assert!(matches!(split_partition(&data, 6, 0, 0.5), Err(ProblemError::TooManyAgents { .. })));
    }
}
