//! Leave-one-out ranking against 99 sampled negatives, HR@k and NDCG@k.

mod export;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_eval_candidates, InteractionDataset, Split, EVAL_NEGATIVES};
use crate::error::{Error, Result};
use crate::model::{GroupLabels, Model, Objective};

pub use export::{export_embeddings, read_export, write_export, ExportRow};

/// Largest cutoff reported.
pub const MAX_K: usize = 10;

/// Pairs scored per work unit.
const EVAL_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankResult {
    pub user: u32,
    pub test_item: u32,
    /// 1 is best.
    pub rank: usize,
}

impl RankResult {
    pub fn hit(&self, k: usize) -> bool {
        self.rank <= k
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        if self.hit(k) {
            1.0 / ((self.rank + 1) as f64).log2()
        } else {
            0.0
        }
    }
}

/// `1 + #{j ≠ target : scores[j] ≥ scores[target]}`; the target loses ties.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| j != target && s >= t)
        .count()
}

/// A model frozen for scoring, with its hard group labels precomputed.
pub struct Snapshot<'a> {
    pub model: &'a Model,
    pub objective: Objective,
    labels: Option<GroupLabels>,
}

impl<'a> Snapshot<'a> {
    pub fn new(model: &'a Model, objective: Objective) -> Result<Self> {
        let labels = match objective {
            Objective::Basic => None,
            Objective::Dual(_) => Some(model.group_labels()?),
        };
        Ok(Self {
            model,
            objective,
            labels,
        })
    }

    pub fn score(&self, pairs: &[(u32, u32)]) -> Result<Vec<f64>> {
        self.model.score_pairs(pairs, self.objective, self.labels.as_ref())
    }
}

fn check_candidates(candidates: &[u32], test_item: u32) -> Result<usize> {
    let mut seen = HashSet::with_capacity(candidates.len());
    if let Some(dup) = candidates.iter().find(|c| !seen.insert(**c)) {
        return Err(Error::Protocol(format!("candidate item {dup} appears twice")));
    }
    candidates
        .iter()
        .position(|&c| c == test_item)
        .ok_or_else(|| Error::Protocol(format!("test item {test_item} missing from candidates")))
}

/// Scores `candidates` for `user` and ranks `test_item` among them.
pub fn rank_candidates(snapshot: &Snapshot, user: u32, candidates: &[u32], test_item: u32) -> Result<RankResult> {
    let target = check_candidates(candidates, test_item)?;
    let pairs: Vec<(u32, u32)> = candidates.iter().map(|&c| (user, c)).collect();
    let scores = snapshot.score(&pairs)?;
    Ok(RankResult {
        user,
        test_item,
        rank: rank_of(&scores, target),
    })
}

/// HR@k and NDCG@k for `k = 1..=MAX_K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub num_test: usize,
    /// `hr[k - 1]` is HR@k.
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
}

impl MetricReport {
    pub fn hr_at(&self, k: usize) -> f64 {
        self.hr[k - 1]
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg[k - 1]
    }
}

pub fn compute_metrics(label: &str, results: &[RankResult]) -> Result<MetricReport> {
    if results.is_empty() {
        return Err(Error::Empty("no ranking results to aggregate".into()));
    }
    let n = results.len() as f64;
    let mut hr = Vec::with_capacity(MAX_K);
    let mut ndcg = Vec::with_capacity(MAX_K);
    for k in 1..=MAX_K {
        hr.push(results.iter().filter(|r| r.hit(k)).count() as f64 / n);
        ndcg.push(results.iter().map(|r| r.ndcg(k)).sum::<f64>() / n);
    }
    Ok(MetricReport {
        label: label.to_string(),
        num_test: results.len(),
        hr,
        ndcg,
    })
}

/// Ranks every held-out pair of `split`. Candidates depend only on
/// `(seed, user, item)`; chunks are scored in parallel and collected in
/// order, so the result does not depend on the thread count.
pub fn rank_split(snapshot: &Snapshot, dataset: &InteractionDataset, split: Split, seed: u64) -> Result<Vec<RankResult>> {
    if split == Split::Train {
        return Err(Error::Usage("evaluation runs on the validation or test split".into()));
    }
    let pairs = dataset.pairs(split);
    if pairs.is_empty() {
        return Err(Error::Empty(format!("{split:?} split has no interactions")));
    }
    let chunks: Vec<Result<Vec<RankResult>>> = pairs
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let mut lists = Vec::with_capacity(chunk.len());
            let mut scored = Vec::with_capacity(chunk.len() * (EVAL_NEGATIVES + 1));
            for &(u, v) in chunk {
                let c = build_eval_candidates(dataset, (u, v), EVAL_NEGATIVES, seed)?;
                let target = check_candidates(&c, v)?;
                scored.extend(c.iter().map(|&i| (u, i)));
                lists.push((u, v, target, c.len()));
            }
            let scores = snapshot.score(&scored)?;
            let mut offset = 0;
            Ok(lists
                .into_iter()
                .map(|(user, test_item, target, len)| {
                    let rank = rank_of(&scores[offset..offset + len], target);
                    offset += len;
                    RankResult { user, test_item, rank }
                })
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(pairs.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

pub fn evaluate(
    model: &Model,
    objective: Objective,
    dataset: &InteractionDataset,
    split: Split,
    seed: u64,
    label: &str,
) -> Result<MetricReport> {
    let snapshot = Snapshot::new(model, objective)?;
    compute_metrics(label, &rank_split(&snapshot, dataset, split, seed)?)
}

/// Metrics as rows and reports as columns.
pub fn format_table(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<10}", "metric");
    for r in reports {
        let _ = write!(out, "{:>10}", r.label);
    }
    out.push('\n');
    let rows: [(&str, usize, bool); 4] = [("HR@5", 5, true), ("HR@10", 10, true), ("NDCG@5", 5, false), ("NDCG@10", 10, false)];
    for (name, k, is_hr) in rows {
        let _ = write!(out, "{name:<10}");
        for r in reports {
            let v = if is_hr { r.hr_at(k) } else { r.ndcg_at(k) };
            let _ = write!(out, "{v:>10.5}");
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<10}", "#test");
    for r in reports {
        let _ = write!(out, "{:>10}", r.num_test);
    }
    out.push('\n');
    out
}

/// One line per report: `variant,num_test,HR@1..HR@10,NDCG@1..NDCG@10`.
pub fn format_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("variant,num_test");
    for k in 1..=MAX_K {
        let _ = write!(out, ",HR@{k}");
    }
    for k in 1..=MAX_K {
        let _ = write!(out, ",NDCG@{k}");
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{},{}", r.label, r.num_test);
        for v in r.hr.iter().chain(&r.ndcg) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    std::fs::write(path, format_csv(reports)).map_err(|e| Error::io(path, e))
}

/// Fraction of entities whose cluster's majority reference label equals
/// their own reference label.
pub fn purity(clusters: &[usize], reference: &[usize]) -> f64 {
    assert_eq!(clusters.len(), reference.len());
    if clusters.is_empty() {
        return 0.0;
    }
    let mut counts: std::collections::BTreeMap<(usize, usize), usize> = Default::default();
    for (&c, &r) in clusters.iter().zip(reference) {
        *counts.entry((c, r)).or_default() += 1;
    }
    let mut best: std::collections::BTreeMap<usize, usize> = Default::default();
    for (&(c, _), &n) in &counts {
        let b = best.entry(c).or_default();
        *b = (*b).max(n);
    }
    best.values().sum::<usize>() as f64 / clusters.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn result(rank: usize) -> RankResult {
        RankResult {
            user: 0,
            test_item: 0,
            rank,
        }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_of(&[0.1, 0.9, 0.3], 1), 1);
        assert_eq!(rank_of(&[0.5, 0.9, 0.5], 0), 3);
        assert_eq!(rank_of(&[0.2, 0.9, 0.9], 1), 2);
    }

    #[test]
    fn rank_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            // coarse values force ties
            let scores: Vec<f64> = (0..100).map(|_| (rng.gen_range(0..30) as f64) / 30.0).collect();
            let target = rng.gen_range(0..100);
            let mut order: Vec<usize> = (0..100).collect();
            // descending score, target last among equals
            order.sort_by(|&a, &b| {
                scores[b]
                    .partial_cmp(&scores[a])
                    .unwrap()
                    .then((a == target).cmp(&(b == target)))
            });
            let want = order.iter().position(|&j| j == target).unwrap() + 1;
            assert_eq!(rank_of(&scores, target), want);
        }
    }

    #[test]
    fn metric_examples() {
        let r = compute_metrics("x", &[result(1)]).unwrap();
        assert!(r.hr.iter().chain(&r.ndcg).all(|&v| v == 1.0));
        let r = compute_metrics("x", &[result(3)]).unwrap();
        assert_eq!(r.ndcg_at(10), 0.5);
        assert_eq!(r.hr_at(2), 0.0);
        assert_eq!(r.hr_at(3), 1.0);
        assert!(compute_metrics("x", &[]).is_err());
    }

    #[test]
    fn purity_examples() {
        assert_eq!(purity(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert_eq!(purity(&[0, 0, 0, 0], &[1, 1, 0, 0]), 0.5);
        assert_eq!(purity(&[0, 1, 0, 1], &[0, 0, 0, 1]), 0.75);
    }

    #[test]
    fn candidate_protocol_errors() {
        assert!(matches!(check_candidates(&[1, 2, 2], 1), Err(Error::Protocol(_))));
        assert!(matches!(check_candidates(&[1, 2, 3], 4), Err(Error::Protocol(_))));
        assert_eq!(check_candidates(&[1, 2, 3], 3).unwrap(), 2);
    }

    #[test]
    fn csv_and_table_layout() {
        let a = compute_metrics("dbrec-o", &[result(2), result(20)]).unwrap();
        let b = compute_metrics("dbrec", &[result(1), result(7)]).unwrap();
        let csv = format_csv(&[a.clone(), b.clone()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), 22);
        assert!(lines[2].starts_with("dbrec,2,0.5,"));
        let table = format_table(&[a, b]);
        assert!(table.lines().next().unwrap().contains("dbrec-o"));
        assert_eq!(table.lines().count(), 6);
    }
}
