//! Ranking-quality measures over cumulative ground-truth bins.

use crate::error::{Error, Result};
use crate::space::ArchId;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::HashSet;

/// Cumulative bins, percent of the population by ground-truth rank.
pub const BINS: [u32; 6] = [10, 20, 30, 40, 50, 100];

/// Average (fractional) ranks, 1-based; ties share the mean of their span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
/// Undefined (an error) when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Domain(format!(
            "spearman needs equal lengths >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Domain("spearman input contains NaN".into()));
    }
    pearson(&average_ranks(a), &average_ranks(b))
        .ok_or_else(|| Error::Domain("spearman undefined: constant ranking".into()))
}

/// Indices ordered best first: score descending, then id ascending.
fn order_desc(ids: &[ArchId], scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    idx
}

fn top_k(p: f64, n: usize) -> Result<usize> {
    let k = (p * n as f64 - 1e-9).ceil() as usize;
    if !(p > 0.0 && p <= 1.0) || k == 0 {
        return Err(Error::Domain(format!("top fraction {p} of {n} selects nothing")));
    }
    Ok(k.min(n))
}

/// Overlap of the top `ceil(p * n)` by ground truth and by method,
/// divided by that count. `p` is a fraction in `(0, 1]`.
pub fn common_ratio(ids: &[ArchId], gt: &[f64], method: &[f64], p: f64) -> Result<f64> {
    if ids.len() != gt.len() || ids.len() != method.len() {
        return Err(Error::Domain("common_ratio inputs differ in length".into()));
    }
    let k = top_k(p, ids.len())?;
    let top_gt: HashSet<usize> = order_desc(ids, gt).into_iter().take(k).collect();
    let common = order_desc(ids, method).into_iter().take(k).filter(|i| top_gt.contains(i)).count();
    Ok(common as f64 / k as f64)
}

/// Indices of points not dominated in `(cost, quality)`: lower cost and
/// higher quality are better.
pub fn pareto_frontier(points: &[(f64, f64)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        points[a]
            .0
            .total_cmp(&points[b].0)
            .then(points[b].1.total_cmp(&points[a].1))
    });
    let mut out = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut i = 0;
    while i < idx.len() {
        // Group equal costs; within a group only the best quality can survive.
        let mut j = i;
        while j + 1 < idx.len() && points[idx[j + 1]].0 == points[idx[i]].0 {
            j += 1;
        }
        let top = points[idx[i]].1;
        if top > best {
            out.extend(idx[i..=j].iter().copied().filter(|&k| points[k].1 == top));
            best = top;
        }
        i = j + 1;
    }
    out.sort_unstable();
    out
}

/// One architecture's ground truth and its result under some method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub arch: ArchId,
    pub gt: f64,
    pub score: Option<f64>,
    pub cost_units: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub method: String,
    pub bin_percent: u32,
    pub spearman: Option<f64>,
    pub common_ratio: f64,
    pub avg_cost_units: f64,
    pub avg_wall_ms: f64,
    pub n: usize,
    /// Bin members without a score, left out of the correlation.
    pub n_failed: usize,
}

/// Metrics per cumulative bin. Bin membership is by ground-truth rank;
/// within a bin, Spearman compares ground truth and method scores of the
/// members, and costs are averaged over the members.
pub fn bin_report(method: &str, rows: &[MethodRow]) -> Result<Vec<BinReport>> {
    let scored: Vec<&MethodRow> = rows.iter().filter(|r| r.score.is_some()).collect();
    if scored.is_empty() {
        return Err(Error::Domain(format!("{method}: no scored architectures")));
    }
    let ids: Vec<ArchId> = rows.iter().map(|r| r.arch).collect();
    let gt: Vec<f64> = rows.iter().map(|r| r.gt).collect();
    let by_gt = order_desc(&ids, &gt);
    let sids: Vec<ArchId> = scored.iter().map(|r| r.arch).collect();
    let sgt: Vec<f64> = scored.iter().map(|r| r.gt).collect();
    let sm: Vec<f64> = scored.iter().map(|r| r.score.expect("scored")).collect();
    BINS.iter()
        .map(|&pct| {
            let k = top_k(f64::from(pct) / 100.0, rows.len())?;
            let members: Vec<&MethodRow> = by_gt[..k].iter().map(|&i| &rows[i]).collect();
            let with_score: Vec<&&MethodRow> = members.iter().filter(|r| r.score.is_some()).collect();
            let spearman = if with_score.len() >= 2 {
                let a: Vec<f64> = with_score.iter().map(|r| r.gt).collect();
                let b: Vec<f64> = with_score.iter().map(|r| r.score.expect("scored")).collect();
                spearman(&a, &b).ok()
            } else {
                None
            };
            let n = members.len() as f64;
            Ok(BinReport {
                method: method.to_string(),
                bin_percent: pct,
                spearman,
                common_ratio: common_ratio(&sids, &sgt, &sm, f64::from(pct) / 100.0)?,
                avg_cost_units: members.iter().map(|r| r.cost_units as f64).sum::<f64>() / n,
                avg_wall_ms: members.iter().map(|r| r.wall_ms as f64).sum::<f64>() / n,
                n: members.len(),
                n_failed: members.len() - with_score.len(),
            })
        })
        .collect()
}

/// CSV columns of [`BinReport::csv_row`].
pub const BIN_CSV_HEADER: [&str; 8] =
    ["method", "bin_percent", "spearman", "common_ratio", "avg_cost_units", "avg_wall_ms", "n", "n_failed"];

impl BinReport {
    /// One CSV row; an undefined correlation is an empty field.
    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.method.clone(),
            self.bin_percent.to_string(),
            self.spearman.map(|s| format!("{s:.6}")).unwrap_or_default(),
            format!("{:.6}", self.common_ratio),
            format!("{:.1}", self.avg_cost_units),
            format!("{:.1}", self.avg_wall_ms),
            self.n.to_string(),
            self.n_failed.to_string(),
        ]
    }
}
