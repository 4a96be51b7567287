//! Unsampled all-item ranking metrics under leave-one-out.
//!
//! With exactly one held-out item per user, HR@N and Recall@N are the same
//! number; it is reported once, as `hr`.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataset::SplitDataset;
use crate::encoder::{score_all, EmbeddingTable};
use crate::error::{Error, Result};

pub const DEFAULT_CUTOFFS: [usize; 3] = [5, 10, 20];

/// Group boundaries on train interaction count: `<3`, `3-7`, `>7`.
pub const DEFAULT_GROUP_BOUNDARIES: [usize; 2] = [3, 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Validation,
    Test,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Validation => "validation",
            Phase::Test => "test",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "validation" | "valid" | "val" => Ok(Phase::Validation),
            "test" => Ok(Phase::Test),
            other => Err(Error::InvalidArgument(format!("unknown phase `{other}`"))),
        }
    }
}

/// HR and NDCG at each cutoff, parallel to `cutoffs`.
#[derive(Clone, Debug, PartialEq)]
pub struct CutoffMetrics {
    pub cutoffs: Vec<usize>,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
}

impl CutoffMetrics {
    /// Averages over 1-based ranks; `None` when there are no ranks.
    pub fn from_ranks(ranks: &[usize], cutoffs: &[usize]) -> Option<Self> {
        if ranks.is_empty() {
            return None;
        }
        let n = ranks.len() as f64;
        let mut hr = Vec::with_capacity(cutoffs.len());
        let mut ndcg = Vec::with_capacity(cutoffs.len());
        for &c in cutoffs {
            // fixed user order keeps the sums reproducible
            let (h, g) = ranks
                .iter()
                .fold((0.0, 0.0), |(h, g), &r| (h + hit_at(r, c), g + ndcg_at(r, c)));
            hr.push(h / n);
            ndcg.push(g / n);
        }
        Some(CutoffMetrics {
            cutoffs: cutoffs.to_vec(),
            hr,
            ndcg,
        })
    }

    pub fn hr_at(&self, cutoff: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == cutoff).map(|k| self.hr[k])
    }

    pub fn ndcg_at(&self, cutoff: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == cutoff).map(|k| self.ndcg[k])
    }
}

pub fn hit_at(rank: usize, cutoff: usize) -> f64 {
    if rank <= cutoff {
        1.0
    } else {
        0.0
    }
}

/// `1 / log2(rank + 1)` inside the cutoff, else 0.
pub fn ndcg_at(rank: usize, cutoff: usize) -> f64 {
    if rank <= cutoff {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Users whose train-interaction count lies in `[lower, upper)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupMetrics {
    pub label: String,
    pub lower: usize,
    pub upper: Option<usize>,
    pub n_users: usize,
    /// Absent when the group is empty.
    pub metrics: Option<CutoffMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub phase: Phase,
    pub overall: CutoffMetrics,
    pub n_users_evaluated: usize,
    pub groups: Vec<GroupMetrics>,
}

/// 1-based position of `target` among candidate scores. Items scoring above
/// the target, and items tying with it at a smaller index, rank ahead.
pub fn rank_in_scores(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < target))
        .count()
}

pub fn rank_of_target(
    e: &EmbeddingTable,
    n_users: usize,
    u: u32,
    target: u32,
    exclude: &[u32],
) -> Result<usize> {
    if exclude.contains(&target) {
        return Err(Error::InvalidArgument(format!(
            "target item {target} of user {u} is excluded from ranking"
        )));
    }
    let scores = score_all(e, n_users, u, exclude);
    Ok(rank_in_scores(&scores, target as usize))
}

/// Rank of each user's held-out item for `phase`. Candidates exclude the
/// user's train items and, for the test phase, the validation item.
pub fn user_ranks(e: &EmbeddingTable, split: &SplitDataset, phase: Phase) -> Result<Vec<usize>> {
    let n_users = split.n_users();
    if e.n_rows() != n_users + split.n_items() {
        return Err(Error::Dimension(format!(
            "{} embedding rows for {} users and {} items",
            e.n_rows(),
            n_users,
            split.n_items()
        )));
    }
    (0..n_users as u32)
        .into_par_iter()
        .map(|u| {
            let train = split.train_items(u);
            let (target, exclude) = match phase {
                Phase::Validation => (split.validation[u as usize], train.to_vec()),
                Phase::Test => {
                    let mut ex = train.to_vec();
                    ex.push(split.validation[u as usize]);
                    (split.test[u as usize], ex)
                }
            };
            rank_of_target(e, n_users, u, target, &exclude)
        })
        .collect()
}

pub fn evaluate(e: &EmbeddingTable, split: &SplitDataset, phase: Phase, cutoffs: &[usize]) -> Result<MetricsReport> {
    let ranks = user_ranks(e, split, phase)?;
    report_from_ranks(phase, &ranks, cutoffs)
}

/// [`evaluate`] plus the per-activity-group breakdown.
pub fn evaluate_grouped(
    e: &EmbeddingTable,
    split: &SplitDataset,
    phase: Phase,
    cutoffs: &[usize],
    boundaries: &[usize],
) -> Result<MetricsReport> {
    let ranks = user_ranks(e, split, phase)?;
    let mut report = report_from_ranks(phase, &ranks, cutoffs)?;
    report.groups = grouped_report(&ranks, &split.train_count_per_user, boundaries, cutoffs)?;
    Ok(report)
}

pub fn report_from_ranks(phase: Phase, ranks: &[usize], cutoffs: &[usize]) -> Result<MetricsReport> {
    let overall = CutoffMetrics::from_ranks(ranks, cutoffs)
        .ok_or_else(|| Error::Empty("no users to evaluate".into()))?;
    Ok(MetricsReport {
        phase,
        overall,
        n_users_evaluated: ranks.len(),
        groups: Vec::new(),
    })
}

/// Splits users by train interaction count at `boundaries` (strictly
/// increasing) and averages each group separately.
pub fn grouped_report(
    ranks: &[usize],
    train_counts: &[usize],
    boundaries: &[usize],
    cutoffs: &[usize],
) -> Result<Vec<GroupMetrics>> {
    if boundaries.is_empty() || boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "group boundaries must be non-empty and strictly increasing".into(),
        ));
    }
    if ranks.len() != train_counts.len() {
        return Err(Error::Dimension(format!(
            "{} ranks but {} train counts",
            ranks.len(),
            train_counts.len()
        )));
    }
    let mut edges = Vec::with_capacity(boundaries.len() + 2);
    edges.push(0);
    edges.extend(boundaries.iter().copied().filter(|&b| b > 0));
    let mut groups = Vec::with_capacity(edges.len());
    for (k, &lower) in edges.iter().enumerate() {
        let upper = edges.get(k + 1).copied();
        let members: Vec<usize> = ranks
            .iter()
            .zip(train_counts)
            .filter(|&(_, &c)| c >= lower && upper.is_none_or(|up| c < up))
            .map(|(&r, _)| r)
            .collect();
        let label = match (lower, upper) {
            (0, Some(up)) => format!("<{up}"),
            (lo, Some(up)) if up == lo + 1 => format!("{lo}"),
            (lo, Some(up)) => format!("{lo}-{}", up - 1),
            (lo, None) => format!(">{}", lo.saturating_sub(1)),
        };
        groups.push(GroupMetrics {
            label,
            lower,
            upper,
            n_users: members.len(),
            metrics: CutoffMetrics::from_ranks(&members, cutoffs),
        });
    }
    Ok(groups)
}

/// Long-format CSV: `phase,group,n_users,metric,cutoff,value`. Metrics of
/// empty groups are written as `NA`.
pub fn write_report_csv<W: Write>(w: &mut W, reports: &[&MetricsReport]) -> std::io::Result<()> {
    writeln!(w, "phase,group,n_users,metric,cutoff,value")?;
    for report in reports {
        let mut rows: Vec<(&str, usize, Option<&CutoffMetrics>)> =
            vec![("all", report.n_users_evaluated, Some(&report.overall))];
        rows.extend(report.groups.iter().map(|g| (g.label.as_str(), g.n_users, g.metrics.as_ref())));
        for (group, n, metrics) in rows {
            for (k, &c) in report.overall.cutoffs.iter().enumerate() {
                for (name, pick) in [("hr", 0usize), ("ndcg", 1)] {
                    let value = metrics.map(|m| if pick == 0 { m.hr[k] } else { m.ndcg[k] });
                    match value {
                        Some(v) => writeln!(w, "{},{group},{n},{name},{c},{v}", report.phase)?,
                        None => writeln!(w, "{},{group},{n},{name},{c},NA", report.phase)?,
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn save_report_csv(path: impl AsRef<Path>, reports: &[&MetricsReport]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_report_csv(&mut buf, reports).expect("writing to memory");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Relative change `(variant - baseline) / baseline`; `None` for a zero or
/// missing baseline.
pub fn relative_improvement(baseline: Option<f64>, variant: Option<f64>) -> Option<f64> {
    match (baseline, variant) {
        (Some(b), Some(v)) if b > 0.0 => Some((v - b) / b),
        _ => None,
    }
}

/// Per-group baseline-vs-variant table, one row per group, metric and
/// cutoff: `group<TAB>n_users<TAB>metric<TAB>cutoff<TAB>baseline<TAB>variant<TAB>rel_improvement`.
pub fn write_group_comparison_tsv<W: Write>(
    w: &mut W,
    baseline: &MetricsReport,
    variant: &MetricsReport,
) -> std::io::Result<()> {
    fn fmt_opt(v: Option<f64>) -> String {
        v.map_or_else(|| "NA".to_owned(), |v| v.to_string())
    }
    writeln!(w, "group\tn_users\tmetric\tcutoff\tbaseline\tvariant\trel_improvement")?;
    let mut rows = vec![("all", baseline.n_users_evaluated, Some(&baseline.overall), Some(&variant.overall))];
    for (gb, gv) in baseline.groups.iter().zip(&variant.groups) {
        rows.push((gb.label.as_str(), gb.n_users, gb.metrics.as_ref(), gv.metrics.as_ref()));
    }
    for (label, n, mb, mv) in rows {
        for (k, &c) in baseline.overall.cutoffs.iter().enumerate() {
            for name in ["hr", "ndcg"] {
                let get = |m: Option<&CutoffMetrics>| m.map(|m| if name == "hr" { m.hr[k] } else { m.ndcg[k] });
                let (b, v) = (get(mb), get(mv));
                writeln!(
                    w,
                    "{label}\t{n}\t{name}\t{c}\t{}\t{}\t{}",
                    fmt_opt(b),
                    fmt_opt(v),
                    fmt_opt(relative_improvement(b, v))
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ndcg_anchor_values() {
        assert_eq!(ndcg_at(1, 5), 1.0);
        assert_eq!(ndcg_at(3, 5), 0.5);
        assert_eq!(ndcg_at(6, 5), 0.0);
        assert_eq!(hit_at(5, 5), 1.0);
    }

    #[test]
    fn rank_ties_break_by_index() {
        let scores = [1.0; 6];
        assert_eq!(rank_in_scores(&scores, 0), 1);
        assert_eq!(rank_in_scores(&scores, 4), 5);
        assert_eq!(rank_in_scores(&[0.1, 0.9, 0.3], 1), 1);
        assert_eq!(rank_in_scores(&[f64::NEG_INFINITY, 0.2, 0.3], 1), 2);
    }

    #[test]
    fn excluded_target_is_an_error() {
        let e = EmbeddingTable::zeros(3, 1).unwrap();
        assert!(rank_of_target(&e, 1, 0, 1, &[1]).is_err());
        assert_eq!(rank_of_target(&e, 1, 0, 1, &[0]).unwrap(), 1);
    }

    #[test]
    fn perfect_ranks() {
        let m = CutoffMetrics::from_ranks(&[1, 1, 1], &DEFAULT_CUTOFFS).unwrap();
        assert!(m.hr.iter().chain(&m.ndcg).all(|&v| v == 1.0));
        assert!(CutoffMetrics::from_ranks(&[], &[5]).is_none());
    }

    #[test]
    fn groups_partition_and_labels() {
        let ranks = [1, 3, 7, 30, 2];
        let counts = [1, 2, 5, 9, 12];
        let g = grouped_report(&ranks, &counts, &DEFAULT_GROUP_BOUNDARIES, &[10]).unwrap();
        let labels: Vec<_> = g.iter().map(|g| g.label.as_str()).collect();
        assert_eq!(labels, ["<3", "3-7", ">7"]);
        assert_eq!(g.iter().map(|g| g.n_users).collect::<Vec<_>>(), [2, 1, 2]);

        let g = grouped_report(&ranks, &counts, &[100], &[10]).unwrap();
        assert_eq!(g[1].n_users, 0);
        assert!(g[1].metrics.is_none());
        assert_eq!(g[0].metrics, CutoffMetrics::from_ranks(&ranks, &[10]));

        assert!(grouped_report(&ranks, &counts, &[], &[10]).is_err());
        assert!(grouped_report(&ranks, &counts, &[5, 5], &[10]).is_err());
    }

    #[test]
    fn csv_marks_empty_groups() {
        let mut report = report_from_ranks(Phase::Test, &[1, 2], &[5]).unwrap();
        report.groups = grouped_report(&[1, 2], &[0, 1], &[3, 8], &[5]).unwrap();
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &[&report]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("phase,group,n_users,metric,cutoff,value\ntest,all,2,hr,5,1\n"));
        assert!(text.contains("test,>7,0,ndcg,5,NA\n"));
    }

    #[test]
    fn comparison_tsv_has_relative_improvement() {
        let b = report_from_ranks(Phase::Test, &[3], &[5]).unwrap();
        let v = report_from_ranks(Phase::Test, &[1], &[5]).unwrap();
        let mut buf = Vec::new();
        write_group_comparison_tsv(&mut buf, &b, &v).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("all\t1\tndcg\t5\t0.5\t1\t1\n"), "{text}");
    }
}
