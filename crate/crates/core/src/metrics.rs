//! Pairwise and BCubed F-scores.

use std::collections::HashMap;
use std::fmt;

use crate::confidence::LabelVector;
use crate::error::{rejected, Result};
use crate::partition::ClusterAssignment;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl PrfScore {
    fn new(precision: f64, recall: f64) -> Self {
        let f = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub pairwise: PrfScore,
    pub bcubed: PrfScore,
    pub num_pred_clusters: usize,
    pub num_gt_clusters: usize,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn check_lengths(pred: &[usize], gt: &[usize]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(rejected(format!(
            "{} predicted labels vs {} ground-truth labels",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

struct Contingency {
    cells: HashMap<(usize, usize), u64>,
    pred_sizes: HashMap<usize, u64>,
    gt_sizes: HashMap<usize, u64>,
}

impl Contingency {
    fn new(pred: &[usize], gt: &[usize]) -> Self {
        let mut c = Self {
            cells: HashMap::new(),
            pred_sizes: HashMap::new(),
            gt_sizes: HashMap::new(),
        };
        for (&p, &g) in pred.iter().zip(gt) {
            *c.cells.entry((p, g)).or_default() += 1;
            *c.pred_sizes.entry(p).or_default() += 1;
            *c.gt_sizes.entry(g).or_default() += 1;
        }
        c
    }
}

fn pairs(count: u64) -> u128 {
    let c = u128::from(count);
    c * c.saturating_sub(1) / 2
}

pub(crate) fn pairwise_on_slices(pred: &[usize], gt: &[usize]) -> Result<PrfScore> {
    check_lengths(pred, gt)?;
    if pred.len() < 2 {
        return Err(rejected("pairwise F-score needs at least 2 vertices"));
    }
    let c = Contingency::new(pred, gt);
    let together_both: u128 = c.cells.values().map(|&v| pairs(v)).sum();
    let together_pred: u128 = c.pred_sizes.values().map(|&v| pairs(v)).sum();
    let together_gt: u128 = c.gt_sizes.values().map(|&v| pairs(v)).sum();
    Ok(PrfScore::new(
        ratio(together_both as f64, together_pred as f64),
        ratio(together_both as f64, together_gt as f64),
    ))
}

pub(crate) fn bcubed_on_slices(pred: &[usize], gt: &[usize]) -> Result<PrfScore> {
    check_lengths(pred, gt)?;
    if pred.is_empty() {
        return Err(rejected("BCubed F-score needs at least 1 vertex"));
    }
    let c = Contingency::new(pred, gt);
    // summed in vertex order so that swapping pred and gt swaps P and R bit-for-bit
    let (mut p_sum, mut r_sum) = (0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt) {
        let shared = c.cells[&(p, g)] as f64;
        p_sum += shared / c.pred_sizes[&p] as f64;
        r_sum += shared / c.gt_sizes[&g] as f64;
    }
    let n = pred.len() as f64;
    Ok(PrfScore::new(p_sum / n, r_sum / n))
}

/// Precision and recall over unordered vertex pairs that share a cluster.
/// Counted from the contingency table in `O(n)`.
pub fn pairwise_fscore(pred: &ClusterAssignment, gt: &LabelVector) -> Result<PrfScore> {
    pairwise_on_slices(pred.labels(), gt.as_slice())
}

/// Per-vertex precision/recall of its predicted cluster against its class, averaged over vertices.
pub fn bcubed_fscore(pred: &ClusterAssignment, gt: &LabelVector) -> Result<PrfScore> {
    bcubed_on_slices(pred.labels(), gt.as_slice())
}

pub fn evaluate(pred: &ClusterAssignment, gt: &LabelVector) -> Result<ScoreReport> {
    Ok(ScoreReport {
        pairwise: pairwise_fscore(pred, gt)?,
        bcubed: bcubed_fscore(pred, gt)?,
        num_pred_clusters: pred.num_clusters(),
        num_gt_clusters: gt.num_classes(),
    })
}

impl ScoreReport {
    /// Single-line `key=value` record.
    pub fn to_kv_line(&self) -> String {
        format!(
            "pairwise_precision={:.6} pairwise_recall={:.6} pairwise_f={:.6} \
             bcubed_precision={:.6} bcubed_recall={:.6} bcubed_f={:.6} \
             num_pred_clusters={} num_gt_clusters={}",
            self.pairwise.precision,
            self.pairwise.recall,
            self.pairwise.f,
            self.bcubed.precision,
            self.bcubed.recall,
            self.bcubed.f,
            self.num_pred_clusters,
            self.num_gt_clusters
        )
    }
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>10} {:>10} {:>10}", "metric", "precision", "recall", "f-score")?;
        for (name, s) in [("pairwise", self.pairwise), ("bcubed", self.bcubed)] {
            writeln!(
                f,
                "{:<10} {:>10.4} {:>10.4} {:>10.4}",
                name,
                s.precision * 100.0,
                s.recall * 100.0,
                s.f * 100.0
            )?;
        }
        write!(
            f,
            "clusters: {} predicted, {} ground truth",
            self.num_pred_clusters, self.num_gt_clusters
        )
    }
}

#[cfg(test)]
pub(crate) mod oracle {
    /// O(n²) enumeration of unordered pairs.
    pub fn pairwise(pred: &[usize], gt: &[usize]) -> (f64, f64) {
        let (mut both, mut in_pred, mut in_gt) = (0u64, 0u64, 0u64);
        for i in 0..pred.len() {
            for j in i + 1..pred.len() {
                let p = pred[i] == pred[j];
                let g = gt[i] == gt[j];
                in_pred += p as u64;
                in_gt += g as u64;
                both += (p && g) as u64;
            }
        }
        let r = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        (r(both, in_pred), r(both, in_gt))
    }

    /// Direct per-vertex set intersection.
    pub fn bcubed(pred: &[usize], gt: &[usize]) -> (f64, f64) {
        let n = pred.len();
        let (mut p, mut r) = (0.0, 0.0);
        for i in 0..n {
            let cluster: Vec<usize> = (0..n).filter(|&j| pred[j] == pred[i]).collect();
            let class: Vec<usize> = (0..n).filter(|&j| gt[j] == gt[i]).collect();
            let shared = cluster.iter().filter(|j| class.contains(j)).count() as f64;
            p += shared / cluster.len() as f64;
            r += shared / class.len() as f64;
        }
        (p / n as f64, r / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assign(labels: &[usize]) -> ClusterAssignment {
        ClusterAssignment::from_labels(labels)
    }

    #[test]
    fn identical_partitions_score_one() {
        let l = [0, 0, 1, 2, 2, 2];
        let r = evaluate(&assign(&l), &LabelVector::new(l.to_vec())).unwrap();
        assert_eq!(r.pairwise, PrfScore { precision: 1.0, recall: 1.0, f: 1.0 });
        assert_eq!(r.bcubed, PrfScore { precision: 1.0, recall: 1.0, f: 1.0 });
        assert_eq!((r.num_pred_clusters, r.num_gt_clusters), (3, 3));
    }

    #[test]
    fn singletons_against_one_class() {
        let s = pairwise_fscore(&assign(&[0, 1, 2, 3]), &LabelVector::new(vec![0; 4])).unwrap();
        assert_eq!(s, PrfScore { precision: 0.0, recall: 0.0, f: 0.0 });
    }

    #[test]
    fn mega_cluster_against_two_classes() {
        let gt = LabelVector::new((0..10).map(|i| i / 5).collect());
        let s = bcubed_fscore(&assign(&[0; 10]), &gt).unwrap();
        assert_eq!(s.precision, 0.5);
        assert_eq!(s.recall, 1.0);
        assert_eq!(s.f, 2.0 / 3.0);
    }

    #[test]
    fn length_and_size_errors() {
        assert!(pairwise_fscore(&assign(&[0, 1]), &LabelVector::new(vec![0])).is_err());
        assert!(pairwise_fscore(&assign(&[0]), &LabelVector::new(vec![0])).is_err());
        assert!(bcubed_fscore(&assign(&[]), &LabelVector::new(vec![])).is_err());
        assert!(bcubed_fscore(&assign(&[0]), &LabelVector::new(vec![0])).is_ok());
    }

    #[test]
    fn report_formats() {
        let r = evaluate(&assign(&[0, 0, 1]), &LabelVector::new(vec![0, 0, 1])).unwrap();
        assert!(r.to_kv_line().starts_with("pairwise_precision=1.000000 "));
        assert!(r.to_kv_line().ends_with("num_pred_clusters=2 num_gt_clusters=2"));
        assert!(r.to_string().contains("bcubed"));
    }

    fn labeling(n: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (
            proptest::collection::vec(0usize..8, n),
            proptest::collection::vec(0usize..8, n),
        )
    }

    proptest! {
        #[test]
        fn matches_brute_force((pred, gt) in (2usize..60).prop_flat_map(labeling)) {
            let (op, or) = oracle::pairwise(&pred, &gt);
            let s = pairwise_on_slices(&pred, &gt).unwrap();
            prop_assert!((s.precision - op).abs() <= 1e-12 && (s.recall - or).abs() <= 1e-12);
            let (bp, br) = oracle::bcubed(&pred, &gt);
            let b = bcubed_on_slices(&pred, &gt).unwrap();
            prop_assert!((b.precision - bp).abs() <= 1e-12 && (b.recall - br).abs() <= 1e-12);
        }

        #[test]
        fn swap_exchanges_precision_and_recall((pred, gt) in (2usize..60).prop_flat_map(labeling)) {
            let a = pairwise_on_slices(&pred, &gt).unwrap();
            let b = pairwise_on_slices(&gt, &pred).unwrap();
            prop_assert_eq!((a.precision, a.recall, a.f), (b.recall, b.precision, b.f));
            let a = bcubed_on_slices(&pred, &gt).unwrap();
            let b = bcubed_on_slices(&gt, &pred).unwrap();
            prop_assert_eq!((a.precision, a.recall, a.f), (b.recall, b.precision, b.f));
        }

        #[test]
        fn relabeling_invariance((pred, gt) in (2usize..60).prop_flat_map(labeling), shift in 1usize..50) {
            let renamed: Vec<usize> = pred.iter().map(|&p| (p * 7 + shift) % 1000).collect();
            prop_assert_eq!(pairwise_on_slices(&pred, &gt).unwrap(), pairwise_on_slices(&renamed, &gt).unwrap());
            let b1 = bcubed_on_slices(&pred, &gt).unwrap();
            let b2 = bcubed_on_slices(&renamed, &gt).unwrap();
            prop_assert!((b1.f - b2.f).abs() < 1e-15);
        }

        #[test]
        fn perfect_iff_same_partition((pred, gt) in (2usize..30).prop_flat_map(labeling)) {
            let same = assign(&pred) == assign(&gt);
            let p = pairwise_on_slices(&pred, &gt).unwrap();
            let b = bcubed_on_slices(&pred, &gt).unwrap();
            prop_assert_eq!(b.f == 1.0, same);
            if same { prop_assert!(p.f == 1.0 || pairwise_on_slices(&pred, &pred).unwrap().f == 0.0); }
        }
    }
}
