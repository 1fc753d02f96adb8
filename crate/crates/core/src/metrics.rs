//! Precision-recall and ROC evaluation for imbalanced binary tasks.
//!
//! AUPRC is computed as average precision (step interpolation over distinct
//! thresholds); trapezoidal PR interpolation is deliberately avoided since
//! it is optimistic under class imbalance. Tied scores form a single
//! threshold block. AUROC is the Mann-Whitney statistic with half credit
//! for ties.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MetricsError {
    LengthMismatch { scores: usize, labels: usize },
    Empty,
    NonFiniteScore { index: usize },
    NoPositives,
    SingleClass,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::LengthMismatch { scores, labels } => {
                write!(f, "{scores} scores but {labels} labels")
            }
            MetricsError::Empty => write!(f, "no scored examples"),
            MetricsError::NonFiniteScore { index } => {
                write!(f, "non-finite score at index {index}")
            }
            MetricsError::NoPositives => write!(f, "no positive labels"),
            MetricsError::SingleClass => write!(f, "labels contain a single class"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MetricsError {}

/// Parallel score/label lists, validated on construction.
#[derive(Clone, Debug)]
pub struct ScoredLabels {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self, MetricsError> {
        if scores.len() != labels.len() {
            return Err(MetricsError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        if scores.is_empty() {
            return Err(MetricsError::Empty);
        }
        if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
            return Err(MetricsError::NonFiniteScore { index });
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    /// Indices sorted by descending score.
    fn ranked(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        order
    }
}

/// One point per distinct score threshold, in descending-score order.
#[derive(Clone, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        use core::fmt::Write;
        let mut out = String::from("threshold,precision,recall\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.precision, p.recall);
        }
        out
    }
}

/// Walks the ranked data block by tied score, reporting cumulative
/// (threshold, true positives, predicted positives) after each block.
fn sweep_blocks(
    data: &ScoredLabels,
    mut visit: impl FnMut(f64, usize, usize),
) -> Result<(), MetricsError> {
    let order = data.ranked();
    let mut tp = 0usize;
    let mut predicted = 0usize;
    let mut i = 0usize;
    while i < order.len() {
        let threshold = data.scores[order[i]];
        let mut j = i;
        while j < order.len() && data.scores[order[j]] == threshold {
            if data.labels[order[j]] {
                tp += 1;
            }
            predicted += 1;
            j += 1;
        }
        visit(threshold, tp, predicted);
        i = j;
    }
    Ok(())
}

pub fn pr_curve(data: &ScoredLabels) -> Result<PrCurve, MetricsError> {
    let positives = data.positives();
    if positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut points = Vec::new();
    sweep_blocks(data, |threshold, tp, predicted| {
        points.push(PrPoint {
            threshold,
            recall: tp as f64 / positives as f64,
            precision: tp as f64 / predicted as f64,
        });
    })?;
    Ok(PrCurve { points })
}

/// Average precision: sum of (recall step) x (precision) over distinct
/// thresholds in descending-score order.
pub fn auprc(data: &ScoredLabels) -> Result<f64, MetricsError> {
    let positives = data.positives();
    if positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    sweep_blocks(data, |_, tp, predicted| {
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / predicted as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    })?;
    Ok(area)
}

/// Mann-Whitney AUROC with half credit for score ties.
pub fn auroc(data: &ScoredLabels) -> Result<f64, MetricsError> {
    let positives = data.positives();
    let negatives = data.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass);
    }
    // ascending order; average rank within each tie block
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.scores[a].total_cmp(&data.scores[b]).then(a.cmp(&b)));
    let mut rank_sum_pos = 0.0;
    let mut i = 0usize;
    while i < order.len() {
        let score = data.scores[order[i]];
        let mut j = i;
        let mut pos_in_block = 0usize;
        while j < order.len() && data.scores[order[j]] == score {
            if data.labels[order[j]] {
                pos_in_block += 1;
            }
            j += 1;
        }
        // ranks are 1-based; block occupies ranks i+1 ..= j
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum_pos += avg_rank * pos_in_block as f64;
        i = j;
    }
    let p = positives as f64;
    let n = negatives as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scored(scores: &[f64], labels: &[u8]) -> ScoredLabels {
        ScoredLabels::new(scores.to_vec(), labels.iter().map(|&l| l == 1).collect()).unwrap()
    }

    #[test]
    fn perfect_ranking_has_precision_one_at_every_recall_gain() {
        let data = scored(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]);
        let curve = pr_curve(&data).unwrap();
        let mut prev_recall = 0.0;
        for p in &curve.points {
            if p.recall > prev_recall {
                assert_eq!(p.precision, 1.0, "threshold {}", p.threshold);
            }
            prev_recall = p.recall;
        }
        assert_eq!(auprc(&data).unwrap(), 1.0);
        assert_eq!(auroc(&data).unwrap(), 1.0);
    }

    #[test]
    fn all_tied_scores_collapse_to_one_point() {
        let data = scored(&[0.4, 0.4, 0.4, 0.4], &[1, 0, 0, 0]);
        let curve = pr_curve(&data).unwrap();
        assert_eq!(curve.points.len(), 1);
        assert_eq!(curve.points[0].recall, 1.0);
        assert_eq!(curve.points[0].precision, 0.25);
        assert_eq!(auprc(&data).unwrap(), 0.25);
        assert_eq!(auroc(&data).unwrap(), 0.5);
    }

    #[test]
    fn hand_case_is_three_quarters() {
        // positives at ranks 1 and 4: AP = (1/1 + 2/4) / 2
        let data = scored(&[0.9, 0.8, 0.4, 0.3], &[1, 0, 0, 1]);
        assert_eq!(auprc(&data).unwrap(), 0.75);
    }

    #[test]
    fn recall_is_nondecreasing() {
        let data = scored(&[0.1, 0.5, 0.5, 0.3, 0.9, 0.2], &[0, 1, 0, 1, 0, 1]);
        let curve = pr_curve(&data).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[1].recall >= w[0].recall);
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert_eq!(
            ScoredLabels::new(vec![0.1], vec![true, false]).unwrap_err(),
            MetricsError::LengthMismatch { scores: 1, labels: 2 }
        );
        assert_eq!(
            ScoredLabels::new(vec![], vec![]).unwrap_err(),
            MetricsError::Empty
        );
        assert_eq!(
            ScoredLabels::new(vec![f64::NAN], vec![true]).unwrap_err(),
            MetricsError::NonFiniteScore { index: 0 }
        );
        let no_pos = scored(&[0.5, 0.2], &[0, 0]);
        assert_eq!(auprc(&no_pos).unwrap_err(), MetricsError::NoPositives);
        assert_eq!(auroc(&no_pos).unwrap_err(), MetricsError::SingleClass);
    }

    #[test]
    fn csv_has_declared_columns() {
        let data = scored(&[0.9, 0.1], &[1, 0]);
        let csv = pr_curve(&data).unwrap().to_csv();
        assert!(csv.starts_with("threshold,precision,recall\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
