//! Confusion counts, threshold metrics and pairwise AUC.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cnn::{classify, Cnn};
use crate::data::{ImageRecord, Label};
use crate::error::{Error, Result};

/// Tumor is the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub true_neg: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.true_neg + self.false_pos + self.false_neg
    }
}

pub fn confusion(predictions: &[Label], truths: &[Label]) -> Result<ConfusionCounts> {
    if predictions.len() != truths.len() || predictions.is_empty() {
        return Err(Error::Contract(format!(
            "confusion needs equal non-empty inputs, got {} predictions and {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (p, t) in predictions.iter().zip(truths) {
        match (p, t) {
            (Label::Tumor, Label::Tumor) => c.true_pos += 1,
            (Label::Healthy, Label::Healthy) => c.true_neg += 1,
            (Label::Tumor, Label::Healthy) => c.false_pos += 1,
            (Label::Healthy, Label::Tumor) => c.false_neg += 1,
        }
    }
    Ok(c)
}

/// Which ratios had a zero denominator and were reported as 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroDivision {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

impl ZeroDivision {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub zero_division: ZeroDivision,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn summary_metrics(c: &ConfusionCounts) -> Result<Summary> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Contract("metrics of zero samples".into()));
    }
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            (0.0, true)
        } else {
            (num as f64 / den as f64, false)
        }
    };
    let (precision, p0) = ratio(c.true_pos, c.true_pos + c.false_pos);
    let (recall, r0) = ratio(c.true_pos, c.true_pos + c.false_neg);
    Ok(Summary {
        accuracy: (c.true_pos + c.true_neg) as f64 / total as f64,
        precision,
        recall,
        f1: f1_score(precision, recall),
        zero_division: ZeroDivision {
            precision: p0,
            recall: r0,
            f1: precision + recall == 0.0,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub positive: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    /// A tied positive/negative pair counts 0.
    #[default]
    Strict,
    /// A tied pair counts 1/2 (Mann-Whitney convention).
    Half,
}

impl TieRule {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "strict" => Ok(TieRule::Strict),
            "half" => Ok(TieRule::Half),
            other => Err(Error::Config(format!("unknown AUC tie rule `{other}`"))),
        }
    }
}

/// Fraction of positive/negative pairs where the positive scores higher.
///
/// Counts are exact integers: negatives are sorted once and each positive's
/// strictly-lower and tied negatives are located by binary search.
pub fn auc(samples: &[ScoredSample], tie: TieRule) -> Result<f64> {
    if let Some(s) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Contract(format!("non-finite score {}", s.score)));
    }
    let mut neg: Vec<f64> = samples
        .iter()
        .filter(|s| !s.positive)
        .map(|s| s.score)
        .collect();
    let n_pos = samples.len() - neg.len();
    if n_pos == 0 || neg.is_empty() {
        return Err(Error::Contract(format!(
            "AUC needs both classes, got {n_pos} positive and {} negative samples",
            neg.len()
        )));
    }
    neg.sort_by(f64::total_cmp);
    let (mut wins, mut ties) = (0u64, 0u64);
    for s in samples.iter().filter(|s| s.positive) {
        let below = neg.partition_point(|&v| v < s.score);
        let at_or_below = neg.partition_point(|&v| v <= s.score);
        wins += below as u64;
        ties += (at_or_below - below) as u64;
    }
    let pairs = (n_pos * neg.len()) as f64;
    Ok(match tie {
        TieRule::Strict => wins as f64 / pairs,
        TieRule::Half => (wins as f64 + 0.5 * ties as f64) / pairs,
    })
}

/// `(false positive rate, true positive rate)` at every distinct threshold, from (0,0) to (1,1).
pub fn roc_points(samples: &[ScoredSample]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<ScoredSample> = samples.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let p = sorted.iter().filter(|s| s.positive).count().max(1) as f64;
    let n = sorted.iter().filter(|s| !s.positive).count().max(1) as f64;
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    for (i, s) in sorted.iter().enumerate() {
        if s.positive {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        if i + 1 == sorted.len() || sorted[i + 1].score != s.score {
            pts.push((fp / n, tp / p));
        }
    }
    pts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub counts: ConfusionCounts,
    pub zero_division: ZeroDivision,
    pub threshold: f32,
    pub tie_rule: TieRule,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Anything that assigns tumor probabilities to records.
pub trait Scorer {
    fn scores(&self, records: &[ImageRecord]) -> Result<Vec<f32>>;
}

impl Scorer for Cnn<f32> {
    fn scores(&self, records: &[ImageRecord]) -> Result<Vec<f32>> {
        self.predict(records)
    }
}

impl<F: Fn(&ImageRecord) -> f32> Scorer for F {
    fn scores(&self, records: &[ImageRecord]) -> Result<Vec<f32>> {
        Ok(records.iter().map(self).collect())
    }
}

/// Scores the test set, thresholds, and assembles every metric.
pub fn evaluate<S: Scorer + ?Sized>(
    model: &S,
    test: &[ImageRecord],
    threshold: f32,
    tie: TieRule,
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Contract("empty test set".into()));
    }
    let scores = model.scores(test)?;
    report_from_scores(&scores, test, threshold, tie)
}

pub fn report_from_scores(
    scores: &[f32],
    test: &[ImageRecord],
    threshold: f32,
    tie: TieRule,
) -> Result<MetricsReport> {
    if scores.len() != test.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} records",
            scores.len(),
            test.len()
        )));
    }
    let predicted: Vec<Label> = scores.iter().map(|&p| classify(p, threshold)).collect();
    let truths: Vec<Label> = test.iter().map(|r| r.label).collect();
    let counts = confusion(&predicted, &truths)?;
    let s = summary_metrics(&counts)?;
    let samples: Vec<ScoredSample> = scores
        .iter()
        .zip(&truths)
        .map(|(&p, &t)| ScoredSample {
            score: p as f64,
            positive: t == Label::Tumor,
        })
        .collect();
    Ok(MetricsReport {
        accuracy: s.accuracy,
        precision: s.precision,
        recall: s.recall,
        f1: s.f1,
        auc: auc(&samples, tie)?,
        counts,
        zero_division: s.zero_division,
        threshold,
        tie_rule: tie,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(pos: &[f64], neg: &[f64]) -> Vec<ScoredSample> {
        pos.iter()
            .map(|&s| ScoredSample {
                score: s,
                positive: true,
            })
            .chain(neg.iter().map(|&s| ScoredSample {
                score: s,
                positive: false,
            }))
            .collect()
    }

    #[test]
    fn confusion_examples() {
        let mut p = vec![Label::Tumor; 10];
        p.extend([Label::Healthy; 10]);
        let c = confusion(&p, &p).unwrap();
        assert_eq!(
            (c.true_pos, c.true_neg, c.false_pos, c.false_neg),
            (10, 10, 0, 0)
        );

        let mut truth = vec![Label::Tumor; 5];
        truth.extend([Label::Healthy; 5]);
        let c = confusion(&[Label::Tumor; 10], &truth).unwrap();
        assert_eq!(
            (c.true_pos, c.false_pos, c.true_neg, c.false_neg),
            (5, 5, 0, 0)
        );
        assert!(confusion(&[Label::Tumor], &[]).is_err());
    }

    #[test]
    fn summary_plug_in() {
        let c = ConfusionCounts {
            true_pos: 50,
            true_neg: 40,
            false_pos: 10,
            false_neg: 0,
        };
        let s = summary_metrics(&c).unwrap();
        assert!((s.accuracy - 0.90).abs() < 1e-12);
        assert!((s.precision - 50.0 / 60.0).abs() < 1e-12);
        assert_eq!(s.recall, 1.0);
        assert!((s.f1 - 0.909090909).abs() < 1e-6);
        assert!(!s.zero_division.any());
        assert!(summary_metrics(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn zero_denominators_flagged() {
        let c = ConfusionCounts {
            true_pos: 0,
            true_neg: 5,
            false_pos: 0,
            false_neg: 0,
        };
        let s = summary_metrics(&c).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        assert!(s.zero_division.precision && s.zero_division.recall && s.zero_division.f1);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(
            auc(&samples(&[0.9, 0.8], &[0.2, 0.1]), TieRule::Strict).unwrap(),
            1.0
        );
        assert_eq!(auc(&samples(&[0.1], &[0.9]), TieRule::Strict).unwrap(), 0.0);
        assert_eq!(
            auc(&samples(&[0.9, 0.3], &[0.4, 0.1]), TieRule::Strict).unwrap(),
            0.75
        );
        assert_eq!(
            auc(&samples(&[0.5, 0.5], &[0.5]), TieRule::Strict).unwrap(),
            0.0
        );
        assert_eq!(
            auc(&samples(&[0.5, 0.5], &[0.5]), TieRule::Half).unwrap(),
            0.5
        );
        assert!(auc(&samples(&[0.5], &[]), TieRule::Strict).is_err());
        assert!(auc(&samples(&[], &[0.5]), TieRule::Strict).is_err());
    }

    #[test]
    fn roc_ends_at_corners() {
        let pts = roc_points(&samples(&[0.9, 0.3], &[0.4, 0.1]));
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
    }
}
