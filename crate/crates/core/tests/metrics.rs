use proptest::prelude::*;
use synthmix::data::{ImageRecord, Label, Source};
use synthmix::metrics::{auc, confusion, evaluate, summary_metrics, ScoredSample, TieRule};

/// Pairwise count over every (positive, negative) pair.
fn pairwise_auc(s: &[ScoredSample], half: bool) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for p in s.iter().filter(|s| s.positive) {
        for n in s.iter().filter(|s| !s.positive) {
            pairs += 1.0;
            if p.score > n.score {
                num += 1.0;
            } else if half && p.score == n.score {
                num += 0.5;
            }
        }
    }
    num / pairs
}

fn samples() -> impl Strategy<Value = Vec<ScoredSample>> {
    prop::collection::vec((0u8..20, any::<bool>()), 2..80)
        .prop_filter("both classes", |v| {
            v.iter().any(|s| s.1) && v.iter().any(|s| !s.1)
        })
        .prop_map(|v| {
            v.into_iter()
                .map(|(s, positive)| ScoredSample {
                    score: s as f64 / 20.0,
                    positive,
                })
                .collect()
        })
}

proptest! {
    #[test]
    fn auc_equals_pairwise_count(s in samples()) {
        prop_assert!((auc(&s, TieRule::Strict).unwrap() - pairwise_auc(&s, false)).abs() < 1e-12);
        prop_assert!((auc(&s, TieRule::Half).unwrap() - pairwise_auc(&s, true)).abs() < 1e-12);
    }

    #[test]
    fn auc_is_rank_invariant(s in samples()) {
        let warped: Vec<ScoredSample> = s.iter().map(|x| ScoredSample { score: (3.0 * x.score).exp() - 7.0, ..*x }).collect();
        prop_assert_eq!(auc(&s, TieRule::Strict).unwrap(), auc(&warped, TieRule::Strict).unwrap());
        prop_assert_eq!(auc(&s, TieRule::Half).unwrap(), auc(&warped, TieRule::Half).unwrap());
    }

    #[test]
    fn flipped_labels_complement_half_auc(s in samples()) {
        let flipped: Vec<ScoredSample> = s.iter().map(|x| ScoredSample { positive: !x.positive, ..*x }).collect();
        let sum = auc(&s, TieRule::Half).unwrap() + auc(&flipped, TieRule::Half).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn summary_matches_tallies(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
        let to_label = |b: bool| if b { Label::Tumor } else { Label::Healthy };
        let pred: Vec<Label> = pairs.iter().map(|p| to_label(p.0)).collect();
        let truth: Vec<Label> = pairs.iter().map(|p| to_label(p.1)).collect();
        let c = confusion(&pred, &truth).unwrap();
        prop_assert_eq!(c.total() as usize, pairs.len());
        let s = summary_metrics(&c).unwrap();
        let correct = pairs.iter().filter(|p| p.0 == p.1).count();
        prop_assert_eq!(s.accuracy, correct as f64 / pairs.len() as f64);
    }
}

fn test_set() -> Vec<ImageRecord> {
    (0..20)
        .map(|i| ImageRecord {
            pixels: vec![if i < 10 { 1.0 } else { -1.0 }; 3],
            label: if i < 10 { Label::Tumor } else { Label::Healthy },
            source: Source::Real,
            origin: format!("r{i}"),
        })
        .collect()
}

#[test]
fn evaluate_oracle_and_constant_models() {
    let test = test_set();
    let oracle = |r: &ImageRecord| if r.label == Label::Tumor { 0.9 } else { 0.1 };
    let m = evaluate(&oracle, &test, 0.5, TieRule::Strict).unwrap();
    assert_eq!(
        (m.accuracy, m.precision, m.recall, m.f1, m.auc),
        (1.0, 1.0, 1.0, 1.0, 1.0)
    );

    let constant = |_: &ImageRecord| 0.5f32;
    let m = evaluate(&constant, &test, 0.5, TieRule::Half).unwrap();
    assert_eq!(m.auc, 0.5);
    assert_eq!(m.accuracy, 0.5);
    assert_eq!(m.counts.true_pos + m.counts.false_pos, 0);
    assert!(m.zero_division.precision);
    assert_eq!(
        evaluate(&constant, &test, 0.5, TieRule::Strict)
            .unwrap()
            .auc,
        0.0
    );
    assert!(evaluate(&constant, &[], 0.5, TieRule::Strict).is_err());
}
