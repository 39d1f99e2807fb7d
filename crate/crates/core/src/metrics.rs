//! The three batch metrics: impact score (decision flip or confidence
//! collapse), its strict decision-only variant, and mean mask coverage
//! under adversarial patches, plus the per-record diagnostic report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{CoreError, EvalRecord};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MetricsError {
    #[error("metric undefined on an empty batch")]
    EmptyBatch,
    #[error("tau {0} outside (0,1]")]
    InvalidTau(f64),
    #[error("record {index} has no coverage pair")]
    MissingCoveragePair { index: usize },
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type MetricsResult<T> = Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    /// Confidence-collapse threshold: a record counts as impacted when
    /// z' <= tau * z.
    pub tau: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { tau: 0.5 }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> MetricsResult<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(MetricsError::InvalidTau(self.tau));
        }
        Ok(())
    }
}

/// Per-record diagnostics backing the aggregate scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFlags {
    pub decision_flip: bool,
    pub confidence_drop: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    /// Both masks were empty; the record contributed 0 to coverage.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty_union: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub impact_score: f64,
    pub impact_strict: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impact_coverage: Option<f64>,
    pub tau: f64,
    pub flags: Vec<RecordFlags>,
}

fn confidence_drop(record: &EvalRecord, tau: f64) -> bool {
    record.z_prime <= tau * record.z
}

/// Fraction of records with a decision flip or a confidence collapse to
/// at most tau times the original.
pub fn impact_score(records: &[EvalRecord], cfg: &MetricsConfig) -> MetricsResult<f64> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let hits = records
        .iter()
        .filter(|r| r.decision_flip() || confidence_drop(r, cfg.tau))
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Fraction of records with a decision flip.
pub fn impact_score_strict(records: &[EvalRecord]) -> MetricsResult<f64> {
    if records.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let hits = records.iter().filter(|r| r.decision_flip()).count();
    Ok(hits as f64 / records.len() as f64)
}

/// Mean intersection-over-union of each record's coverage pair; a record
/// whose union is empty contributes 0 and is flagged by `build_report`.
pub fn impact_coverage(records: &[EvalRecord]) -> MetricsResult<f64> {
    if records.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let mut total = 0.0;
    for (index, record) in records.iter().enumerate() {
        let Some((a, c)) = &record.coverage_pair else {
            return Err(MetricsError::MissingCoveragePair { index });
        };
        total += a.iou(c)?.unwrap_or(0.0);
    }
    Ok(total / records.len() as f64)
}

/// Aggregates all defined metrics plus per-record flags. Coverage is
/// reported only when every record carries a coverage pair.
pub fn build_report(records: &[EvalRecord], cfg: &MetricsConfig) -> MetricsResult<MetricsReport> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let all_covered = records.iter().all(|r| r.coverage_pair.is_some());
    let impact_coverage = if all_covered {
        Some(impact_coverage(records)?)
    } else {
        None
    };
    let mut flags = Vec::with_capacity(records.len());
    for record in records {
        let (iou, empty_union) = match &record.coverage_pair {
            Some((a, c)) => {
                let iou = a.iou(c)?;
                if iou.is_none() {
                    log::warn!("coverage record with empty union counted as 0");
                }
                (Some(iou.unwrap_or(0.0)), iou.is_none())
            }
            None => (None, false),
        };
        flags.push(RecordFlags {
            decision_flip: record.decision_flip(),
            confidence_drop: confidence_drop(record, cfg.tau),
            iou,
            empty_union,
        });
    }
    Ok(MetricsReport {
        n: records.len(),
        impact_score: impact_score(records, cfg)?,
        impact_strict: impact_score_strict(records)?,
        impact_coverage,
        tau: cfg.tau,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryMask;
    use proptest::prelude::*;

    fn rec(y: usize, z: f64, y_prime: usize, z_prime: f64) -> EvalRecord {
        EvalRecord::new(y, z, y_prime, z_prime).unwrap()
    }

    #[test]
    fn unimpacted_record_scores_zero() {
        let records = vec![rec(3, 0.9, 3, 0.9)];
        assert_eq!(impact_score(&records, &MetricsConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn decision_flip_scores_one() {
        let records = vec![rec(3, 0.9, 5, 0.9)];
        assert_eq!(impact_score(&records, &MetricsConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn hand_counted_three_record_batch() {
        // flip; confidence 0.8 -> 0.3 (<= 0.4, hit); 0.8 -> 0.7 (> 0.4, miss)
        let records = vec![
            rec(1, 0.9, 2, 0.9),
            rec(4, 0.8, 4, 0.3),
            rec(4, 0.8, 4, 0.7),
        ];
        let cfg = MetricsConfig { tau: 0.5 };
        let i = impact_score(&records, &cfg).unwrap();
        assert!((i - 2.0 / 3.0).abs() < 1e-15);
        let strict = impact_score_strict(&records).unwrap();
        assert!((strict - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn confidence_condition_is_non_strict() {
        let records = vec![rec(0, 0.8, 0, 0.4)];
        let cfg = MetricsConfig { tau: 0.5 };
        assert_eq!(impact_score(&records, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn strict_score_extremes() {
        let flips: Vec<_> = (0..4).map(|_| rec(0, 0.9, 1, 0.9)).collect();
        assert_eq!(impact_score_strict(&flips).unwrap(), 1.0);
        let none: Vec<_> = (0..4).map(|_| rec(0, 0.9, 0, 0.9)).collect();
        assert_eq!(impact_score_strict(&none).unwrap(), 0.0);
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(matches!(
            impact_score(&[], &MetricsConfig::default()),
            Err(MetricsError::EmptyBatch)
        ));
        assert!(matches!(
            impact_score_strict(&[]),
            Err(MetricsError::EmptyBatch)
        ));
        assert!(matches!(impact_coverage(&[]), Err(MetricsError::EmptyBatch)));
    }

    fn with_masks(a: BinaryMask, c: BinaryMask) -> EvalRecord {
        rec(0, 0.9, 1, 0.1).with_coverage(a, c).unwrap()
    }

    #[test]
    fn identical_masks_give_coverage_one() {
        let m = BinaryMask::full(3, 3);
        let records = vec![with_masks(m.clone(), m)];
        assert_eq!(impact_coverage(&records).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_masks_give_coverage_zero() {
        let a = BinaryMask::from_fn(3, 3, |_, c| c == 0);
        let c = BinaryMask::from_fn(3, 3, |_, c| c == 2);
        let records = vec![with_masks(a, c)];
        assert_eq!(impact_coverage(&records).unwrap(), 0.0);
    }

    #[test]
    fn coverage_is_the_mean_of_per_record_ious() {
        let m = BinaryMask::full(4, 4);
        // IoU 1 and IoU 4/12 = 1/3 -> mean 2/3
        let a = BinaryMask::from_fn(4, 4, |r, _| r < 2);
        let c = BinaryMask::from_fn(4, 4, |r, _| r == 1 || r == 2);
        let records = vec![with_masks(m.clone(), m), with_masks(a, c)];
        let cov = impact_coverage(&records).unwrap();
        assert!((cov - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn missing_pair_is_reported_with_index() {
        let m = BinaryMask::full(2, 2);
        let records = vec![with_masks(m.clone(), m), rec(0, 0.9, 1, 0.1)];
        assert!(matches!(
            impact_coverage(&records),
            Err(MetricsError::MissingCoveragePair { index: 1 })
        ));
    }

    #[test]
    fn empty_union_contributes_zero_and_is_flagged() {
        let empty = BinaryMask::empty(2, 2);
        let records = vec![with_masks(empty.clone(), empty)];
        assert_eq!(impact_coverage(&records).unwrap(), 0.0);
        let report = build_report(&records, &MetricsConfig::default()).unwrap();
        assert!(report.flags[0].empty_union);
        assert_eq!(report.flags[0].iou, Some(0.0));
    }

    #[test]
    fn report_matches_direct_metric_calls_on_a_randomized_batch() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let records: Vec<EvalRecord> = (0..200)
            .map(|_| {
                rec(
                    rng.random_range(0..5),
                    rng.random_range(0.0..=1.0),
                    rng.random_range(0..5),
                    rng.random_range(0.0..=1.0),
                )
            })
            .collect();
        let cfg = MetricsConfig { tau: 0.35 };
        let report = build_report(&records, &cfg).unwrap();
        assert_eq!(report.impact_score, impact_score(&records, &cfg).unwrap());
        assert_eq!(report.impact_strict, impact_score_strict(&records).unwrap());
        assert_eq!(report.impact_coverage, None);
        assert_eq!(report.n, 200);
        // flags reproduce the aggregate counts exactly
        let flip_count = report.flags.iter().filter(|f| f.decision_flip).count();
        assert_eq!(flip_count as f64 / 200.0, report.impact_strict);
    }

    #[test]
    fn report_on_identity_records_is_all_zero() {
        let records: Vec<_> = (0..5).map(|i| rec(i, 0.8, i, 0.8)).collect();
        let report = build_report(&records, &MetricsConfig::default()).unwrap();
        assert_eq!(report.impact_score, 0.0);
        assert_eq!(report.impact_strict, 0.0);
    }

    #[test]
    fn invalid_tau_is_rejected() {
        for tau in [0.0, -0.5, 1.5] {
            assert!(matches!(
                impact_score(&[rec(0, 0.5, 0, 0.5)], &MetricsConfig { tau }),
                Err(MetricsError::InvalidTau(_))
            ));
        }
    }

    /// Naive double-loop oracle over the coverage definition.
    fn naive_coverage(records: &[EvalRecord]) -> f64 {
        let mut total = 0.0;
        for record in records {
            let (a, c) = record.coverage_pair.as_ref().unwrap();
            let mut inter = 0usize;
            let mut union = 0usize;
            for r in 0..a.height() {
                for col in 0..a.width() {
                    if a.get(r, col) && c.get(r, col) {
                        inter += 1;
                    }
                    if a.get(r, col) || c.get(r, col) {
                        union += 1;
                    }
                }
            }
            if union > 0 {
                total += inter as f64 / union as f64;
            }
        }
        total / records.len() as f64
    }

    proptest! {
        #[test]
        fn strict_is_bounded_by_impact_and_tau_is_monotone(
            seed in 0u64..500,
            n in 1usize..40,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let records: Vec<EvalRecord> = (0..n)
                .map(|_| rec(
                    rng.random_range(0..4),
                    rng.random_range(0.0..=1.0),
                    rng.random_range(0..4),
                    rng.random_range(0.0..=1.0),
                ))
                .collect();
            let mut previous = 0.0f64;
            for tenths in 1..=9 {
                let cfg = MetricsConfig { tau: tenths as f64 / 10.0 };
                let i = impact_score(&records, &cfg).unwrap();
                let strict = impact_score_strict(&records).unwrap();
                prop_assert!(strict <= i);
                prop_assert!((0.0..=1.0).contains(&i));
                prop_assert!(previous <= i, "impact must be non-decreasing in tau");
                previous = i;
            }
        }

        #[test]
        fn metrics_are_permutation_invariant(
            seed in 0u64..200,
            n in 2usize..20,
        ) {
            use rand::{Rng, SeedableRng};
            use rand::seq::SliceRandom;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut records: Vec<EvalRecord> = (0..n)
                .map(|_| {
                    let a = BinaryMask::random(4, 4, rng.random_range(0..=16), rng.random()).unwrap();
                    let c = BinaryMask::random(4, 4, rng.random_range(0..=16), rng.random()).unwrap();
                    rec(
                        rng.random_range(0..4),
                        rng.random_range(0.0..=1.0),
                        rng.random_range(0..4),
                        rng.random_range(0.0..=1.0),
                    )
                    .with_coverage(a, c)
                    .unwrap()
                })
                .collect();
            let cfg = MetricsConfig::default();
            let i = impact_score(&records, &cfg).unwrap();
            let strict = impact_score_strict(&records).unwrap();
            let cov = impact_coverage(&records).unwrap();
            records.shuffle(&mut rng);
            prop_assert_eq!(impact_score(&records, &cfg).unwrap(), i);
            prop_assert_eq!(impact_score_strict(&records).unwrap(), strict);
            let cov2 = impact_coverage(&records).unwrap();
            prop_assert!((cov - cov2).abs() < 1e-12);
        }

        #[test]
        fn coverage_matches_naive_oracle(
            seed in 0u64..300,
            n in 1usize..10,
            h in 1usize..=16,
            w in 1usize..=16,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let records: Vec<EvalRecord> = (0..n)
                .map(|_| {
                    let a = BinaryMask::random(h, w, rng.random_range(0..=h * w), rng.random()).unwrap();
                    let c = BinaryMask::random(h, w, rng.random_range(0..=h * w), rng.random()).unwrap();
                    with_masks(a, c)
                })
                .collect();
            let got = impact_coverage(&records).unwrap();
            prop_assert_eq!(got, naive_coverage(&records));
        }
    }
}
