//! Retrieval metrics and the synthetic end-to-end experiment.

mod experiment;

pub use experiment::{
    config_name, run_experiment, Comparison, ConfigResult, ExperimentConfig, ExperimentOutput, ExperimentReport,
    TrainSummary, REPORT_SCHEMA_VERSION,
};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::encoder::Embedding;
use crate::error::{Error, Result};
use crate::retrieval::RetrievalIndex;

/// Fraction of the first `k` labels equal to `query_label`.
pub fn precision_at_k<T: PartialEq>(ranked_labels: &[T], query_label: &T, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if ranked_labels.len() < k {
        return Err(Error::InvalidArgument(format!(
            "ranking has {} entries, P@{k} needs {k}",
            ranked_labels.len()
        )));
    }
    let hits = ranked_labels[..k].iter().filter(|l| *l == query_label).count();
    Ok(hits as f64 / k as f64)
}

/// Per-query P@k with the query's own id excluded from its ranking. Entries
/// without a class label never count as hits.
pub fn query_precisions(idx: &RetrievalIndex, queries: &[(Embedding, u8)], k: usize) -> Result<Vec<f64>> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no queries".into()));
    }
    queries
        .iter()
        .map(|(q, label)| {
            let ranked = idx.query_excluding(&q.vector, k, Some(&q.id))?;
            let labels: Vec<Option<u8>> = ranked.iter().map(|r| r.meta.class_label).collect();
            precision_at_k(&labels, &Some(*label), k)
        })
        .collect()
}

/// Mean of [`query_precisions`].
pub fn mean_precision(idx: &RetrievalIndex, queries: &[(Embedding, u8)], k: usize) -> Result<f64> {
    let p = query_precisions(idx, queries, k)?;
    Ok(p.iter().sum::<f64>() / p.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    pub statistic: f64,
    pub p_value: f64,
    /// a correct, b wrong
    pub b01: usize,
    /// a wrong, b correct
    pub b10: usize,
}

/// Continuity-corrected McNemar test on paired outcomes, p-value from the
/// chi-square distribution with one degree of freedom.
pub fn mcnemar_test(correct_a: &[bool], correct_b: &[bool]) -> Result<McNemar> {
    if correct_a.len() != correct_b.len() {
        return Err(Error::Dimension { expected: correct_a.len(), found: correct_b.len() });
    }
    if correct_a.is_empty() {
        return Err(Error::InvalidArgument("no paired outcomes".into()));
    }
    let b01 = correct_a.iter().zip(correct_b).filter(|(a, b)| **a && !**b).count();
    let b10 = correct_a.iter().zip(correct_b).filter(|(a, b)| !**a && **b).count();
    if b01 + b10 == 0 {
        return Ok(McNemar { statistic: 0.0, p_value: 1.0, b01, b10 });
    }
    let d = (b01 as f64 - b10 as f64).abs() - 1.0;
    let statistic = d * d / (b01 + b10) as f64;
    let p_value = ChiSquared::new(1.0).expect("one degree of freedom").sf(statistic);
    Ok(McNemar { statistic, p_value, b01, b10 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderKind, Representation};
    use crate::retrieval::build_index;
    use crate::vignette::VignetteMeta;
    use proptest::prelude::*;

    #[test]
    fn precision_examples() {
        let q = 3u8;
        assert_eq!(precision_at_k(&[3, 3, 3, 3, 3, 1], &q, 5).unwrap(), 1.0);
        assert_eq!(precision_at_k(&[0, 1, 2, 4, 5], &q, 5).unwrap(), 0.0);
        assert_eq!(precision_at_k(&[3, 1, 3, 2, 3], &q, 5).unwrap(), 0.6);
        assert!(precision_at_k(&[3, 3], &q, 5).is_err());
    }

    /// chi-square(1) survival function is erfc(sqrt(x / 2)).
    fn sf_oracle(x: f64) -> f64 {
        statrs::function::erf::erfc((x / 2.0).sqrt())
    }

    #[test]
    fn mcnemar_examples() {
        let same = [true, false, true];
        let r = mcnemar_test(&same, &same).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));

        let a = vec![true; 10];
        let b = vec![false; 10];
        let r = mcnemar_test(&a, &b).unwrap();
        assert_eq!(r.statistic, 8.1);
        assert!(r.p_value < 0.01);
        assert!((r.p_value - sf_oracle(8.1)).abs() < 1e-12);
        assert!((r.p_value - 0.0044).abs() < 5e-5);

        for n in 1..20usize {
            let a: Vec<bool> = (0..2 * n).map(|i| i < n).collect();
            let b: Vec<bool> = (0..2 * n).map(|i| i >= n).collect();
            let r = mcnemar_test(&a, &b).unwrap();
            assert!((r.statistic - 1.0 / (2 * n) as f64).abs() < 1e-15);
            assert!(r.p_value > 0.01);
        }
        assert!(mcnemar_test(&[true], &[true, false]).is_err());
    }

    proptest! {
        #[test]
        fn mcnemar_symmetric(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..60)) {
            let (a, b): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            let x = mcnemar_test(&a, &b).unwrap();
            let y = mcnemar_test(&b, &a).unwrap();
            prop_assert_eq!(x.statistic, y.statistic);
            prop_assert_eq!(x.p_value, y.p_value);
            prop_assert!((0.0..=1.0).contains(&x.p_value));
        }

        #[test]
        fn precision_in_unit_interval(labels in prop::collection::vec(0u8..4, 5..30), q in 0u8..4, k in 1usize..5) {
            let p = precision_at_k(&labels, &q, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    fn emb(id: &str, v: Vec<f64>) -> Embedding {
        Embedding {
            id: id.into(),
            vector: v,
            representation: Representation::Vig,
            encoder: EncoderKind::Baseline,
            version: "t".into(),
        }
    }

    #[test]
    fn mean_precision_examples() {
        let items: Vec<_> = (0..6)
            .map(|i| {
                (
                    emb(&format!("{i}"), vec![1.0, i as f64]),
                    VignetteMeta { class_label: Some(2), ..Default::default() },
                )
            })
            .collect();
        let idx = build_index(items.clone()).unwrap();
        let queries: Vec<_> = items.iter().map(|(e, _)| (e.clone(), 2u8)).collect();
        for k in 1..=5 {
            assert_eq!(mean_precision(&idx, &queries, k).unwrap(), 1.0);
        }
        // the query is excluded, so only five others remain
        assert!(mean_precision(&idx, &queries, 6).is_err());

        let single = [(queries[0].0.clone(), 7u8)];
        let p = query_precisions(&idx, &single, 3).unwrap();
        assert_eq!(mean_precision(&idx, &single, 3).unwrap(), p[0]);
        assert_eq!(p[0], 0.0);

        let mut rev = queries.clone();
        rev.reverse();
        assert_eq!(mean_precision(&idx, &rev, 2).unwrap(), mean_precision(&idx, &queries, 2).unwrap());
    }
}
