//! Similarity scoring and top-k ranking over index vectors.

use std::collections::HashSet;
use thiserror::Error;

/// Cosine similarity. Zero-norm vectors score 0 against everything.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Per-modality weights for multimodal similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentWeights(pub Vec<f64>);

impl ComponentWeights {
    /// Weights must be finite and nonnegative with a positive sum.
    pub fn validate(&self) -> Result<(), SimilarityError> {
        let total: f64 = self.0.iter().sum();
        if self.0.is_empty() || !(total > 0.0) || self.0.iter().any(|&w| w < 0.0 || !w.is_finite())
        {
            return Err(SimilarityError::BadWeights);
        }
        Ok(())
    }
}

#[derive(Error, Debug, PartialEq)]
pub enum SimilarityError {
    #[error("expected {expected} vector components, got {got}")]
    ComponentMismatch { expected: usize, got: usize },
    #[error("weights must be nonnegative with a positive sum")]
    BadWeights,
}

/// Weight-averaged cosine over per-modality vector components.
pub fn weighted_similarity(
    a: &[&[f64]],
    b: &[&[f64]],
    weights: &ComponentWeights,
) -> Result<f64, SimilarityError> {
    if a.len() != weights.0.len() || b.len() != weights.0.len() {
        return Err(SimilarityError::ComponentMismatch {
            expected: weights.0.len(),
            got: a.len().min(b.len()),
        });
    }
    weights.validate()?;
    let total: f64 = weights.0.iter().sum();
    let mut acc = 0.0;
    for ((&va, &vb), &w) in a.iter().zip(b).zip(&weights.0) {
        acc += w * cosine_sim(va, vb);
    }
    Ok(acc / total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub id: String,
    pub score: f64,
    /// 1-based position in the ranking.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    pub results: Vec<RankedResult>,
    /// True when fewer than k candidates were available.
    pub short: bool,
}

/// Rank candidates by similarity to the query, descending, with ties broken
/// by ascending id. Excluded ids never appear.
pub fn top_k<'a, I>(query: &[f64], candidates: I, k: usize, exclude: &HashSet<String>) -> TopK
where
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    let mut scored: Vec<(f64, &str)> = candidates
        .into_iter()
        .filter(|(id, _)| !exclude.contains(*id))
        .map(|(id, v)| (cosine_sim(query, v), id))
        .collect();
    scored.sort_unstable_by(|(sa, ia), (sb, ib)| {
        sb.partial_cmp(sa)
            .expect("similarity scores are finite")
            .then_with(|| ia.cmp(ib))
    });
    let short = scored.len() < k;
    scored.truncate(k);
    TopK {
        results: scored
            .into_iter()
            .enumerate()
            .map(|(i, (score, id))| RankedResult {
                id: id.to_string(),
                score,
                rank: i + 1,
            })
            .collect(),
        short,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        assert!((cosine_sim(&[1.0, 0.0], &[1.0, 0.0]) - 1.0).abs() < 1e-12);
        assert!((cosine_sim(&[1.0, 0.0], &[0.0, 1.0])).abs() < 1e-12);
        assert!((cosine_sim(&[1.0, 0.0], &[-1.0, 0.0]) + 1.0).abs() < 1e-12);
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        // scale invariance
        let a = [0.3, 1.7, 0.2];
        let b = [1.1, 0.4, 2.2];
        let scaled: Vec<f64> = b.iter().map(|x| x * 7.5).collect();
        assert!((cosine_sim(&a, &b) - cosine_sim(&a, &scaled)).abs() < 1e-12);
    }

    #[test]
    fn weighted_single_component_matches_cosine() {
        let a = [0.5, 0.2, 0.9];
        let b = [0.1, 0.8, 0.3];
        let w = ComponentWeights(vec![1.0]);
        let got = weighted_similarity(&[&a], &[&b], &w).unwrap();
        assert!((got - cosine_sim(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn weighted_averages_components() {
        let a1 = [1.0, 0.0];
        let a2 = [0.0, 1.0];
        let w = ComponentWeights(vec![3.0, 1.0]);
        // component 1 similarity 1.0, component 2 similarity 0.0
        let got = weighted_similarity(&[&a1, &a2], &[&a1, &a1], &w).unwrap();
        assert!((got - 0.75).abs() < 1e-12);
    }

    #[test]
    fn weighted_rejects_bad_arguments() {
        let a = [1.0];
        let w = ComponentWeights(vec![1.0, 1.0]);
        assert!(matches!(
            weighted_similarity(&[&a], &[&a], &w),
            Err(SimilarityError::ComponentMismatch { .. })
        ));
        let w0 = ComponentWeights(vec![0.0]);
        assert_eq!(
            weighted_similarity(&[&a[..]], &[&a[..]], &w0),
            Err(SimilarityError::BadWeights)
        );
    }

    fn make_candidates() -> Vec<(String, Vec<f64>)> {
        vec![
            ("b".into(), vec![1.0, 0.0]),
            ("a".into(), vec![1.0, 0.0]),
            ("c".into(), vec![0.0, 1.0]),
            ("d".into(), vec![0.7, 0.7]),
        ]
    }

    #[test]
    fn top_k_orders_by_score_then_id() {
        let cands = make_candidates();
        let iter = cands.iter().map(|(id, v)| (id.as_str(), v.as_slice()));
        let got = top_k(&[1.0, 0.0], iter, 3, &HashSet::new());
        let ids: Vec<&str> = got.results.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "d"]);
        assert_eq!(
            got.results.iter().map(|r| r.rank).collect::<Vec<_>>(),
            [1, 2, 3]
        );
        assert!(!got.short);
    }

    #[test]
    fn top_k_applies_exclusions_and_short_flag() {
        let cands = make_candidates();
        let exclude: HashSet<String> = ["a", "d"].iter().map(|s| s.to_string()).collect();
        let iter = cands.iter().map(|(id, v)| (id.as_str(), v.as_slice()));
        let got = top_k(&[1.0, 0.0], iter, 5, &exclude);
        let ids: Vec<&str> = got.results.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["b", "c"]);
        assert!(got.short);
    }

    #[test]
    fn scores_stay_in_unit_interval() {
        let cands = make_candidates();
        let iter = cands.iter().map(|(id, v)| (id.as_str(), v.as_slice()));
        for r in top_k(&[0.3, 0.9], iter, 4, &HashSet::new()).results {
            assert!((-1.0..=1.0).contains(&r.score));
        }
    }
}
