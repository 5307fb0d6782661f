use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::vocab::UNKNOWN;
use crate::model::TokenId;

/// How much a perturbed summary departs from the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationMetrics {
    /// Jaccard index of the two token-type sets (1 when both are empty).
    pub token_jaccard: f64,
    pub unigram_overlap_f1: f64,
    /// Share of UNKNOWN ids in the perturbed summary.
    pub unknown_rate: f64,
    /// `1 − distinct trigrams / trigrams` of the perturbed summary.
    pub repetition_rate: f64,
    /// Set when either summary is empty.
    pub degenerate: bool,
}

pub fn token_jaccard(a: &[TokenId], b: &[TokenId]) -> f64 {
    let sa: BTreeSet<_> = a.iter().collect();
    let sb: BTreeSet<_> = b.iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

fn counts(ids: &[TokenId]) -> BTreeMap<TokenId, usize> {
    let mut m = BTreeMap::new();
    for &id in ids {
        *m.entry(id).or_insert(0) += 1;
    }
    m
}

pub fn unigram_f1(reference: &[TokenId], candidate: &[TokenId]) -> f64 {
    if reference.is_empty() && candidate.is_empty() {
        return 1.0;
    }
    if reference.is_empty() || candidate.is_empty() {
        return 0.0;
    }
    let (cr, cc) = (counts(reference), counts(candidate));
    let overlap: usize = cc.iter().map(|(id, &n)| n.min(cr.get(id).copied().unwrap_or(0))).sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / candidate.len() as f64;
    let recall = overlap as f64 / reference.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn repetition_rate(ids: &[TokenId]) -> f64 {
    if ids.len() < 3 {
        return 0.0;
    }
    let trigrams: Vec<&[TokenId]> = ids.windows(3).collect();
    let distinct: BTreeSet<&[TokenId]> = trigrams.iter().copied().collect();
    1.0 - distinct.len() as f64 / trigrams.len() as f64
}

pub fn degradation_metrics(baseline: &[TokenId], perturbed: &[TokenId]) -> DegradationMetrics {
    let unknown_rate = if perturbed.is_empty() {
        0.0
    } else {
        perturbed.iter().filter(|&&id| id == UNKNOWN).count() as f64 / perturbed.len() as f64
    };
    DegradationMetrics {
        token_jaccard: token_jaccard(baseline, perturbed),
        unigram_overlap_f1: unigram_f1(baseline, perturbed),
        unknown_rate,
        repetition_rate: repetition_rate(perturbed),
        degenerate: baseline.is_empty() || perturbed.is_empty(),
    }
}
