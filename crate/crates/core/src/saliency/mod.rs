//! Saliency stacks: aggregation into one ranking per text, and the stack
//! diagnostics (how similar the per-token maps are to each other, and how
//! they relate to the attention weights of the same step).

mod heatmap;
pub mod stats;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lrp::TokenRelevance;
use crate::model::vocab::{START, STOP, UNKNOWN};
use crate::model::{ActivationTape, TokenId};

pub use heatmap::{render_ansi, render_html, HeatmapRow};

/// One relevance map per generated token, all over the same input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyStack {
    pub maps: Vec<TokenRelevance>,
    pub input_ids: Vec<TokenId>,
    pub summary: Vec<TokenId>,
}

impl SaliencyStack {
    pub fn new(maps: Vec<TokenRelevance>, input_ids: Vec<TokenId>, summary: Vec<TokenId>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::EmptyStack);
        }
        if let Some(bad) = maps.iter().find(|m| m.len() != input_ids.len()) {
            return Err(Error::InvalidConfig(format!(
                "map for step {} has length {}, input has {}",
                bad.output_step,
                bad.len(),
                input_ids.len()
            )));
        }
        Ok(Self { maps, input_ids, summary })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.input_ids.len()
    }
}

/// How per-token maps are combined into one score per input position.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub enum Aggregation {
    /// Mean of `|R|`.
    #[default]
    AbsMean,
    /// Mean of signed `R`.
    RawMean,
    /// Mean of `R` for positive values and `γ·|R|` for negative ones.
    ScaledAbs(f64),
}

/// Negative-relevance factor used when `scaled` is given without a value.
pub const DEFAULT_NEGATIVE_SCALE: f64 = 0.5;

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregation::AbsMean => write!(f, "abs"),
            Aggregation::RawMean => write!(f, "raw"),
            Aggregation::ScaledAbs(g) => write!(f, "scaled:{g}"),
        }
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "abs" => Ok(Aggregation::AbsMean),
            "raw" => Ok(Aggregation::RawMean),
            "scaled" => Ok(Aggregation::ScaledAbs(DEFAULT_NEGATIVE_SCALE)),
            other => {
                let factor = other
                    .strip_prefix("scaled:")
                    .and_then(|g| g.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown aggregation {other:?}")))?;
                if !(0.0..=1.0).contains(&factor) {
                    return Err(Error::InvalidScale(factor));
                }
                Ok(Aggregation::ScaledAbs(factor))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedSaliency {
    pub scores: Vec<f64>,
    pub mode: Aggregation,
    pub input_ids: Vec<TokenId>,
}

pub fn aggregate(stack: &SaliencyStack, mode: Aggregation) -> Result<AggregatedSaliency> {
    if stack.maps.is_empty() {
        return Err(Error::EmptyStack);
    }
    let transform: Box<dyn Fn(f64) -> f64> = match mode {
        Aggregation::AbsMean => Box::new(f64::abs),
        Aggregation::RawMean => Box::new(|r| r),
        Aggregation::ScaledAbs(g) => {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::InvalidScale(g));
            }
            Box::new(move |r: f64| if r >= 0.0 { r } else { g * r.abs() })
        }
    };
    let count = stack.maps.len() as f64;
    let scores = (0..stack.input_len())
        .map(|t| stack.maps.iter().map(|m| transform(m.relevance[t])).sum::<f64>() / count)
        .collect();
    Ok(AggregatedSaliency {
        scores,
        mode,
        input_ids: stack.input_ids.clone(),
    })
}

/// Token ids never offered for deletion: padding/unknown and the markers.
pub fn special_tokens() -> BTreeSet<TokenId> {
    [UNKNOWN, START, STOP].into_iter().collect()
}

/// Positions by descending score, skipping positions that hold an excluded
/// id. Ties go to the lower position.
pub fn rank_tokens(agg: &AggregatedSaliency, exclude: &BTreeSet<TokenId>) -> Vec<usize> {
    let mut positions: Vec<usize> = (0..agg.scores.len())
        .filter(|&t| !exclude.contains(&agg.input_ids[t]))
        .collect();
    positions.sort_by(|&a, &b| agg.scores[b].total_cmp(&agg.scores[a]).then(a.cmp(&b)));
    positions
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStats {
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Pairs that entered the statistics.
    pub pairs: usize,
    /// Pairs skipped because one of the maps was all zeros.
    pub skipped: usize,
}

/// Cosine similarity over all unordered pairs of maps.
pub fn map_pairwise_similarity(stack: &SaliencyStack) -> Result<SimilarityStats> {
    if stack.maps.len() < 2 {
        return Err(Error::TooFewMaps {
            needed: 2,
            got: stack.maps.len(),
        });
    }
    let mut values = Vec::new();
    let mut skipped = 0;
    for (i, a) in stack.maps.iter().enumerate() {
        for b in &stack.maps[i + 1..] {
            match stats::cosine(&a.relevance, &b.relevance) {
                Some(c) => values.push(c),
                None => skipped += 1,
            }
        }
    }
    Ok(SimilarityStats {
        mean: stats::mean(&values),
        min: values.iter().copied().reduce(f64::min),
        max: values.iter().copied().reduce(f64::max),
        pairs: values.len(),
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCorrelation {
    pub step: usize,
    /// `None` when either side has zero variance.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionCorrelation {
    pub steps: Vec<StepCorrelation>,
    pub mean_pearson: Option<f64>,
    pub mean_spearman: Option<f64>,
    pub undefined_steps: usize,
}

/// Correlates each step's attention weights with that step's `|map|`.
pub fn attention_saliency_correlation(stack: &SaliencyStack, tape: &ActivationTape) -> Result<AttentionCorrelation> {
    let mut steps = Vec::with_capacity(stack.maps.len());
    for map in &stack.maps {
        let record = tape.decoder.get(map.output_step).ok_or(Error::StepOutOfRange {
            step: map.output_step,
            decoded: tape.num_steps(),
        })?;
        let alpha = &record.attention.alpha;
        if alpha.len() != map.len() {
            return Err(Error::IncompleteTape(format!(
                "attention over {} positions, map over {}",
                alpha.len(),
                map.len()
            )));
        }
        let magnitude: Vec<f64> = map.relevance.iter().map(|r| r.abs()).collect();
        steps.push(StepCorrelation {
            step: map.output_step,
            pearson: stats::pearson(alpha, &magnitude),
            spearman: stats::spearman(alpha, &magnitude),
        });
    }
    let pearsons: Vec<f64> = steps.iter().filter_map(|s| s.pearson).collect();
    let spearmans: Vec<f64> = steps.iter().filter_map(|s| s.spearman).collect();
    Ok(AttentionCorrelation {
        mean_pearson: stats::mean(&pearsons),
        mean_spearman: stats::mean(&spearmans),
        undefined_steps: steps.iter().filter(|s| s.pearson.is_none()).count(),
        steps,
    })
}
