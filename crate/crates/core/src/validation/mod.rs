//! Counterfactual deletion of top- and bottom-ranked input tokens, and a
//! brute-force occlusion oracle.

mod metrics;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lrp::{relevance_stack, LrpConfig};
use crate::model::vocab::UNKNOWN;
use crate::model::{decode_greedy, prepare_input, ActivationTape, ModelWeights, TokenId, Vocab};
use crate::saliency::{aggregate, rank_tokens, special_tokens, stats, AggregatedSaliency, Aggregation, SaliencyStack};

pub use metrics::{degradation_metrics, repetition_rate, token_jaccard, unigram_f1, DegradationMetrics};

/// Headline deletion fraction.
pub const DEFAULT_FRACTION: f64 = 0.07;
pub const DEFAULT_FRACTIONS: [f64; 5] = [0.01, 0.03, 0.05, 0.07, 0.10];
/// Minimum `jaccard(control) − jaccard(important)` for a truthful verdict.
pub const VERDICT_MARGIN: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeletionDirection {
    MostImportant,
    LeastImportant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeletionMode {
    Remove,
    ReplaceWithUnknown,
}

impl fmt::Display for DeletionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeletionMode::Remove => "remove",
            DeletionMode::ReplaceWithUnknown => "replace",
        })
    }
}

impl FromStr for DeletionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "remove" => Ok(DeletionMode::Remove),
            "replace" | "replace_with_unknown" => Ok(DeletionMode::ReplaceWithUnknown),
            other => Err(Error::InvalidDeletion(format!("unknown deletion mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeletionSpec {
    pub fraction: f64,
    pub direction: DeletionDirection,
    pub mode: DeletionMode,
}

impl Default for DeletionSpec {
    fn default() -> Self {
        Self {
            fraction: DEFAULT_FRACTION,
            direction: DeletionDirection::MostImportant,
            mode: DeletionMode::Remove,
        }
    }
}

/// `round_half_up(fraction · effective_len)`; below one is an error.
pub fn deletion_count(fraction: f64, effective_len: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidDeletion(format!("fraction {fraction} outside (0, 1]")));
    }
    let count = (fraction * effective_len as f64 + 0.5).floor() as usize;
    if count == 0 {
        return Err(Error::InvalidDeletion(format!(
            "fraction {fraction} of {effective_len} tokens rounds to zero deletions"
        )));
    }
    Ok(count.min(effective_len))
}

/// Positions chosen by `spec` from a ranking (most important first), ascending.
pub fn select_positions(ranking: &[usize], spec: &DeletionSpec) -> Result<Vec<usize>> {
    let k = deletion_count(spec.fraction, ranking.len())?;
    let mut chosen: Vec<usize> = match spec.direction {
        DeletionDirection::MostImportant => ranking[..k].to_vec(),
        DeletionDirection::LeastImportant => ranking[ranking.len() - k..].to_vec(),
    };
    chosen.sort_unstable();
    Ok(chosen)
}

/// Removes (and re-pads with UNKNOWN) or blanks the given positions.
pub fn delete_tokens(ids: &[TokenId], positions: &[usize], mode: DeletionMode) -> Result<Vec<TokenId>> {
    for &p in positions {
        let id = *ids.get(p).ok_or(Error::PositionOutOfRange {
            position: p,
            len: ids.len(),
        })?;
        if Vocab::is_special(id) {
            return Err(Error::SpecialPosition { position: p, id });
        }
    }
    let mut out: Vec<TokenId> = match mode {
        DeletionMode::Remove => ids
            .iter()
            .enumerate()
            .filter(|(p, _)| !positions.contains(p))
            .map(|(_, &id)| id)
            .collect(),
        DeletionMode::ReplaceWithUnknown => ids.to_vec(),
    };
    match mode {
        DeletionMode::Remove => out.resize(ids.len(), UNKNOWN),
        DeletionMode::ReplaceWithUnknown => positions.iter().for_each(|&p| out[p] = UNKNOWN),
    }
    Ok(out)
}

/// One decoded text with its relevance maps and ranking.
#[derive(Debug, Clone)]
pub struct ExplainedText {
    /// Input after truncation and padding.
    pub input_ids: Vec<TokenId>,
    pub tape: ActivationTape,
    pub stack: SaliencyStack,
    pub saliency: AggregatedSaliency,
    /// Non-special positions, most important first.
    pub ranking: Vec<usize>,
}

/// Decode, relevance maps, aggregation and ranking. Fails with
/// [`Error::EmptyStack`] when the summary is empty.
pub fn explain_text(
    ids: &[TokenId],
    weights: &ModelWeights,
    lrp: &LrpConfig,
    aggregation: Aggregation,
) -> Result<ExplainedText> {
    let tape = decode_greedy(ids, weights)?;
    let stack = relevance_stack(&tape, weights, lrp)?;
    let saliency = aggregate(&stack, aggregation)?;
    let ranking = rank_tokens(&saliency, &special_tokens());
    Ok(ExplainedText {
        input_ids: tape.input_ids.clone(),
        tape,
        stack,
        saliency,
        ranking,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionOutcome {
    pub spec: DeletionSpec,
    pub deleted_positions: Vec<usize>,
    pub perturbed_summary: Vec<TokenId>,
    pub metrics: DegradationMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Truthful,
    NotDistinguishable,
}

impl Verdict {
    pub fn from_outcomes(important: &DegradationMetrics, control: &DegradationMetrics) -> Self {
        if control.token_jaccard - important.token_jaccard >= VERDICT_MARGIN {
            Verdict::Truthful
        } else {
            Verdict::NotDistinguishable
        }
    }
}

/// Both deletion directions at one fraction and mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionResult {
    pub baseline_summary: Vec<TokenId>,
    pub most_important: DeletionOutcome,
    pub least_important: DeletionOutcome,
    pub verdict: Verdict,
}

fn run_direction(
    explained: &ExplainedText,
    weights: &ModelWeights,
    spec: DeletionSpec,
) -> Result<DeletionOutcome> {
    let positions = select_positions(&explained.ranking, &spec)?;
    let perturbed = delete_tokens(&explained.input_ids, &positions, spec.mode)?;
    let summary = decode_greedy(&perturbed, weights)?.summary;
    Ok(DeletionOutcome {
        spec,
        metrics: degradation_metrics(&explained.tape.summary, &summary),
        deleted_positions: positions,
        perturbed_summary: summary,
    })
}

/// Deletes the top and the bottom `fraction` of the ranking and re-decodes.
pub fn deletion_from_ranking(
    explained: &ExplainedText,
    weights: &ModelWeights,
    fraction: f64,
    mode: DeletionMode,
) -> Result<DeletionResult> {
    let spec = |direction| DeletionSpec {
        fraction,
        direction,
        mode,
    };
    let most = run_direction(explained, weights, spec(DeletionDirection::MostImportant))?;
    let least = run_direction(explained, weights, spec(DeletionDirection::LeastImportant))?;
    Ok(DeletionResult {
        baseline_summary: explained.tape.summary.clone(),
        verdict: Verdict::from_outcomes(&most.metrics, &least.metrics),
        most_important: most,
        least_important: least,
    })
}

/// Full pipeline for one text: explain with abs-mean aggregation, then delete.
pub fn run_deletion_experiment(
    ids: &[TokenId],
    weights: &ModelWeights,
    lrp: &LrpConfig,
    fraction: f64,
    mode: DeletionMode,
) -> Result<DeletionResult> {
    let explained = explain_text(ids, weights, lrp, Aggregation::AbsMean)?;
    deletion_from_ranking(&explained, weights, fraction, mode)
}

/// `1 − jaccard(baseline, summary with position t set to UNKNOWN)` for every
/// position; positions already holding UNKNOWN score 0.
pub fn occlusion_importance(ids: &[TokenId], weights: &ModelWeights) -> Result<Vec<f64>> {
    let prepared = prepare_input(ids, &weights.config).ids;
    let baseline = decode_greedy(&prepared, weights)?.summary;
    prepared
        .iter()
        .enumerate()
        .map(|(t, &id)| {
            if id == UNKNOWN {
                return Ok(0.0);
            }
            let mut occluded = prepared.clone();
            occluded[t] = UNKNOWN;
            let summary = decode_greedy(&occluded, weights)?.summary;
            Ok(1.0 - token_jaccard(&baseline, &summary))
        })
        .collect()
}

/// Highest-scoring position among `candidates`; ties go to the lower position.
pub fn top_position(scores: &[f64], candidates: &[usize]) -> Option<usize> {
    candidates
        .iter()
        .copied()
        .min_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)))
}

/// Spearman correlation between occlusion and LRP scores over the ranked positions.
pub fn oracle_agreement(explained: &ExplainedText, occlusion: &[f64]) -> Option<f64> {
    let mut positions = explained.ranking.clone();
    positions.sort_unstable();
    let lrp: Vec<f64> = positions.iter().map(|&p| explained.saliency.scores[p]).collect();
    let occ: Vec<f64> = positions.iter().map(|&p| occlusion[p]).collect();
    stats::spearman(&occ, &lrp)
}

/// One line of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub text_id: usize,
    pub fraction: f64,
    pub direction: DeletionDirection,
    pub mode: DeletionMode,
    pub deleted_positions: Vec<usize>,
    pub baseline_summary: Vec<TokenId>,
    pub perturbed_summary: Vec<TokenId>,
    pub metrics: DegradationMetrics,
    pub verdict: Verdict,
}

impl DeletionResult {
    /// The two result lines, most-important first.
    pub fn records(&self, text_id: usize) -> [ResultRecord; 2] {
        [&self.most_important, &self.least_important].map(|o| ResultRecord {
            text_id,
            fraction: o.spec.fraction,
            direction: o.spec.direction,
            mode: o.spec.mode,
            deleted_positions: o.deleted_positions.clone(),
            baseline_summary: self.baseline_summary.clone(),
            perturbed_summary: o.perturbed_summary.clone(),
            metrics: o.metrics,
            verdict: self.verdict,
        })
    }
}
