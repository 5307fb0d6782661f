//! Layer-wise relevance propagation from one emitted token back to the input.
//!
//! Relevance starts as the emitted token's pre-softmax logit and flows through
//! the output projection, the decoder recurrence (all earlier steps), the
//! attention reads at each of those steps, and both encoder directions. It
//! ends on the encoder's embedding vectors, where it is summed per position.
//!
//! Affine maps use the ε-rule, elementwise products the gate rule (the gate
//! factor receives nothing), and nonlinearities pass relevance through
//! unchanged.

mod attention;
mod lstm;
mod propagate;
mod rules;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::ProductNode;
use crate::model::TokenId;
use crate::tensor::Vector;

pub use attention::lrp_attention_backward;
pub use lstm::{lrp_lstm_backward, LstmLrpOptions, LstmRelevance};
pub use propagate::{propagate, relevance_for_token, relevance_stack};
pub use rules::{lrp_gate_product, lrp_linear, GateSplit};

/// Propagation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrpConfig {
    /// Stabilizer added to denominators (with the sign of the pre-activation).
    pub epsilon: f64,
    /// When false, no relevance enters the attention path; the attention
    /// context is treated as a constant input of the decoder.
    pub attention_path_enabled: bool,
    /// Decoder steps to unroll back from the explained step; `None` = all.
    pub steps_back: Option<usize>,
    /// Redistribute bias terms as `b_j / D` over the fan-in.
    pub bias_redistribution: bool,
}

impl Default for LrpConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            attention_path_enabled: true,
            steps_back: None,
            bias_redistribution: true,
        }
    }
}

/// Relevance recorded at every gate-side factor of an elementwise product.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GateLog {
    entries: BTreeMap<ProductNode, f64>,
}

impl GateLog {
    /// Stores the largest absolute relevance the gate factor received.
    pub fn record(&mut self, node: ProductNode, gate_relevance: &Vector) {
        let slot = self.entries.entry(node).or_insert(0.0);
        *slot = slot.max(gate_relevance.max_abs());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ProductNode> {
        self.entries.keys()
    }

    pub fn total_abs(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ProductNode, &f64)> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Direction {
    Forward,
    Backward,
}

/// Tape node that can carry relevance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum RelevanceNode {
    /// Logit vector of a decoder step (one nonzero entry: the emitted token).
    Logit { step: usize },
    DecoderHidden { step: usize },
    DecoderCell { step: usize },
    /// Embedding of the token fed into a decoder step.
    DecoderPrevEmbedding { step: usize },
    Context { step: usize },
    DecoderInitialHidden,
    DecoderInitialCell,
    /// Concatenated bidirectional state.
    EncoderState { position: usize },
    EncoderHidden { direction: Direction, position: usize },
    EncoderCell { direction: Direction, position: usize },
    /// Input embedding, both directions summed.
    Embedding { position: usize },
    EncoderInitialHidden { direction: Direction },
    EncoderInitialCell { direction: Direction },
}

/// Where the injected relevance ended up.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RelevanceLedger {
    pub injected: f64,
    /// Sum of relevance over input tokens.
    pub input_tokens: f64,
    /// Relevance on decoder-side previous-token embeddings.
    pub previous_tokens: f64,
    /// Relevance on the encoders' zero initial states.
    pub initial_states: f64,
    /// Relevance cut off by `steps_back`.
    pub truncated: f64,
    /// Relevance that entered the attention context vectors.
    pub attention_path: f64,
}

impl RelevanceLedger {
    /// `input_tokens + previous_tokens + initial_states + truncated`.
    pub fn accounted(&self) -> f64 {
        self.input_tokens + self.previous_tokens + self.initial_states + self.truncated
    }
}

/// All relevance produced by one propagation pass.
#[derive(Debug, Clone)]
pub struct RelevancePacket {
    pub output_step: usize,
    pub token: TokenId,
    pub nodes: BTreeMap<RelevanceNode, Vector>,
    pub gates: GateLog,
    pub ledger: RelevanceLedger,
    /// Per input position, summed over embedding dimensions.
    pub token_relevance: Vec<f64>,
}

impl RelevancePacket {
    pub fn node(&self, node: RelevanceNode) -> Option<&Vector> {
        self.nodes.get(&node)
    }
}

/// Signed relevance per input position for one generated token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRelevance {
    pub relevance: Vec<f64>,
    pub output_step: usize,
    pub token: TokenId,
}

impl TokenRelevance {
    pub fn len(&self) -> usize {
        self.relevance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevance.is_empty()
    }
}
