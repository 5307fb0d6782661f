use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::attention::attend_with_keys;
use crate::model::lstm::lstm_step;
use crate::model::{AttentionRecord, LstmRecord, ModelWeights, TokenId};
use crate::tensor::{affine, Vector};

/// Encoder transcript. Both directions are indexed by input position:
/// `bwd[t]` is the backward-direction step that consumed position `t`
/// (its `h_prev` is the backward state of position `t + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderTape {
    pub fwd: Vec<LstmRecord>,
    pub bwd: Vec<LstmRecord>,
    /// `[fwd_h[t]; bwd_h[t]]`
    pub states: Vec<Vector>,
    /// `U_a·states[t]`
    pub keys: Vec<Vector>,
}

impl EncoderTape {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn fwd_states(&self) -> Vec<&Vector> {
        self.fwd.iter().map(|r| &r.h).collect()
    }

    pub fn bwd_states(&self) -> Vec<&Vector> {
        self.bwd.iter().map(|r| &r.h).collect()
    }

    /// The decoder starts from the last forward hidden and cell state.
    pub fn final_fwd(&self) -> &LstmRecord {
        self.fwd.last().expect("encoder tape is never empty")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStepRecord {
    /// Token fed at this step (START at step 0).
    pub prev_token: TokenId,
    pub prev_embedding: Vector,
    /// Attention read from the previous decoder hidden state.
    pub attention: AttentionRecord,
    /// Decoder cell step on `[prev_embedding; context]`.
    pub lstm: LstmRecord,
    pub logits: Vector,
    /// Greedy choice at this step (argmax of `logits`).
    pub emitted: TokenId,
}

/// Complete transcript of one forward decode.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTape {
    /// Input after truncation/padding to `max_input_len`.
    pub input_ids: Vec<TokenId>,
    /// Length of the caller's input before padding/truncation.
    pub source_len: usize,
    pub truncated: bool,
    pub encoder: EncoderTape,
    pub decoder: Vec<DecoderStepRecord>,
    /// Emitted tokens, STOP excluded.
    pub summary: Vec<TokenId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ProductSite {
    EncoderFwd { position: usize },
    EncoderBwd { position: usize },
    Decoder { step: usize },
    Attention { step: usize, position: usize },
}

/// Which factor of an elementwise product acts as the gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ProductGate {
    /// `h = o ⊙ tanh(c)`
    Output,
    /// `f ⊙ c_prev`
    Forget,
    /// `i ⊙ g`
    Input,
    /// `alpha_j · h_j`
    AttentionWeight,
}

/// One elementwise multiplication executed in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ProductNode {
    pub site: ProductSite,
    pub gate: ProductGate,
}

impl ActivationTape {
    pub fn input_len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn num_steps(&self) -> usize {
        self.decoder.len()
    }

    /// Every product node touched by a decode up to and including `last_step`.
    pub fn product_nodes(&self, last_step: usize) -> Vec<ProductNode> {
        let lstm_gates = [ProductGate::Output, ProductGate::Forget, ProductGate::Input];
        let mut nodes = Vec::new();
        for position in 0..self.input_len() {
            for site in [ProductSite::EncoderFwd { position }, ProductSite::EncoderBwd { position }] {
                nodes.extend(lstm_gates.iter().map(|&gate| ProductNode { site, gate }));
            }
        }
        for step in 0..=last_step.min(self.num_steps().saturating_sub(1)) {
            let site = ProductSite::Decoder { step };
            nodes.extend(lstm_gates.iter().map(|&gate| ProductNode { site, gate }));
            for position in 0..self.input_len() {
                nodes.push(ProductNode {
                    site: ProductSite::Attention { step, position },
                    gate: ProductGate::AttentionWeight,
                });
            }
        }
        nodes.sort();
        nodes
    }

    /// Re-executes every recorded operation from its recorded inputs and
    /// returns the largest absolute deviation from the recorded outputs.
    pub fn replay_deviation(&self, weights: &ModelWeights) -> Result<f64> {
        let mut worst = 0.0_f64;
        let mut track = |a: &Vector, b: &Vector| -> Result<()> {
            if a.len() != b.len() {
                return Err(Error::IncompleteTape(format!("length {} vs {}", a.len(), b.len())));
            }
            for (x, y) in a.iter().zip(b.iter()) {
                worst = worst.max((x - y).abs());
            }
            Ok(())
        };
        let enc = &self.encoder;
        let n = self.input_len();
        if enc.fwd.len() != n || enc.bwd.len() != n || enc.states.len() != n || enc.keys.len() != n {
            return Err(Error::IncompleteTape("encoder length differs from input".into()));
        }
        let hidden = weights.config.hidden_dim;
        let zero = Vector::zeros(hidden);
        for t in 0..n {
            let emb = Vector::from_vec(weights.embedding.row(self.input_ids[t]).to_vec());
            for (records, prev) in [
                (&enc.fwd, if t == 0 { None } else { Some(t - 1) }),
                (&enc.bwd, if t + 1 == n { None } else { Some(t + 1) }),
            ] {
                let r = &records[t];
                track(&r.x, &emb)?;
                let (hp, cp) = prev.map_or((&zero, &zero), |p| (&records[p].h, &records[p].c));
                track(&r.h_prev, hp)?;
                track(&r.c_prev, cp)?;
            }
            let fresh_f = lstm_step(&weights.encoder_fwd, &enc.fwd[t].x, &enc.fwd[t].h_prev, &enc.fwd[t].c_prev)?;
            let fresh_b = lstm_step(&weights.encoder_bwd, &enc.bwd[t].x, &enc.bwd[t].h_prev, &enc.bwd[t].c_prev)?;
            compare_lstm(&fresh_f, &enc.fwd[t], &mut track)?;
            compare_lstm(&fresh_b, &enc.bwd[t], &mut track)?;
            track(&enc.states[t], &enc.fwd[t].h.concat(&enc.bwd[t].h))?;
            track(&enc.keys[t], &Vector::from_vec(weights.attention.u_a.matvec(&enc.states[t])))?;
        }
        let (mut h, mut c) = (&enc.final_fwd().h, &enc.final_fwd().c);
        for step in &self.decoder {
            let emb = Vector::from_vec(weights.embedding.row(step.prev_token).to_vec());
            track(&step.prev_embedding, &emb)?;
            let att = attend_with_keys(&weights.attention, h, &enc.states, &enc.keys)?;
            track(&att.query, &step.attention.query)?;
            for (a, b) in att.features.iter().zip(&step.attention.features) {
                track(a, b)?;
            }
            track(&att.energies, &step.attention.energies)?;
            track(&att.alpha, &step.attention.alpha)?;
            track(&att.context, &step.attention.context)?;
            track(&step.lstm.x, &step.prev_embedding.concat(&step.attention.context))?;
            track(&step.lstm.h_prev, h)?;
            track(&step.lstm.c_prev, c)?;
            let fresh = lstm_step(&weights.decoder, &step.lstm.x, &step.lstm.h_prev, &step.lstm.c_prev)?;
            compare_lstm(&fresh, &step.lstm, &mut track)?;
            let logits = affine(&weights.projection.w_out, &step.lstm.h, &weights.projection.b_out)?;
            track(&logits, &step.logits)?;
            h = &step.lstm.h;
            c = &step.lstm.c;
        }
        Ok(worst)
    }
}

fn compare_lstm(
    a: &LstmRecord,
    b: &LstmRecord,
    track: &mut impl FnMut(&Vector, &Vector) -> Result<()>,
) -> Result<()> {
    for k in 0..4 {
        track(&a.pre[k], &b.pre[k])?;
        track(&a.act[k], &b.act[k])?;
    }
    track(&a.c, &b.c)?;
    track(&a.tanh_c, &b.tanh_c)?;
    track(&a.h, &b.h)
}
