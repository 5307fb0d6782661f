use crate::error::{Error, Result};
use crate::model::attention::{attend_with_keys, attention_keys};
use crate::model::lstm::lstm_step;
use crate::model::tape::{ActivationTape, DecoderStepRecord, EncoderTape};
use crate::model::vocab::{START, STOP, UNKNOWN};
use crate::model::{ModelConfig, ModelWeights, TokenId};
use crate::tensor::{affine, argmax, Vector};

/// An input sequence fitted to `max_input_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedInput {
    pub ids: Vec<TokenId>,
    pub source_len: usize,
    pub truncated: bool,
}

/// Truncates long inputs and pads short ones with the UNKNOWN id.
pub fn prepare_input(ids: &[TokenId], config: &ModelConfig) -> PreparedInput {
    let max = config.max_input_len;
    let mut padded: Vec<TokenId> = ids.iter().copied().take(max).collect();
    padded.resize(max, UNKNOWN);
    PreparedInput {
        ids: padded,
        source_len: ids.len(),
        truncated: ids.len() > max,
    }
}

fn check_ids(ids: &[TokenId], vocab_size: usize) -> Result<()> {
    match ids.iter().position(|&id| id >= vocab_size) {
        Some(position) => Err(Error::TokenOutOfRange {
            position,
            id: ids[position],
            vocab_size,
        }),
        None => Ok(()),
    }
}

fn embedding_of(weights: &ModelWeights, id: TokenId) -> Vector {
    Vector::from_vec(weights.embedding.row(id).to_vec())
}

/// Embedding rows for each id.
pub fn embed_sequence(ids: &[TokenId], weights: &ModelWeights) -> Result<Vec<Vector>> {
    check_ids(ids, weights.embedding.rows())?;
    Ok(ids.iter().map(|&id| embedding_of(weights, id)).collect())
}

/// Runs both encoder directions over `ids` (no padding applied here).
pub fn encode(ids: &[TokenId], weights: &ModelWeights) -> Result<EncoderTape> {
    if ids.is_empty() {
        return Err(Error::EmptyInput);
    }
    let embedded = embed_sequence(ids, weights)?;
    let hidden = weights.config.hidden_dim;
    let n = ids.len();

    let mut fwd = Vec::with_capacity(n);
    let (mut h, mut c) = (Vector::zeros(hidden), Vector::zeros(hidden));
    for x in &embedded {
        let rec = lstm_step(&weights.encoder_fwd, x, &h, &c)?;
        h = rec.h.clone();
        c = rec.c.clone();
        fwd.push(rec);
    }

    let mut bwd = Vec::with_capacity(n);
    let (mut h, mut c) = (Vector::zeros(hidden), Vector::zeros(hidden));
    for x in embedded.iter().rev() {
        let rec = lstm_step(&weights.encoder_bwd, x, &h, &c)?;
        h = rec.h.clone();
        c = rec.c.clone();
        bwd.push(rec);
    }
    bwd.reverse();

    let states: Vec<Vector> = fwd.iter().zip(&bwd).map(|(f, b)| f.h.concat(&b.h)).collect();
    let keys = attention_keys(&weights.attention, &states);
    Ok(EncoderTape { fwd, bwd, states, keys })
}

enum Feed<'a> {
    Greedy,
    Teacher(&'a [TokenId]),
}

fn run(ids: &[TokenId], weights: &ModelWeights, feed: Feed<'_>) -> Result<ActivationTape> {
    let config = &weights.config;
    check_ids(ids, config.vocab_size)?;
    let prepared = prepare_input(ids, config);
    let encoder = encode(&prepared.ids, weights)?;

    let mut h = encoder.final_fwd().h.clone();
    let mut c = encoder.final_fwd().c.clone();
    let mut prev = START;
    let mut decoder = Vec::new();
    let mut summary = Vec::new();
    let steps = match feed {
        Feed::Greedy => config.max_output_len + 1,
        Feed::Teacher(targets) => targets.len() + 1,
    };
    for step in 0..steps {
        let attention = attend_with_keys(&weights.attention, &h, &encoder.states, &encoder.keys)?;
        let prev_embedding = embedding_of(weights, prev);
        let x = prev_embedding.concat(&attention.context);
        let lstm = lstm_step(&weights.decoder, &x, &h, &c)?;
        let logits = affine(&weights.projection.w_out, &lstm.h, &weights.projection.b_out)?;
        let emitted = argmax(&logits);
        h = lstm.h.clone();
        c = lstm.c.clone();
        decoder.push(DecoderStepRecord {
            prev_token: prev,
            prev_embedding,
            attention,
            lstm,
            logits,
            emitted,
        });
        match feed {
            Feed::Greedy => {
                if emitted == STOP {
                    break;
                }
                summary.push(emitted);
                if summary.len() == config.max_output_len {
                    break;
                }
                prev = emitted;
            }
            Feed::Teacher(targets) => {
                if let Some(&next) = targets.get(step) {
                    prev = next;
                }
            }
        }
    }
    if let Feed::Teacher(targets) = feed {
        summary = targets.to_vec();
    }
    Ok(ActivationTape {
        input_ids: prepared.ids,
        source_len: prepared.source_len,
        truncated: prepared.truncated,
        encoder,
        decoder,
        summary,
    })
}

/// Greedy decode from START until STOP or `max_output_len` tokens.
pub fn decode_greedy(ids: &[TokenId], weights: &ModelWeights) -> Result<ActivationTape> {
    run(ids, weights, Feed::Greedy)
}

/// Decode that feeds the gold `targets` as previous tokens. The tape has
/// `targets.len() + 1` steps; the last one is expected to predict STOP.
pub fn decode_teacher_forced(
    ids: &[TokenId],
    targets: &[TokenId],
    weights: &ModelWeights,
) -> Result<ActivationTape> {
    check_ids(targets, weights.config.vocab_size)?;
    run(ids, weights, Feed::Teacher(targets))
}
