use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lrp::attention::lrp_attention_backward;
use crate::lrp::lstm::{lrp_lstm_backward, LstmLrpOptions};
use crate::lrp::rules::{eps_rule, AffinePart};
use crate::lrp::{
    Direction, GateLog, LrpConfig, RelevanceLedger, RelevanceNode, RelevancePacket, TokenRelevance,
};
use crate::model::ProductSite;
use crate::model::{ActivationTape, LstmRecord, ModelWeights};
use crate::saliency::SaliencyStack;
use crate::tensor::Vector;

/// Propagates `seed` relevance, placed on the emitted logit of `output_step`,
/// down to the input tokens.
pub fn propagate(
    tape: &ActivationTape,
    output_step: usize,
    weights: &ModelWeights,
    config: &LrpConfig,
    seed: f64,
) -> Result<RelevancePacket> {
    if output_step >= tape.num_steps() {
        return Err(Error::StepOutOfRange {
            step: output_step,
            decoded: tape.num_steps(),
        });
    }
    if config.epsilon < 0.0 || !config.epsilon.is_finite() {
        return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {}", config.epsilon)));
    }
    let cfg = &weights.config;
    let hidden = cfg.hidden_dim;
    let embed = cfg.embed_dim;
    let n = tape.input_len();
    let eps = config.epsilon;
    let mut nodes = BTreeMap::new();
    let mut gates = GateLog::default();
    let mut ledger = RelevanceLedger {
        injected: seed,
        ..Default::default()
    };

    // Output projection: only the emitted row carries relevance.
    let target = &tape.decoder[output_step];
    let token = target.emitted;
    let mut r_logits = Vector::zeros(cfg.vocab_size);
    r_logits[token] = seed;
    let proj = &weights.projection;
    let bias = config.bias_redistribution.then(|| proj.b_out.as_slice());
    let r_top = eps_rule(
        &[AffinePart::whole(&proj.w_out, &target.lstm.h)],
        bias,
        &target.logits,
        &r_logits,
        eps,
        "output projection",
    )?
    .remove(0);
    nodes.insert(RelevanceNode::Logit { step: output_step }, r_logits);

    // Decoder recurrence, steps 0..=output_step.
    let dec_records: Vec<&LstmRecord> = tape.decoder[..=output_step].iter().map(|s| &s.lstm).collect();
    let mut r_hidden = vec![Vector::zeros(hidden); output_step + 1];
    r_hidden[output_step] = Vector::from_vec(r_top);
    let dec_opts = LstmLrpOptions {
        epsilon: eps,
        bias_redistribution: config.bias_redistribution,
        frozen_inputs: (!config.attention_path_enabled).then(|| embed..cfg.decoder_input_dim()),
        max_steps: config.steps_back,
    };
    let dec = lrp_lstm_backward(
        &weights.decoder,
        &dec_records,
        &r_hidden,
        None,
        &dec_opts,
        |step| ProductSite::Decoder { step },
        &mut gates,
    )?;
    ledger.truncated += dec.truncated;

    let first_visited = output_step + 1 - dec.steps_visited;
    let mut r_states = vec![Vector::zeros(cfg.state_dim()); n];
    for step in first_visited..=output_step {
        let r_x = &dec.inputs[step];
        let r_prev = r_x.slice(0..embed);
        let r_ctx = r_x.slice(embed..r_x.len());
        ledger.previous_tokens += r_prev.sum();
        ledger.attention_path += r_ctx.sum();
        let per_position = lrp_attention_backward(
            &tape.decoder[step].attention,
            &tape.encoder.states,
            &r_ctx,
            config,
            step,
            &mut gates,
        )?;
        for (acc, r) in r_states.iter_mut().zip(&per_position) {
            acc.add_assign(r);
        }
        nodes.insert(RelevanceNode::DecoderHidden { step }, dec.hidden[step].clone());
        nodes.insert(RelevanceNode::DecoderCell { step }, dec.cell[step].clone());
        nodes.insert(RelevanceNode::DecoderPrevEmbedding { step }, r_prev);
        nodes.insert(RelevanceNode::Context { step }, r_ctx);
    }
    nodes.insert(RelevanceNode::DecoderInitialHidden, dec.initial_hidden.clone());
    nodes.insert(RelevanceNode::DecoderInitialCell, dec.initial_cell.clone());

    // Forward encoder: per-position states plus the decoder's initial state at the end.
    let fwd_records: Vec<&LstmRecord> = tape.encoder.fwd.iter().collect();
    let mut fwd_hidden: Vec<Vector> = r_states.iter().map(|r| r.slice(0..hidden)).collect();
    fwd_hidden[n - 1].add_assign(&dec.initial_hidden);
    let enc_opts = LstmLrpOptions::new(eps);
    let enc_opts = LstmLrpOptions {
        bias_redistribution: config.bias_redistribution,
        ..enc_opts
    };
    let fwd = lrp_lstm_backward(
        &weights.encoder_fwd,
        &fwd_records,
        &fwd_hidden,
        Some(&dec.initial_cell),
        &enc_opts,
        |position| ProductSite::EncoderFwd { position },
        &mut gates,
    )?;

    // Backward encoder runs right to left: processing index k is position n-1-k.
    let bwd_records: Vec<&LstmRecord> = tape.encoder.bwd.iter().rev().collect();
    let bwd_hidden: Vec<Vector> = r_states.iter().rev().map(|r| r.slice(hidden..2 * hidden)).collect();
    let bwd = lrp_lstm_backward(
        &weights.encoder_bwd,
        &bwd_records,
        &bwd_hidden,
        None,
        &enc_opts,
        |k| ProductSite::EncoderBwd { position: n - 1 - k },
        &mut gates,
    )?;

    let mut token_relevance = Vec::with_capacity(n);
    for position in 0..n {
        let mut emb = fwd.inputs[position].clone();
        emb.add_assign(&bwd.inputs[n - 1 - position]);
        token_relevance.push(emb.sum());
        nodes.insert(RelevanceNode::Embedding { position }, emb);
        for (direction, rel, idx) in [
            (Direction::Forward, &fwd, position),
            (Direction::Backward, &bwd, n - 1 - position),
        ] {
            nodes.insert(RelevanceNode::EncoderHidden { direction, position }, rel.hidden[idx].clone());
            nodes.insert(RelevanceNode::EncoderCell { direction, position }, rel.cell[idx].clone());
        }
    }
    for (position, r) in r_states.into_iter().enumerate() {
        nodes.insert(RelevanceNode::EncoderState { position }, r);
    }
    for (direction, rel) in [(Direction::Forward, &fwd), (Direction::Backward, &bwd)] {
        ledger.initial_states += rel.initial_hidden.sum() + rel.initial_cell.sum();
        nodes.insert(RelevanceNode::EncoderInitialHidden { direction }, rel.initial_hidden.clone());
        nodes.insert(RelevanceNode::EncoderInitialCell { direction }, rel.initial_cell.clone());
    }
    ledger.input_tokens = token_relevance.iter().sum();

    Ok(RelevancePacket {
        output_step,
        token,
        nodes,
        gates,
        ledger,
        token_relevance,
    })
}

/// Relevance of every input position for the token emitted at `output_step`,
/// starting from that token's pre-softmax logit.
pub fn relevance_for_token(
    tape: &ActivationTape,
    output_step: usize,
    weights: &ModelWeights,
    config: &LrpConfig,
) -> Result<TokenRelevance> {
    let step = tape.decoder.get(output_step).ok_or(Error::StepOutOfRange {
        step: output_step,
        decoded: tape.num_steps(),
    })?;
    let seed = step.logits[step.emitted];
    let packet = propagate(tape, output_step, weights, config, seed)?;
    Ok(TokenRelevance {
        relevance: packet.token_relevance,
        output_step,
        token: packet.token,
    })
}

/// One map for each of the first `maps_per_text` summary tokens.
pub fn relevance_stack(tape: &ActivationTape, weights: &ModelWeights, config: &LrpConfig) -> Result<SaliencyStack> {
    let count = weights.config.maps_per_text.min(tape.summary.len());
    let maps = (0..count)
        .map(|step| relevance_for_token(tape, step, weights, config))
        .collect::<Result<Vec<_>>>()?;
    SaliencyStack::new(maps, tape.input_ids.clone(), tape.summary.clone())
}
