use seqlrp::lrp::{propagate, relevance_stack, LrpConfig, RelevanceNode};
use seqlrp::model::{decode_teacher_forced, ActivationTape, ModelConfig, ModelWeights};

fn micro() -> ModelConfig {
    ModelConfig {
        vocab_size: 8,
        embed_dim: 2,
        hidden_dim: 3,
        max_input_len: 6,
        max_output_len: 5,
        maps_per_text: 4,
    }
}

fn setup(seed: u64, zero_bias: bool) -> (ModelWeights, ActivationTape) {
    let mut w = ModelWeights::random(micro(), seed, 0.8).unwrap();
    if zero_bias {
        w.zero_biases();
    }
    let tape = decode_teacher_forced(&[3, 4, 5, 6, 7], &[5, 3, 7], &w).unwrap();
    (w, tape)
}

fn cfg(epsilon: f64) -> LrpConfig {
    LrpConfig {
        epsilon,
        ..LrpConfig::default()
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn relevance_is_conserved_end_to_end() {
    for seed in 0..5 {
        let (w, tape) = setup(seed, false);
        for eps in [0.0, 1e-5, 1e-2] {
            for step in 0..tape.num_steps() {
                let seed_r = tape.decoder[step].logits[tape.decoder[step].emitted];
                let p = match propagate(&tape, step, &w, &cfg(eps), seed_r) {
                    Ok(p) => p,
                    Err(e) if e.is_numerical() && eps == 0.0 => continue,
                    Err(e) => panic!("{e}"),
                };
                let err = rel_err(p.ledger.accounted(), p.ledger.injected);
                assert!(err < 1e-9, "seed {seed} eps {eps} step {step}: {err}");
                let summed: f64 = p.token_relevance.iter().sum();
                assert!((summed - p.ledger.input_tokens).abs() < 1e-12 * summed.abs().max(1.0));
            }
        }
    }
}

#[test]
fn without_bias_redistribution_zero_biases_still_conserve() {
    let (w, tape) = setup(7, true);
    let config = LrpConfig {
        epsilon: 0.0,
        bias_redistribution: false,
        ..LrpConfig::default()
    };
    let p = propagate(&tape, 2, &w, &config, 1.0).unwrap();
    assert!(rel_err(p.ledger.accounted(), 1.0) < 1e-9);

    // With real biases and no redistribution, the bias share leaks.
    let (w, tape) = setup(7, false);
    let p = propagate(&tape, 2, &w, &config, 1.0).unwrap();
    assert!(rel_err(p.ledger.accounted(), 1.0) > 1e-6);
}

#[test]
fn every_product_gate_receives_zero() {
    let (w, tape) = setup(3, false);
    for step in 0..tape.num_steps() {
        let p = propagate(&tape, step, &w, &cfg(1e-5), 1.0).unwrap();
        let logged: Vec<_> = p.gates.nodes().copied().collect();
        assert_eq!(logged, tape.product_nodes(step));
        assert_eq!(p.gates.total_abs(), 0.0);
    }
}

#[test]
fn relevance_is_linear_in_the_seed() {
    let (w, tape) = setup(11, false);
    let base = propagate(&tape, 1, &w, &cfg(1e-5), 1.0).unwrap();
    for lambda in [0.25, 3.0, 1e3] {
        let scaled = propagate(&tape, 1, &w, &cfg(1e-5), lambda).unwrap();
        for (a, b) in base.token_relevance.iter().zip(&scaled.token_relevance) {
            assert!((a * lambda - b).abs() <= 1e-12 * (a * lambda).abs().max(1e-12));
        }
    }
    let flipped = propagate(&tape, 1, &w, &cfg(1e-5), -1.0).unwrap();
    for (a, b) in base.token_relevance.iter().zip(&flipped.token_relevance) {
        assert_eq!(*a, -*b);
    }
}

#[test]
fn disabling_the_attention_path() {
    let (w, tape) = setup(5, false);
    let config = LrpConfig {
        attention_path_enabled: false,
        ..cfg(1e-5)
    };
    let p = propagate(&tape, 2, &w, &config, 1.0).unwrap();
    assert_eq!(p.ledger.attention_path, 0.0);
    assert!(rel_err(p.ledger.accounted(), 1.0) < 1e-9);
    for step in 0..=2 {
        assert!(p.node(RelevanceNode::Context { step }).unwrap().iter().all(|&r| r == 0.0));
    }

    // Without attention and without reaching step 0 nothing arrives at the input.
    let config = LrpConfig {
        steps_back: Some(2),
        ..config
    };
    let p = propagate(&tape, 2, &w, &config, 1.0).unwrap();
    assert!(p.token_relevance.iter().all(|&r| r == 0.0));
    assert!(p.ledger.truncated != 0.0);
    assert!(rel_err(p.ledger.accounted(), 1.0) < 1e-9);
}

#[test]
fn node_shapes_match_the_model() {
    let (w, tape) = setup(2, false);
    let p = propagate(&tape, 1, &w, &cfg(1e-5), 1.0).unwrap();
    let c = micro();
    assert_eq!(p.token_relevance.len(), c.max_input_len);
    assert_eq!(p.node(RelevanceNode::Logit { step: 1 }).unwrap().len(), c.vocab_size);
    assert_eq!(p.node(RelevanceNode::DecoderHidden { step: 0 }).unwrap().len(), c.hidden_dim);
    assert_eq!(p.node(RelevanceNode::EncoderState { position: 3 }).unwrap().len(), c.state_dim());
    assert_eq!(p.node(RelevanceNode::Embedding { position: 0 }).unwrap().len(), c.embed_dim);
    assert!(p.node(RelevanceNode::DecoderHidden { step: 2 }).is_none());
}

#[test]
fn step_beyond_decode_is_an_error() {
    let (w, tape) = setup(2, false);
    assert!(propagate(&tape, tape.num_steps(), &w, &cfg(1e-5), 1.0).is_err());
}

#[test]
fn stack_has_one_map_per_summary_token_up_to_the_limit() {
    let (w, tape) = setup(4, false);
    let stack = relevance_stack(&tape, &w, &cfg(1e-5)).unwrap();
    assert_eq!(stack.len(), tape.summary.len().min(micro().maps_per_text));
    for (i, m) in stack.maps.iter().enumerate() {
        assert_eq!(m.output_step, i);
        assert_eq!(m.token, tape.decoder[i].emitted);
    }
}
