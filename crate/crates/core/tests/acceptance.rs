//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::io::Write;

use seqlrp::lrp::{lrp_linear, propagate, relevance_stack, LrpConfig, TokenRelevance};
use seqlrp::model::{
    decode_greedy, decode_teacher_forced, write_weights, ActivationTape, ModelConfig, ModelWeights, TokenId,
};
use seqlrp::saliency::{
    attention_saliency_correlation, map_pairwise_similarity, stats, Aggregation, SaliencyStack,
};
use seqlrp::tensor::{Matrix, Vector};
use seqlrp::training::{
    generate_synthetic_corpus, gradient_check, toy_training_spec, train_toy, Corpus, SyntheticCorpusSpec,
    TrainHyper,
};
use seqlrp::validation::{
    deletion_from_ranking, explain_text, occlusion_importance, oracle_agreement, top_position, DeletionMode,
};

const VOCAB: usize = 200;
const TRAIN_SEED: u64 = 1;
const EVAL_SEED: u64 = 2;
const EVAL_TEXTS: usize = 200;

/// Written straight to stderr so the lines survive output capture.
fn say(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

struct Outcome {
    failures: Vec<String>,
}

impl Outcome {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        say(&format!("[{}] criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" }));
        if !pass {
            self.failures.push(format!("{id}: {detail}"));
        }
    }
}

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

fn micro_setup(seed: u64, zero_bias: bool) -> (ModelWeights, ActivationTape) {
    let mut w = ModelWeights::random(micro(), seed, 0.8).unwrap();
    if zero_bias {
        w.zero_biases();
    }
    let tape = decode_teacher_forced(&[3, 4, 5, 6, 7], &[5, 3, 7], &w).unwrap();
    (w, tape)
}

fn lrp(epsilon: f64, attention: bool) -> LrpConfig {
    LrpConfig {
        epsilon,
        attention_path_enabled: attention,
        ..LrpConfig::default()
    }
}

fn criterion_1(out: &mut Outcome) {
    let w = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
    let x = Vector::new(vec![1.0, 3.0]).unwrap();
    let r = Vector::new(vec![4.0]).unwrap();
    let zero = Vector::new(vec![0.0]).unwrap();
    let plain = lrp_linear(&w, &zero, &x, &Vector::new(vec![4.0]).unwrap(), &r, 0.0).unwrap();
    let exact = plain.as_slice() == [1.0, 3.0];

    let b = Vector::new(vec![2.0]).unwrap();
    let biased = lrp_linear(&w, &b, &x, &Vector::new(vec![6.0]).unwrap(), &r, 0.0).unwrap();
    let drift = (biased.sum() - 4.0).abs() / 4.0;
    out.check(
        "1",
        exact && drift <= 1e-9,
        format!("no-bias split {:?}; with bias {:?}, relative drift {drift:.1e}", plain.as_slice(), biased.as_slice()),
    );
}

/// Largest gate relevance over every product node of every step; `None` if
/// a gate log does not cover exactly the tape's product nodes.
fn gate_total(tape: &ActivationTape, weights: &ModelWeights, config: &LrpConfig) -> Option<(f64, usize)> {
    let mut total = 0.0;
    let mut nodes = 0;
    for step in 0..tape.num_steps() {
        let d = &tape.decoder[step];
        let p = propagate(tape, step, weights, config, d.logits[d.emitted]).unwrap();
        let logged: Vec<_> = p.gates.nodes().copied().collect();
        if logged != tape.product_nodes(step) {
            return None;
        }
        nodes += logged.len();
        total += p.gates.total_abs();
    }
    Some((total, nodes))
}

fn criterion_2(out: &mut Outcome, id: &str, weights: &ModelWeights, eval: &Corpus, config: &LrpConfig) {
    let mut total = 0.0;
    let mut nodes = 0;
    let mut covered = true;
    for ex in eval.examples.iter().take(20) {
        let tape = decode_greedy(&ex.input, weights).unwrap();
        match gate_total(&tape, weights, config) {
            Some((t, n)) => {
                total += t;
                nodes += n;
            }
            None => covered = false,
        }
    }
    out.check(
        id,
        covered && total == 0.0,
        format!("{nodes} product nodes over 20 toy texts, every node logged: {covered}, total gate relevance {total}"),
    );
}

/// Worst relative conservation error over all steps of several micro models.
fn worst_drift(epsilon: f64, zero_bias: bool, attention: bool) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let (w, tape) = micro_setup(seed, zero_bias);
        for step in 0..tape.num_steps() {
            let d = &tape.decoder[step];
            let p = propagate(&tape, step, &w, &lrp(epsilon, attention), d.logits[d.emitted]).unwrap();
            let l = p.ledger;
            assert_eq!(l.truncated, 0.0);
            let sum = l.input_tokens + l.previous_tokens + l.initial_states;
            worst = worst.max((sum - l.injected).abs() / l.injected.abs());
        }
    }
    worst
}

fn criterion_3(out: &mut Outcome, id: &str, attention: bool) {
    let exact = worst_drift(0.0, true, attention);
    let stabilized = worst_drift(1e-5, true, attention);
    out.check(
        id,
        exact <= 1e-4 && stabilized <= 1e-2,
        format!("micro model, relative drift {exact:.1e} at eps=0, {stabilized:.1e} at eps=1e-5"),
    );
}

fn criterion_4(out: &mut Outcome) {
    let mut checked = 0;
    let mut passed = 0;
    for seed in 0..3 {
        let w = ModelWeights::random(micro(), seed, 0.5).unwrap();
        let g = gradient_check(&w, &[3, 4, 5, 6], &[7, 5], 1e-5, 1e-4, 1e-6).unwrap();
        checked += g.checked;
        passed += g.passed;
    }
    let rate = passed as f64 / checked as f64;
    out.check("4", rate >= 0.99, format!("{passed}/{checked} parameters within 1e-4 ({:.2}%)", 100.0 * rate));
}

struct PlantedRun {
    occlusion_hits: usize,
    lrp_hits: usize,
    deletion_hits: usize,
    texts: usize,
    mean_spearman: Option<f64>,
}

fn planted_run(weights: &ModelWeights, eval: &Corpus) -> PlantedRun {
    let config = LrpConfig::default();
    let mut run = PlantedRun {
        occlusion_hits: 0,
        lrp_hits: 0,
        deletion_hits: 0,
        texts: eval.len(),
        mean_spearman: None,
    };
    let mut rhos = Vec::new();
    for ex in &eval.examples {
        let trigger = ex.trigger_positions[0];
        let explained = explain_text(&ex.input, weights, &config, Aggregation::AbsMean).unwrap();
        let occlusion = occlusion_importance(&ex.input, weights).unwrap();
        if top_position(&occlusion, &explained.ranking) == Some(trigger) {
            run.occlusion_hits += 1;
        }
        if explained.ranking.first() == Some(&trigger) {
            run.lrp_hits += 1;
        }
        let d = deletion_from_ranking(&explained, weights, 0.07, DeletionMode::Remove).unwrap();
        if d.most_important.metrics.token_jaccard < d.least_important.metrics.token_jaccard {
            run.deletion_hits += 1;
        }
        rhos.extend(oracle_agreement(&explained, &occlusion));
    }
    run.mean_spearman = stats::mean(&rhos);
    run
}

fn pct(n: usize, of: usize) -> f64 {
    100.0 * n as f64 / of as f64
}

fn criterion_5(out: &mut Outcome, weights: &ModelWeights, accuracy: f64, eval: &Corpus) {
    out.check(
        "5 (gate)",
        accuracy >= 0.9,
        format!("held-out trigger accuracy {accuracy:.3} on {} texts", eval.len()),
    );
    let run = planted_run(weights, eval);
    let n = run.texts;
    out.check(
        "5a",
        pct(run.occlusion_hits, n) >= 95.0,
        format!("occlusion top-1 = trigger on {}/{n} ({:.1}%, need 95%)", run.occlusion_hits, pct(run.occlusion_hits, n)),
    );
    out.check(
        "5b",
        pct(run.lrp_hits, n) >= 60.0,
        format!("LRP abs-mean top-1 = trigger on {}/{n} ({:.1}%, need 60%)", run.lrp_hits, pct(run.lrp_hits, n)),
    );
    out.check(
        "5c",
        pct(run.deletion_hits, n) >= 70.0,
        format!(
            "7% most-important deletion lowers jaccard below the control on {}/{n} ({:.1}%, need 70%); mean oracle spearman {:.3}",
            run.deletion_hits,
            pct(run.deletion_hits, n),
            run.mean_spearman.unwrap_or(f64::NAN)
        ),
    );
}

fn criterion_6(out: &mut Outcome, weights: &ModelWeights, eval: &Corpus) {
    let map = |values: Vec<f64>, step| TokenRelevance {
        relevance: values,
        output_step: step,
        token: 3,
    };
    let row = vec![0.3, -1.7, 2.0 / 3.0, 5.0, 0.0, 1e-3];
    let ids: Vec<TokenId> = vec![5; row.len()];
    let same = SaliencyStack::new((0..4).map(|s| map(row.clone(), s)).collect(), ids.clone(), vec![3; 4]).unwrap();
    let cosine = map_pairwise_similarity(&same).unwrap().mean;

    // Maps proportional to the attention weights, with alternating signs.
    let ex = &eval.examples[0];
    let tape = decode_greedy(&ex.input, weights).unwrap();
    let maps = (0..tape.summary.len())
        .map(|s| {
            let alpha = &tape.decoder[s].attention.alpha;
            map(alpha.iter().enumerate().map(|(j, a)| if j % 2 == 0 { 2.0 * a } else { -2.0 * a }).collect(), s)
        })
        .collect();
    let aligned = SaliencyStack::new(maps, tape.input_ids.clone(), tape.summary.clone()).unwrap();
    let spearman = attention_saliency_correlation(&aligned, &tape).unwrap().mean_spearman;

    let mut cosines = Vec::new();
    let mut rhos = Vec::new();
    let mut reported = 0;
    for ex in &eval.examples {
        let tape = decode_greedy(&ex.input, weights).unwrap();
        let stack = relevance_stack(&tape, weights, &LrpConfig::default()).unwrap();
        if stack.len() >= 2 {
            cosines.extend(map_pairwise_similarity(&stack).unwrap().mean);
        }
        rhos.extend(attention_saliency_correlation(&stack, &tape).unwrap().mean_spearman);
        reported += 1;
    }
    out.check(
        "6",
        cosine == Some(1.0) && spearman == Some(1.0) && reported == eval.len(),
        format!(
            "hand stacks: cosine {cosine:?}, spearman {spearman:?}; toy model over {reported} texts: mean map cosine {:.3}, mean attention-saliency spearman {:.3}",
            stats::mean(&cosines).unwrap_or(f64::NAN),
            stats::mean(&rhos).unwrap_or(f64::NAN)
        ),
    );
}

/// Corpus, weights, explanations and deletion results of a small run, as bytes.
fn pipeline_bytes() -> Vec<u8> {
    let spec = SyntheticCorpusSpec {
        trigger_free: 4,
        ..SyntheticCorpusSpec::toy(24, VOCAB, 11)
    };
    let corpus = generate_synthetic_corpus(&spec).unwrap();
    let config = ModelConfig {
        embed_dim: 4,
        hidden_dim: 6,
        ..ModelConfig::default()
    };
    let hyper = TrainHyper {
        epochs: 15,
        ..TrainHyper::default()
    };
    let (weights, report) = train_toy(&corpus, None, config, &hyper).unwrap();
    let mut bytes = Vec::new();
    corpus.write(&mut bytes).unwrap();
    write_weights(&weights, &mut bytes).unwrap();
    bytes.extend(serde_json::to_vec(&report).unwrap());
    for (i, ex) in corpus.examples.iter().enumerate() {
        let Ok(explained) = explain_text(&ex.input, &weights, &LrpConfig::default(), Aggregation::AbsMean) else {
            continue;
        };
        bytes.extend(serde_json::to_vec(&explained.stack.maps).unwrap());
        bytes.extend(serde_json::to_vec(&occlusion_importance(&ex.input, &weights).unwrap()).unwrap());
        for fraction in [0.05, 0.1] {
            let d = deletion_from_ranking(&explained, &weights, fraction, DeletionMode::Remove).unwrap();
            for record in d.records(i) {
                bytes.extend(serde_json::to_vec(&record).unwrap());
            }
        }
    }
    bytes
}

fn criterion_7(out: &mut Outcome) {
    let (a, b) = (pipeline_bytes(), pipeline_bytes());
    out.check(
        "7",
        a == b,
        format!("corpus, weights, explanations and results: {} bytes, identical: {}", a.len(), a == b),
    );
}

fn criterion_8(out: &mut Outcome, weights: &ModelWeights, eval: &Corpus) {
    let ablated = lrp(1e-5, false);
    let mut max_path: f64 = 0.0;
    for ex in eval.examples.iter().take(20) {
        let tape = decode_greedy(&ex.input, weights).unwrap();
        for step in 0..tape.num_steps() {
            let d = &tape.decoder[step];
            let packet = propagate(&tape, step, weights, &ablated, d.logits[d.emitted]).unwrap();
            max_path = max_path.max(packet.ledger.attention_path.abs());
        }
    }
    out.check("8", max_path == 0.0, format!("attention-path relevance with the path disabled: {max_path}"));
    criterion_2(out, "8/2", weights, eval, &ablated);
    criterion_3(out, "8/3", false);
}

#[test]
fn acceptance_criteria() {
    let mut out = Outcome { failures: Vec::new() };
    criterion_1(&mut out);
    criterion_3(&mut out, "3", true);
    criterion_4(&mut out);
    criterion_7(&mut out);

    let train = generate_synthetic_corpus(&toy_training_spec(VOCAB, TRAIN_SEED)).unwrap();
    let eval = generate_synthetic_corpus(&SyntheticCorpusSpec::toy(EVAL_TEXTS, VOCAB, EVAL_SEED)).unwrap();
    let hyper = TrainHyper::default();
    let (weights, report) = train_toy(&train, Some(&eval), ModelConfig::default(), &hyper).unwrap();
    say(&format!(
        "toy model: {} training texts, {} epochs, final loss {:.4}",
        train.len(),
        hyper.epochs,
        report.epoch_losses.last().unwrap()
    ));

    criterion_2(&mut out, "2", &weights, &eval, &LrpConfig::default());
    criterion_5(&mut out, &weights, report.trigger_accuracy, &eval);
    criterion_6(&mut out, &weights, &eval);
    criterion_8(&mut out, &weights, &eval);

    assert!(out.failures.is_empty(), "failed criteria:\n{}", out.failures.join("\n"));
}
