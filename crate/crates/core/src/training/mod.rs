//! Synthetic planted-trigger corpus and a teacher-forced SGD trainer.

mod backprop;
mod corpus;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{decode_greedy, ModelConfig, ModelWeights};

pub use backprop::{accumulate_gradient, global_norm, gradient_check, sequence_loss, sgd_step, GradientCheck};
pub use corpus::{
    generate_synthetic_corpus, synthetic_vocab, Corpus, Example, SyntheticCorpusSpec, TriggerRule,
};

/// Training texts drawn for the toy model; 200-text draws are memorized
/// rather than generalized.
pub const TOY_TRAIN_TEXTS: usize = 1000;
/// Keyword-free texts (empty target) added to the toy training draw, so that
/// removing the keyword changes the summary for every keyword.
pub const TOY_TRIGGER_FREE_TEXTS: usize = 200;

/// The toy model's training corpus.
pub fn toy_training_spec(vocab_size: usize, seed: u64) -> SyntheticCorpusSpec {
    SyntheticCorpusSpec {
        trigger_free: TOY_TRIGGER_FREE_TEXTS,
        ..SyntheticCorpusSpec::toy(TOY_TRAIN_TEXTS, vocab_size, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Global gradient-norm ceiling per minibatch.
    pub clip_norm: f64,
    /// Half-width of the uniform initialization.
    pub init_scale: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 0.5,
            epochs: 80,
            seed: 7,
            batch_size: 1,
            clip_norm: 5.0,
            init_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean cross-entropy per target token, one entry per epoch.
    pub epoch_losses: Vec<f64>,
    /// Fraction of evaluation texts whose planted summaries start to appear.
    pub trigger_accuracy: f64,
    pub evaluated_texts: usize,
    pub held_out: bool,
}

/// True when every planted trigger's first template token shows up in the
/// greedy summary.
pub fn trigger_hit(weights: &ModelWeights, example: &Example) -> Result<bool> {
    let tape = decode_greedy(&example.input, weights)?;
    Ok(example
        .trigger_positions
        .iter()
        .map(|&p| example.input[p])
        .all(|keyword| match first_template_token(example, keyword) {
            Some(t) => tape.summary.contains(&t),
            None => false,
        }))
}

fn first_template_token(example: &Example, keyword: usize) -> Option<usize> {
    // Templates follow trigger order in the target.
    let order = example
        .trigger_positions
        .iter()
        .position(|&p| example.input[p] == keyword)?;
    let per = example.target.len() / example.trigger_positions.len().max(1);
    example.target.get(order * per).copied()
}

pub fn trigger_accuracy(weights: &ModelWeights, corpus: &Corpus) -> Result<f64> {
    if corpus.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for ex in &corpus.examples {
        if trigger_hit(weights, ex)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / corpus.len() as f64)
}

/// Trains from a seeded uniform initialization. Accuracy is measured on
/// `held_out` when given, otherwise on the training texts.
pub fn train_toy(
    train: &Corpus,
    held_out: Option<&Corpus>,
    config: ModelConfig,
    hyper: &TrainHyper,
) -> Result<(ModelWeights, TrainReport)> {
    if train.is_empty() {
        return Err(Error::InvalidCorpus("training corpus is empty".into()));
    }
    if hyper.batch_size == 0 || hyper.lr.is_nan() || hyper.lr <= 0.0 || hyper.clip_norm.is_nan() || hyper.clip_norm <= 0.0 {
        return Err(Error::InvalidConfig("batch_size, lr and clip_norm must be positive".into()));
    }
    train.check_vocab(config.vocab_size)?;
    if let Some(h) = held_out {
        h.check_vocab(config.vocab_size)?;
    }
    let mut weights = ModelWeights::random(config, hyper.seed, hyper.init_scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut grad = ModelWeights::zeros(config)?;

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut tokens) = (0.0, 0usize);
        for batch in order.chunks(hyper.batch_size) {
            grad.for_each_param_mut(|_, _, _, d| d.fill(0.0));
            let mut batch_tokens = 0;
            for &i in batch {
                let ex = &train.examples[i];
                let loss = accumulate_gradient(&weights, &ex.input, &ex.target, &mut grad).map_err(|e| {
                    if e.is_numerical() {
                        Error::Divergence { epoch, loss: f64::NAN }
                    } else {
                        e
                    }
                })?;
                total += loss;
                batch_tokens += ex.target.len() + 1;
            }
            tokens += batch_tokens;
            let norm = global_norm(&grad);
            if !norm.is_finite() || !total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: total / tokens as f64,
                });
            }
            let mut scale = 1.0 / batch_tokens as f64;
            if norm * scale > hyper.clip_norm {
                scale = hyper.clip_norm / norm;
            }
            sgd_step(&mut weights, &grad, hyper.lr, scale);
        }
        epoch_losses.push(total / tokens as f64);
    }

    let eval = held_out.unwrap_or(train);
    let report = TrainReport {
        epoch_losses,
        trigger_accuracy: trigger_accuracy(&weights, eval)?,
        evaluated_texts: eval.len(),
        held_out: held_out.is_some(),
    };
    Ok((weights, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> ModelConfig {
        ModelConfig {
            vocab_size: 8,
            embed_dim: 2,
            hidden_dim: 3,
            max_input_len: 5,
            max_output_len: 4,
            maps_per_text: 2,
        }
    }

    #[test]
    fn zero_epochs_returns_the_initialization() {
        let corpus = Corpus {
            examples: vec![Example {
                input: vec![3, 4, 5],
                target: vec![6],
                trigger_positions: vec![0],
            }],
        };
        let hyper = TrainHyper { epochs: 0, ..TrainHyper::default() };
        let (w, report) = train_toy(&corpus, None, micro(), &hyper).unwrap();
        assert_eq!(w, ModelWeights::random(micro(), hyper.seed, hyper.init_scale).unwrap());
        assert!(report.epoch_losses.is_empty());
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(train_toy(&Corpus::default(), None, micro(), &TrainHyper::default()).is_err());
    }

    #[test]
    fn single_pair_is_memorized() {
        let corpus = Corpus {
            examples: vec![Example {
                input: vec![3, 5, 4, 7],
                target: vec![6, 7],
                trigger_positions: vec![0],
            }],
        };
        let hyper = TrainHyper {
            epochs: 300,
            lr: 0.5,
            batch_size: 1,
            ..TrainHyper::default()
        };
        let (w, report) = train_toy(&corpus, None, micro(), &hyper).unwrap();
        assert!(report.epoch_losses.iter().all(|l| l.is_finite()));
        assert_eq!(report.trigger_accuracy, 1.0);
        assert_eq!(decode_greedy(&[3, 5, 4, 7], &w).unwrap().summary, vec![6, 7]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let w = ModelWeights::random(micro(), 3, 0.5).unwrap();
        let check = gradient_check(&w, &[3, 4, 5, 6], &[7, 5], 1e-5, 1e-4, 1e-6).unwrap();
        assert!(check.pass_rate() >= 0.99, "{check:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let spec = SyntheticCorpusSpec {
            text_len: 4,
            trigger_table: vec![TriggerRule { keyword: 3, template: vec![4] }],
            noise: 5..8,
            ..SyntheticCorpusSpec::toy(6, 8, 1)
        };
        let corpus = generate_synthetic_corpus(&spec).unwrap();
        let hyper = TrainHyper { epochs: 3, ..TrainHyper::default() };
        let a = train_toy(&corpus, None, micro(), &hyper).unwrap();
        let b = train_toy(&corpus, None, micro(), &hyper).unwrap();
        assert_eq!(a.0.to_flat(), b.0.to_flat());
        assert_eq!(a.1, b.1);
    }
}
