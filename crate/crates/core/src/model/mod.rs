//! Bidirectional-LSTM encoder, additive-attention LSTM decoder, greedy decoding.
//!
//! Every forward pass writes an [`ActivationTape`] holding all intermediates.
//! The relevance propagation in [`crate::lrp`] and the trainer's backward pass
//! both read the tape instead of recomputing the forward pass.

mod attention;
mod decode;
mod io;
mod lstm;
mod tape;
pub mod vocab;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Vector};

pub use attention::{attend, AttentionRecord};
pub use decode::{
    decode_greedy, decode_teacher_forced, embed_sequence, encode, prepare_input, PreparedInput,
};
pub use io::{read_weights, write_weights};
pub use lstm::{lstm_step, LstmRecord};
pub use tape::{ActivationTape, DecoderStepRecord, EncoderTape, ProductGate, ProductNode, ProductSite};
pub use vocab::Vocab;

pub type TokenId = usize;

/// Model dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_input_len: usize,
    pub max_output_len: usize,
    /// Number of leading output tokens that get a saliency map.
    pub maps_per_text: usize,
}

impl Default for ModelConfig {
    /// Desk-scale dimensions.
    fn default() -> Self {
        Self {
            vocab_size: 200,
            embed_dim: 16,
            hidden_dim: 32,
            max_input_len: 20,
            max_output_len: 24,
            maps_per_text: 12,
        }
    }
}

impl ModelConfig {
    /// Full-size summarizer dimensions (50k vocabulary, 400-token inputs).
    pub fn full_scale() -> Self {
        Self {
            vocab_size: 50_000,
            embed_dim: 128,
            hidden_dim: 254,
            max_input_len: 400,
            max_output_len: 200,
            maps_per_text: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("max_input_len", self.max_input_len),
            ("max_output_len", self.max_output_len),
            ("maps_per_text", self.maps_per_text),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if self.vocab_size <= vocab::STOP {
            return Err(Error::InvalidConfig("vocab_size must exceed the special tokens".into()));
        }
        if self.maps_per_text > self.max_output_len {
            return Err(Error::InvalidConfig(format!(
                "maps_per_text ({}) exceeds max_output_len ({})",
                self.maps_per_text, self.max_output_len
            )));
        }
        Ok(())
    }

    /// Width of a bidirectional encoder state.
    pub fn state_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Decoder LSTM input: previous-token embedding followed by attention context.
    pub fn decoder_input_dim(&self) -> usize {
        self.embed_dim + self.state_dim()
    }

    /// Attention projection width (equal to the hidden size).
    pub fn attention_dim(&self) -> usize {
        self.hidden_dim
    }
}

/// LSTM gate order used throughout: input, forget, output, candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gate {
    Input,
    Forget,
    Output,
    Candidate,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Candidate];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Gate::Input => "input",
            Gate::Forget => "forget",
            Gate::Output => "output",
            Gate::Candidate => "candidate",
        }
    }
}

/// One gate's pre-activation `W_x·x + W_h·h_prev + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateWeights {
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub b: Vector,
}

impl GateWeights {
    fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_x: Matrix::zeros(hidden_dim, input_dim),
            w_h: Matrix::zeros(hidden_dim, hidden_dim),
            b: Vector::zeros(hidden_dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub gates: [GateWeights; 4],
}

impl LstmWeights {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            gates: std::array::from_fn(|_| GateWeights::zeros(input_dim, hidden_dim)),
        }
    }

    pub fn gate(&self, gate: Gate) -> &GateWeights {
        &self.gates[gate.index()]
    }

    pub fn gate_mut(&mut self, gate: Gate) -> &mut GateWeights {
        &mut self.gates[gate.index()]
    }

    pub fn input_dim(&self) -> usize {
        self.gates[0].w_x.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.gates[0].w_h.rows()
    }
}

/// Additive attention: `e_j = v·tanh(W_a·s + U_a·h_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub w_a: Matrix,
    pub u_a: Matrix,
    pub v_a: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights {
    pub w_out: Matrix,
    pub b_out: Vector,
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub embedding: Matrix,
    pub encoder_fwd: LstmWeights,
    pub encoder_bwd: LstmWeights,
    pub decoder: LstmWeights,
    pub attention: AttentionWeights,
    pub projection: ProjectionWeights,
}

/// A named view of one parameter block.
#[derive(Debug)]
pub struct ParamBlock<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

impl ModelWeights {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let a = config.attention_dim();
        Ok(Self {
            config,
            embedding: Matrix::zeros(config.vocab_size, config.embed_dim),
            encoder_fwd: LstmWeights::zeros(config.embed_dim, h),
            encoder_bwd: LstmWeights::zeros(config.embed_dim, h),
            decoder: LstmWeights::zeros(config.decoder_input_dim(), h),
            attention: AttentionWeights {
                w_a: Matrix::zeros(a, h),
                u_a: Matrix::zeros(a, config.state_dim()),
                v_a: Vector::zeros(a),
            },
            projection: ProjectionWeights {
                w_out: Matrix::zeros(config.vocab_size, h),
                b_out: Vector::zeros(config.vocab_size),
            },
        })
    }

    /// Every parameter drawn uniformly from `[-scale, scale]` with a seeded ChaCha stream.
    pub fn random(config: ModelConfig, seed: u64, scale: f64) -> Result<Self> {
        let mut weights = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        weights.for_each_param_mut(|_, _, _, data| {
            for v in data.iter_mut() {
                *v = rng.gen_range(-scale..=scale);
            }
        });
        Ok(weights)
    }

    /// Visits parameter blocks in their fixed serialization order.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&str, usize, usize, &mut [f64])) {
        let (rows, cols) = self.embedding.shape();
        f("embedding", rows, cols, self.embedding.as_mut_slice());
        for (prefix, lstm) in [
            ("encoder_fwd", &mut self.encoder_fwd),
            ("encoder_bwd", &mut self.encoder_bwd),
            ("decoder", &mut self.decoder),
        ] {
            for gate in Gate::ALL {
                let g = lstm.gate_mut(gate);
                let (r, c) = g.w_x.shape();
                f(&format!("{prefix}.{}.w_x", gate.name()), r, c, g.w_x.as_mut_slice());
                let (r, c) = g.w_h.shape();
                f(&format!("{prefix}.{}.w_h", gate.name()), r, c, g.w_h.as_mut_slice());
                let n = g.b.len();
                f(&format!("{prefix}.{}.b", gate.name()), n, 1, g.b.as_mut_slice());
            }
        }
        let att = &mut self.attention;
        let (r, c) = att.w_a.shape();
        f("attention.w_a", r, c, att.w_a.as_mut_slice());
        let (r, c) = att.u_a.shape();
        f("attention.u_a", r, c, att.u_a.as_mut_slice());
        let n = att.v_a.len();
        f("attention.v_a", n, 1, att.v_a.as_mut_slice());
        let proj = &mut self.projection;
        let (r, c) = proj.w_out.shape();
        f("projection.w_out", r, c, proj.w_out.as_mut_slice());
        let n = proj.b_out.len();
        f("projection.b_out", n, 1, proj.b_out.as_mut_slice());
    }

    pub fn blocks(&self) -> Vec<ParamBlock<'_>> {
        fn push<'a>(out: &mut Vec<ParamBlock<'a>>, name: String, shape: (usize, usize), data: &'a [f64]) {
            out.push(ParamBlock {
                name,
                rows: shape.0,
                cols: shape.1,
                data,
            });
        }
        let mut out = Vec::new();
        push(&mut out, "embedding".into(), self.embedding.shape(), self.embedding.as_slice());
        for (prefix, lstm) in [
            ("encoder_fwd", &self.encoder_fwd),
            ("encoder_bwd", &self.encoder_bwd),
            ("decoder", &self.decoder),
        ] {
            for gate in Gate::ALL {
                let g = lstm.gate(gate);
                let name = gate.name();
                push(&mut out, format!("{prefix}.{name}.w_x"), g.w_x.shape(), g.w_x.as_slice());
                push(&mut out, format!("{prefix}.{name}.w_h"), g.w_h.shape(), g.w_h.as_slice());
                push(&mut out, format!("{prefix}.{name}.b"), (g.b.len(), 1), g.b.as_slice());
            }
        }
        let att = &self.attention;
        push(&mut out, "attention.w_a".into(), att.w_a.shape(), att.w_a.as_slice());
        push(&mut out, "attention.u_a".into(), att.u_a.shape(), att.u_a.as_slice());
        push(&mut out, "attention.v_a".into(), (att.v_a.len(), 1), att.v_a.as_slice());
        let proj = &self.projection;
        push(&mut out, "projection.w_out".into(), proj.w_out.shape(), proj.w_out.as_slice());
        push(&mut out, "projection.b_out".into(), (proj.b_out.len(), 1), proj.b_out.as_slice());
        out
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.data.len()).sum()
    }

    /// Flattened copy of all parameters in block order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.data.iter().copied()).collect()
    }

    /// Sets every bias (LSTM gates, projection) to zero.
    pub fn zero_biases(&mut self) {
        for lstm in [&mut self.encoder_fwd, &mut self.encoder_bwd, &mut self.decoder] {
            for g in lstm.gates.iter_mut() {
                g.b = Vector::zeros(g.b.len());
            }
        }
        self.projection.b_out = Vector::zeros(self.projection.b_out.len());
    }
}
