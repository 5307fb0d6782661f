use std::ops::Range;

use crate::error::{Error, Result};
use crate::lrp::rules::{eps_rule, lrp_gate_product, split_sum, AffinePart};
use crate::lrp::GateLog;
use crate::model::{ProductGate, ProductNode, ProductSite};
use crate::model::{Gate, LstmRecord, LstmWeights};
use crate::tensor::Vector;

/// Knobs for one backward relevance pass through an LSTM sequence.
#[derive(Debug, Clone)]
pub struct LstmLrpOptions {
    pub epsilon: f64,
    pub bias_redistribution: bool,
    /// Columns of the step input treated as constants (folded into the bias).
    pub frozen_inputs: Option<Range<usize>>,
    /// Unroll at most this many steps back from the last one.
    pub max_steps: Option<usize>,
}

impl LstmLrpOptions {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            bias_redistribution: true,
            frozen_inputs: None,
            max_steps: None,
        }
    }
}

/// Relevance produced by [`lrp_lstm_backward`]; vectors are indexed in
/// processing order, matching the records passed in.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmRelevance {
    pub inputs: Vec<Vector>,
    /// Total relevance on each step's hidden output.
    pub hidden: Vec<Vector>,
    /// Total relevance on each step's cell state.
    pub cell: Vec<Vector>,
    pub initial_hidden: Vector,
    pub initial_cell: Vector,
    /// Relevance cut off by `max_steps`.
    pub truncated: f64,
    /// Number of steps actually unrolled.
    pub steps_visited: usize,
}

/// Walks an LSTM sequence backwards in time.
///
/// At `h = o ⊙ tanh(c)` everything goes to `c` (tanh is transparent). The cell
/// update `c = f ⊙ c_prev + i ⊙ g` is split between its two summands with the
/// ε-rule; the forget share continues to `c_prev`, the input share reaches `g`
/// and from there the candidate's affine map over `[x; h_prev]`. Gates receive
/// nothing.
///
/// `records` and `r_hidden` are in processing order; `r_hidden[t]` is relevance
/// injected at step `t`'s hidden output from outside the recurrence.
/// `r_final_cell` is injected at the last step's cell state.
pub fn lrp_lstm_backward(
    weights: &LstmWeights,
    records: &[&LstmRecord],
    r_hidden: &[Vector],
    r_final_cell: Option<&Vector>,
    opts: &LstmLrpOptions,
    mut site: impl FnMut(usize) -> ProductSite,
    gate_log: &mut GateLog,
) -> Result<LstmRelevance> {
    let n = records.len();
    if n == 0 {
        return Err(Error::IncompleteTape("empty LSTM fragment".into()));
    }
    if r_hidden.len() != n {
        return Err(Error::IncompleteTape(format!(
            "{} hidden relevance vectors for {} steps",
            r_hidden.len(),
            n
        )));
    }
    let hidden = weights.hidden_dim();
    let input_dim = weights.input_dim();
    for (t, r) in records.iter().enumerate() {
        if r.x.len() != input_dim || r.h.len() != hidden || r_hidden[t].len() != hidden {
            return Err(Error::IncompleteTape(format!("step {t} does not match the weights")));
        }
    }
    let first = opts.max_steps.map_or(0, |k| n - k.min(n));
    let eps = opts.epsilon;
    let cand = weights.gate(Gate::Candidate);
    let bias = opts.bias_redistribution.then(|| cand.b.as_slice());

    let mut inputs = vec![Vector::zeros(input_dim); n];
    let mut hidden_rel = vec![Vector::zeros(hidden); n];
    let mut cell_rel = vec![Vector::zeros(hidden); n];
    let mut carry_h = Vector::zeros(hidden);
    let mut carry_c = r_final_cell.cloned().unwrap_or_else(|| Vector::zeros(hidden));

    for t in (first..n).rev() {
        let rec = records[t];
        let here = site(t);
        let node = |gate| ProductNode { site: here, gate };

        let mut r_h = carry_h;
        r_h.add_assign(&r_hidden[t]);
        let out = lrp_gate_product(rec.act(Gate::Output), &rec.tanh_c, &r_h)?;
        gate_log.record(node(ProductGate::Output), &out.gate);

        let mut r_c = carry_c;
        r_c.add_assign(&out.info);
        let terms = [rec.carried(), rec.written()];
        let [r_carried, r_written]: [Vector; 2] = split_sum(&terms, &rec.c, &r_c, eps, "LSTM cell update")?
            .try_into()
            .expect("two summands");

        let fgt = lrp_gate_product(rec.act(Gate::Forget), &rec.c_prev, &r_carried)?;
        gate_log.record(node(ProductGate::Forget), &fgt.gate);
        let inp = lrp_gate_product(rec.act(Gate::Input), rec.act(Gate::Candidate), &r_written)?;
        gate_log.record(node(ProductGate::Input), &inp.gate);

        let mut parts = Vec::with_capacity(3);
        match &opts.frozen_inputs {
            Some(frozen) if !frozen.is_empty() => {
                for (range, is_frozen) in [(0..frozen.start, false), (frozen.clone(), true), (frozen.end..input_dim, false)] {
                    if !range.is_empty() {
                        parts.push(AffinePart {
                            w: &cand.w_x,
                            cols: range.clone(),
                            x: &rec.x.as_slice()[range],
                            frozen: is_frozen,
                        });
                    }
                }
            }
            _ => parts.push(AffinePart::whole(&cand.w_x, &rec.x)),
        }
        parts.push(AffinePart::whole(&cand.w_h, &rec.h_prev));
        let split = eps_rule(&parts, bias, rec.pre(Gate::Candidate), &inp.info, eps, "LSTM candidate")?;

        let mut r_x = Vec::with_capacity(input_dim);
        for piece in &split[..split.len() - 1] {
            r_x.extend_from_slice(piece);
        }
        inputs[t] = Vector::from_vec(r_x);
        hidden_rel[t] = r_h;
        cell_rel[t] = r_c;
        carry_h = Vector::from_vec(split.last().expect("h_prev part").clone());
        carry_c = fgt.info;
    }

    let (initial_hidden, initial_cell, truncated) = if first == 0 {
        (carry_h, carry_c, 0.0)
    } else {
        let dropped: f64 = carry_h.sum() + carry_c.sum() + r_hidden[..first].iter().map(Vector::sum).sum::<f64>();
        (Vector::zeros(hidden), Vector::zeros(hidden), dropped)
    };
    Ok(LstmRelevance {
        inputs,
        hidden: hidden_rel,
        cell: cell_rel,
        initial_hidden,
        initial_cell,
        truncated,
        steps_visited: n - first,
    })
}
