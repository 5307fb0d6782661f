use crate::error::{Error, Result};
use crate::model::{Gate, LstmWeights};
use crate::tensor::{apply_nonlinearity, Nonlinearity, TensorError, Vector};

/// Everything one LSTM step computed.
///
/// `pre[g]` is the affine pre-activation of gate `g`, `act[g]` its activation
/// (sigmoid for input/forget/output, tanh for the candidate).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmRecord {
    pub x: Vector,
    pub h_prev: Vector,
    pub c_prev: Vector,
    pub pre: [Vector; 4],
    pub act: [Vector; 4],
    pub c: Vector,
    pub tanh_c: Vector,
    pub h: Vector,
}

impl LstmRecord {
    pub fn pre(&self, gate: Gate) -> &Vector {
        &self.pre[gate.index()]
    }

    pub fn act(&self, gate: Gate) -> &Vector {
        &self.act[gate.index()]
    }

    /// `f ⊙ c_prev`, the carried term of the cell update.
    pub fn carried(&self) -> Vector {
        self.act(Gate::Forget).hadamard(&self.c_prev)
    }

    /// `i ⊙ g`, the written term of the cell update.
    pub fn written(&self) -> Vector {
        self.act(Gate::Input).hadamard(self.act(Gate::Candidate))
    }
}

/// Gate pre-activation `W_x·x + W_h·h + b`.
pub(crate) fn gate_pre(w: &LstmWeights, gate: Gate, x: &[f64], h: &[f64]) -> Vector {
    let g = w.gate(gate);
    let mut z = g.w_x.matvec(x);
    let zh = g.w_h.matvec(h);
    for ((z, zh), b) in z.iter_mut().zip(zh).zip(g.b.iter()) {
        *z += zh + b;
    }
    Vector::from_vec(z)
}

/// Standard LSTM cell:
/// `c = f ⊙ c_prev + i ⊙ g`, `h = o ⊙ tanh(c)`.
pub fn lstm_step(w: &LstmWeights, x: &Vector, h_prev: &Vector, c_prev: &Vector) -> Result<LstmRecord> {
    let hidden = w.hidden_dim();
    if x.len() != w.input_dim() || h_prev.len() != hidden || c_prev.len() != hidden {
        return Err(Error::Tensor(TensorError::ShapeMismatch {
            op: "lstm_step",
            left: format!("weights in {} hidden {}", w.input_dim(), hidden),
            right: format!("x {} h {} c {}", x.len(), h_prev.len(), c_prev.len()),
        }));
    }
    let pre = Gate::ALL.map(|gate| gate_pre(w, gate, x, h_prev));
    if pre.iter().any(|z| z.iter().any(|v| !v.is_finite())) {
        return Err(Error::Tensor(TensorError::NonFinite { op: "lstm_step" }));
    }
    let act = Gate::ALL.map(|gate| {
        let kind = if gate == Gate::Candidate {
            Nonlinearity::Tanh
        } else {
            Nonlinearity::Sigmoid
        };
        apply_nonlinearity(kind, &pre[gate.index()])
    });
    let [i, f, o, g] = &act;
    let c: Vec<f64> = (0..hidden).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Tensor(TensorError::NonFinite { op: "lstm_step" }));
    }
    let c = Vector::from_vec(c);
    let tanh_c = apply_nonlinearity(Nonlinearity::Tanh, &c);
    let h = o.hadamard(&tanh_c);
    Ok(LstmRecord {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        pre,
        act,
        c,
        tanh_c,
        h,
    })
}
