use crate::error::{Error, Result};
use crate::model::AttentionWeights;
use crate::tensor::{softmax, TensorError, Vector};

/// One attention read: `e_j = v·tanh(W_a·s + U_a·h_j)`, `alpha = softmax(e)`,
/// `context = Σ_j alpha_j·h_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    /// `W_a·s_prev`
    pub query: Vector,
    /// `tanh(W_a·s_prev + U_a·h_j)` per encoder position.
    pub features: Vec<Vector>,
    pub energies: Vector,
    pub alpha: Vector,
    pub context: Vector,
}

/// `U_a·h_j` for every encoder state. These do not depend on the decoder and
/// are computed once per input.
pub(crate) fn attention_keys(att: &AttentionWeights, states: &[Vector]) -> Vec<Vector> {
    states
        .iter()
        .map(|h| Vector::from_vec(att.u_a.matvec(h)))
        .collect()
}

pub(crate) fn attend_with_keys(
    att: &AttentionWeights,
    s_prev: &Vector,
    states: &[Vector],
    keys: &[Vector],
) -> Result<AttentionRecord> {
    let query = Vector::from_vec(att.w_a.matvec(s_prev));
    let features: Vec<Vector> = keys
        .iter()
        .map(|k| Vector::from_vec(query.iter().zip(k.iter()).map(|(q, k)| (q + k).tanh()).collect()))
        .collect();
    let energies: Vec<f64> = features.iter().map(|f| att.v_a.dot(f)).collect();
    let energies = Vector::new(energies).map_err(Error::Tensor)?;
    let alpha = softmax(&energies);
    let dim = states[0].len();
    let mut context = vec![0.0; dim];
    for (a, h) in alpha.iter().zip(states) {
        for (c, v) in context.iter_mut().zip(h.iter()) {
            *c += a * v;
        }
    }
    Ok(AttentionRecord {
        query,
        features,
        energies,
        alpha,
        context: Vector::from_vec(context),
    })
}

/// Additive attention over `encoder_states` from decoder state `s_prev`.
pub fn attend(att: &AttentionWeights, s_prev: &Vector, encoder_states: &[Vector]) -> Result<AttentionRecord> {
    let Some(first) = encoder_states.first() else {
        return Err(Error::EmptyInput);
    };
    if s_prev.len() != att.w_a.cols()
        || encoder_states.iter().any(|h| h.len() != att.u_a.cols())
        || att.v_a.len() != att.w_a.rows()
        || att.u_a.rows() != att.w_a.rows()
    {
        return Err(Error::Tensor(TensorError::ShapeMismatch {
            op: "attend",
            left: format!(
                "W_a {}x{}, U_a {}x{}",
                att.w_a.rows(),
                att.w_a.cols(),
                att.u_a.rows(),
                att.u_a.cols()
            ),
            right: format!("s {} h {}", s_prev.len(), first.len()),
        }));
    }
    let keys = attention_keys(att, encoder_states);
    attend_with_keys(att, s_prev, encoder_states, &keys)
}
