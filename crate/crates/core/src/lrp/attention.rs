use crate::error::{Error, Result};
use crate::lrp::rules::{lrp_gate_product, split_sum};
use crate::lrp::{GateLog, LrpConfig};
use crate::model::{ProductGate, ProductNode, ProductSite};
use crate::model::AttentionRecord;
use crate::tensor::Vector;

/// Relevance of `context = Σ_j alpha_j·h_j` sent back to each encoder state.
///
/// The sum is split with the ε-rule over the terms `alpha_j·h_j`; inside each
/// term `alpha_j` is the gate and gets nothing. With the attention path
/// disabled every position receives zero.
pub fn lrp_attention_backward(
    record: &AttentionRecord,
    encoder_states: &[Vector],
    r_context: &Vector,
    config: &LrpConfig,
    step: usize,
    gate_log: &mut GateLog,
) -> Result<Vec<Vector>> {
    let n = encoder_states.len();
    if record.alpha.len() != n {
        return Err(Error::IncompleteTape(format!(
            "attention weights cover {} positions, encoder has {n}",
            record.alpha.len()
        )));
    }
    let dim = record.context.len();
    if r_context.len() != dim || encoder_states.iter().any(|h| h.len() != dim) {
        return Err(Error::IncompleteTape("context width differs from encoder states".into()));
    }
    let node = |position| ProductNode {
        site: ProductSite::Attention { step, position },
        gate: ProductGate::AttentionWeight,
    };
    if !config.attention_path_enabled {
        for position in 0..n {
            gate_log.record(node(position), &Vector::zeros(dim));
        }
        return Ok(vec![Vector::zeros(dim); n]);
    }
    let terms: Vec<Vector> = record
        .alpha
        .iter()
        .zip(encoder_states)
        .map(|(&a, h)| h.scaled(a))
        .collect();
    let shares = split_sum(&terms, &record.context, r_context, config.epsilon, "attention context")?;
    shares
        .into_iter()
        .zip(encoder_states)
        .enumerate()
        .map(|(position, (share, h))| {
            let alpha = Vector::from_vec(vec![record.alpha[position]; dim]);
            let split = lrp_gate_product(&alpha, h, &share)?;
            gate_log.record(node(position), &split.gate);
            Ok(split.info)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    fn record(alpha: &[f64], states: &[Vector]) -> AttentionRecord {
        let dim = states[0].len();
        let mut ctx = vec![0.0; dim];
        for (a, h) in alpha.iter().zip(states) {
            for k in 0..dim {
                ctx[k] += a * h[k];
            }
        }
        AttentionRecord {
            query: Vector::zeros(1),
            features: vec![Vector::zeros(1); states.len()],
            energies: Vector::zeros(states.len()),
            alpha: v(alpha),
            context: v(&ctx),
        }
    }

    #[test]
    fn one_hot_alpha_routes_everything_to_that_state() {
        let states = vec![v(&[1.0, 2.0]), v(&[-0.5, 0.7]), v(&[0.3, 0.3])];
        let rec = record(&[0.0, 1.0, 0.0], &states);
        let r = v(&[0.4, -1.2]);
        let cfg = LrpConfig { epsilon: 0.0, ..LrpConfig::default() };
        let mut log = GateLog::default();
        let out = lrp_attention_backward(&rec, &states, &r, &cfg, 0, &mut log).unwrap();
        assert_eq!(out[1], r);
        assert!(out[0].iter().chain(out[2].iter()).all(|&x| x == 0.0));
        assert_eq!(log.len(), 3);
        assert_eq!(log.total_abs(), 0.0);
    }

    #[test]
    fn disabled_path_returns_zeros() {
        let states = vec![v(&[1.0, 2.0]), v(&[-0.5, 0.7])];
        let rec = record(&[0.3, 0.7], &states);
        let cfg = LrpConfig { attention_path_enabled: false, ..LrpConfig::default() };
        let mut log = GateLog::default();
        let out = lrp_attention_backward(&rec, &states, &v(&[1.0, 1.0]), &cfg, 2, &mut log).unwrap();
        assert!(out.iter().all(|o| o.iter().all(|&x| x == 0.0)));
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn uniform_alpha_over_identical_states_splits_evenly() {
        let states = vec![v(&[0.8, -0.3]), v(&[0.8, -0.3])];
        let rec = record(&[0.5, 0.5], &states);
        let r = v(&[1.0, 3.0]);
        let mut log = GateLog::default();
        let out = lrp_attention_backward(&rec, &states, &r, &LrpConfig::default(), 0, &mut log).unwrap();
        for k in 0..2 {
            assert!((out[0][k] - out[1][k]).abs() < 1e-9);
            assert!((out[0][k] + out[1][k] - r[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_alpha_is_an_error() {
        let states = vec![v(&[1.0]), v(&[2.0])];
        let mut rec = record(&[0.5, 0.5], &states);
        rec.alpha = v(&[1.0]);
        let mut log = GateLog::default();
        assert!(lrp_attention_backward(&rec, &states, &v(&[1.0]), &LrpConfig::default(), 0, &mut log).is_err());
    }
}
