use crate::error::Result;
use crate::model::vocab::STOP;
use crate::model::{decode_teacher_forced, Gate, LstmRecord, LstmWeights, ModelWeights, TokenId};
use crate::tensor::softmax;

/// Gold token for each teacher-forced step: the targets, then STOP.
fn gold(targets: &[TokenId]) -> impl Iterator<Item = TokenId> + '_ {
    targets.iter().copied().chain(std::iter::once(STOP))
}

/// Summed cross-entropy of `targets` followed by STOP under teacher forcing.
pub fn sequence_loss(weights: &ModelWeights, input: &[TokenId], targets: &[TokenId]) -> Result<f64> {
    let tape = decode_teacher_forced(input, targets, weights)?;
    Ok(tape
        .decoder
        .iter()
        .zip(gold(targets))
        .map(|(step, y)| -softmax(&step.logits)[y].ln())
        .sum())
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Backward through one LSTM step. Accumulates parameter gradients into
/// `grad` and returns `(dx, dh_prev, dc_prev)`.
fn lstm_backward(
    w: &LstmWeights,
    grad: &mut LstmWeights,
    rec: &LstmRecord,
    dh: &[f64],
    dc: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hidden = dh.len();
    let (i, f, o, g) = (
        rec.act(Gate::Input),
        rec.act(Gate::Forget),
        rec.act(Gate::Output),
        rec.act(Gate::Candidate),
    );
    let mut dz = [vec![0.0; hidden], vec![0.0; hidden], vec![0.0; hidden], vec![0.0; hidden]];
    let mut dc_prev = vec![0.0; hidden];
    for k in 0..hidden {
        let t = rec.tanh_c[k];
        let d_o = dh[k] * t;
        let dct = dc[k] + dh[k] * o[k] * (1.0 - t * t);
        let d_f = dct * rec.c_prev[k];
        let d_i = dct * g[k];
        let d_g = dct * i[k];
        dc_prev[k] = dct * f[k];
        dz[Gate::Input.index()][k] = d_i * i[k] * (1.0 - i[k]);
        dz[Gate::Forget.index()][k] = d_f * f[k] * (1.0 - f[k]);
        dz[Gate::Output.index()][k] = d_o * o[k] * (1.0 - o[k]);
        dz[Gate::Candidate.index()][k] = d_g * (1.0 - g[k] * g[k]);
    }
    let mut dx = vec![0.0; rec.x.len()];
    let mut dh_prev = vec![0.0; hidden];
    for gate in Gate::ALL {
        let d = &dz[gate.index()];
        let gw = w.gate(gate);
        let gg = grad.gate_mut(gate);
        gg.w_x.add_outer(d, &rec.x);
        gg.w_h.add_outer(d, &rec.h_prev);
        add(gg.b.as_mut_slice(), d);
        gw.w_x.matvec_t_acc(d, &mut dx);
        gw.w_h.matvec_t_acc(d, &mut dh_prev);
    }
    (dx, dh_prev, dc_prev)
}

/// Adds the gradient of [`sequence_loss`] to `grad` and returns the loss.
pub fn accumulate_gradient(
    weights: &ModelWeights,
    input: &[TokenId],
    targets: &[TokenId],
    grad: &mut ModelWeights,
) -> Result<f64> {
    let tape = decode_teacher_forced(input, targets, weights)?;
    let cfg = &weights.config;
    let (hidden, embed) = (cfg.hidden_dim, cfg.embed_dim);
    let n = tape.input_len();
    let states = &tape.encoder.states;
    let att = &weights.attention;

    let mut loss = 0.0;
    let mut d_states = vec![vec![0.0; cfg.state_dim()]; n];
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let golds: Vec<TokenId> = gold(targets).collect();

    for (t, step) in tape.decoder.iter().enumerate().rev() {
        let y = golds[t];
        let mut dlogits = softmax(&step.logits).into_vec();
        loss -= dlogits[y].ln();
        dlogits[y] -= 1.0;
        grad.projection.w_out.add_outer(&dlogits, &step.lstm.h);
        add(grad.projection.b_out.as_mut_slice(), &dlogits);

        let mut dh = dh_next.clone();
        weights.projection.w_out.matvec_t_acc(&dlogits, &mut dh);
        let (dx, dh_prev, dc_prev) = lstm_backward(&weights.decoder, &mut grad.decoder, &step.lstm, &dh, &dc_next);
        add(grad.embedding.row_mut(step.prev_token), &dx[..embed]);
        let dctx = &dx[embed..];

        // Attention read from the decoder state before this step.
        let rec = &step.attention;
        let alpha = &rec.alpha;
        let dalpha: Vec<f64> = states.iter().map(|h| h.iter().zip(dctx).map(|(a, b)| a * b).sum()).collect();
        let mean: f64 = alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
        let mut sum_da = vec![0.0; cfg.attention_dim()];
        for j in 0..n {
            for (d, c) in d_states[j].iter_mut().zip(dctx) {
                *d += alpha[j] * c;
            }
            let de = alpha[j] * (dalpha[j] - mean);
            if de == 0.0 {
                continue;
            }
            let feat = &rec.features[j];
            add(grad.attention.v_a.as_mut_slice(), &feat.scaled(de));
            let da: Vec<f64> = feat
                .iter()
                .zip(att.v_a.iter())
                .map(|(f, v)| de * v * (1.0 - f * f))
                .collect();
            add(&mut sum_da, &da);
            grad.attention.u_a.add_outer(&da, &states[j]);
            att.u_a.matvec_t_acc(&da, &mut d_states[j]);
        }
        grad.attention.w_a.add_outer(&sum_da, &step.lstm.h_prev);
        dh_next = dh_prev;
        att.w_a.matvec_t_acc(&sum_da, &mut dh_next);
        dc_next = dc_prev;
    }

    // The decoder starts from the forward encoder's final state.
    let mut carry_h = dh_next;
    let mut carry_c = dc_next;
    for pos in (0..n).rev() {
        let mut dh = d_states[pos][..hidden].to_vec();
        add(&mut dh, &carry_h);
        let rec = &tape.encoder.fwd[pos];
        let (dx, dh_prev, dc_prev) = lstm_backward(&weights.encoder_fwd, &mut grad.encoder_fwd, rec, &dh, &carry_c);
        add(grad.embedding.row_mut(tape.input_ids[pos]), &dx);
        carry_h = dh_prev;
        carry_c = dc_prev;
    }

    // The backward encoder ran from the last position to the first.
    let mut carry_h = vec![0.0; hidden];
    let mut carry_c = vec![0.0; hidden];
    for ((d_state, rec), &id) in d_states.iter().zip(&tape.encoder.bwd).zip(&tape.input_ids) {
        let mut dh = d_state[hidden..].to_vec();
        add(&mut dh, &carry_h);
        let (dx, dh_prev, dc_prev) = lstm_backward(&weights.encoder_bwd, &mut grad.encoder_bwd, rec, &dh, &carry_c);
        add(grad.embedding.row_mut(id), &dx);
        carry_h = dh_prev;
        carry_c = dc_prev;
    }
    Ok(loss)
}

/// Outcome of comparing analytic and finite-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub checked: usize,
    pub passed: usize,
    pub worst_relative: f64,
    pub worst_parameter: String,
}

impl GradientCheck {
    pub fn pass_rate(&self) -> f64 {
        self.passed as f64 / self.checked.max(1) as f64
    }
}

/// Central differences on every parameter of `weights`.
///
/// A parameter passes when `|a − n| ≤ tol·max(|a|, |n|, floor)`; the floor
/// keeps exact-zero gradients from failing on rounding noise.
pub fn gradient_check(
    weights: &ModelWeights,
    input: &[TokenId],
    targets: &[TokenId],
    step: f64,
    tol: f64,
    floor: f64,
) -> Result<GradientCheck> {
    let mut analytic = ModelWeights::zeros(weights.config)?;
    accumulate_gradient(weights, input, targets, &mut analytic)?;
    let analytic: Vec<(String, f64)> = analytic
        .blocks()
        .into_iter()
        .flat_map(|b| {
            let name = b.name;
            b.data
                .iter()
                .enumerate()
                .map(move |(k, &g)| (format!("{name}[{k}]"), g))
                .collect::<Vec<_>>()
        })
        .collect();

    let mut probe = weights.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut flat_index = 0;
    let mut failure = None;
    let total = weights.num_params();
    while flat_index < total {
        let mut original = 0.0;
        set_flat(&mut probe, flat_index, |v| {
            original = *v;
            *v = original + step;
        });
        let plus = sequence_loss(&probe, input, targets);
        set_flat(&mut probe, flat_index, |v| *v = original - step);
        let minus = sequence_loss(&probe, input, targets);
        set_flat(&mut probe, flat_index, |v| *v = original);
        match (plus, minus) {
            (Ok(p), Ok(m)) => numeric.push((p - m) / (2.0 * step)),
            (Err(e), _) | (_, Err(e)) => {
                failure = Some(e);
                break;
            }
        }
        flat_index += 1;
    }
    if let Some(e) = failure {
        return Err(e);
    }

    let mut report = GradientCheck {
        checked: numeric.len(),
        passed: 0,
        worst_relative: 0.0,
        worst_parameter: String::new(),
    };
    for ((name, a), n) in analytic.iter().zip(&numeric) {
        let scale = a.abs().max(n.abs()).max(floor);
        let rel = (a - n).abs() / scale;
        if rel <= tol {
            report.passed += 1;
        }
        if rel > report.worst_relative {
            report.worst_relative = rel;
            report.worst_parameter = name.clone();
        }
    }
    Ok(report)
}

fn set_flat(weights: &mut ModelWeights, index: usize, f: impl FnOnce(&mut f64)) {
    let mut offset = 0;
    let mut f = Some(f);
    weights.for_each_param_mut(|_, _, _, data| {
        if index >= offset && index < offset + data.len() {
            if let Some(f) = f.take() {
                f(&mut data[index - offset]);
            }
        }
        offset += data.len();
    });
}

/// Euclidean norm over every gradient entry.
pub fn global_norm(grad: &ModelWeights) -> f64 {
    grad.blocks()
        .iter()
        .flat_map(|b| b.data.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// `weights -= lr·scale·grad`.
pub fn sgd_step(weights: &mut ModelWeights, grad: &ModelWeights, lr: f64, scale: f64) {
    let flat = grad.to_flat();
    let mut offset = 0;
    weights.for_each_param_mut(|_, _, _, data| {
        for (w, g) in data.iter_mut().zip(&flat[offset..]) {
            *w -= lr * scale * g;
        }
        offset += data.len();
    });
}
