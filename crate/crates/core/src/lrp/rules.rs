//! Local relevance rules.
//!
//! The ε-rule redistributes the relevance `R_j` of an affine output
//! `z_j = Σ_i w_ji·x_i + b_j` to its inputs as
//!
//! ```text
//! R_i←j = (w_ji·x_i + (ε·sign(z_j) + b_j)/D) / (z_j + ε·sign(z_j)) · R_j
//! ```
//!
//! with `D` the fan-in and `sign(0) = +1`. The numerators over `i` add up to
//! the denominator, so a layer passes on exactly the relevance it receives.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, TensorError, Vector};

#[inline]
pub(crate) fn sign(z: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `z + ε·sign(z)`.
#[inline]
pub(crate) fn stabilized(z: f64, eps: f64) -> f64 {
    z + eps * sign(z)
}

/// A block of columns of one weight matrix together with the input it multiplies.
pub(crate) struct AffinePart<'a> {
    pub w: &'a Matrix,
    pub cols: Range<usize>,
    pub x: &'a [f64],
    /// Frozen inputs are treated as constants: their contribution joins the bias
    /// and they receive no relevance.
    pub frozen: bool,
}

impl<'a> AffinePart<'a> {
    pub fn whole(w: &'a Matrix, x: &'a [f64]) -> Self {
        Self {
            w,
            cols: 0..w.cols(),
            x,
            frozen: false,
        }
    }

    fn contribution(&self, row: usize) -> f64 {
        self.w.row(row)[self.cols.clone()]
            .iter()
            .zip(self.x)
            .map(|(w, x)| w * x)
            .sum()
    }
}

/// ε-rule over an affine map whose input is split into `parts`.
///
/// Returns one relevance vector per part (zeros for frozen parts). When
/// `bias` is `None` the bias term is not redistributed.
pub(crate) fn eps_rule(
    parts: &[AffinePart<'_>],
    bias: Option<&[f64]>,
    z_out: &[f64],
    r_out: &[f64],
    eps: f64,
    context: &'static str,
) -> Result<Vec<Vec<f64>>> {
    let fan_in: usize = parts.iter().filter(|p| !p.frozen).map(|p| p.x.len()).sum();
    let mut out: Vec<Vec<f64>> = parts.iter().map(|p| vec![0.0; p.x.len()]).collect();
    if fan_in == 0 {
        return Ok(out);
    }
    let d = fan_in as f64;
    // Relevance landing on every non-frozen input through the (ε + bias)/D share.
    let mut shared = 0.0;
    for (j, (&z, &r)) in z_out.iter().zip(r_out).enumerate() {
        if r == 0.0 {
            continue;
        }
        let denom = stabilized(z, eps);
        if denom == 0.0 {
            return Err(Error::Singular { context });
        }
        let ratio = r / denom;
        let mut bias_j = bias.map_or(0.0, |b| b[j]);
        for p in parts.iter().filter(|p| p.frozen) {
            bias_j += p.contribution(j);
        }
        shared += (eps * sign(z) + bias_j) / d * ratio;
        for (p, acc) in parts.iter().zip(out.iter_mut()) {
            if p.frozen {
                continue;
            }
            for ((a, w), x) in acc.iter_mut().zip(&p.w.row(j)[p.cols.clone()]).zip(p.x) {
                *a += w * x * ratio;
            }
        }
    }
    if shared != 0.0 {
        for (p, acc) in parts.iter().zip(out.iter_mut()) {
            if !p.frozen {
                acc.iter_mut().for_each(|a| *a += shared);
            }
        }
    }
    Ok(out)
}

/// ε-rule for `z = W·x + b` (bias redistributed as `b_j/D`).
pub fn lrp_linear(w: &Matrix, b: &Vector, x: &Vector, z_out: &Vector, r_out: &Vector, eps: f64) -> Result<Vector> {
    if w.cols() != x.len() || w.rows() != b.len() || z_out.len() != w.rows() || r_out.len() != w.rows() {
        return Err(Error::Tensor(TensorError::ShapeMismatch {
            op: "lrp_linear",
            left: format!("W {}x{}", w.rows(), w.cols()),
            right: format!("x {} b {} z {} R {}", x.len(), b.len(), z_out.len(), r_out.len()),
        }));
    }
    let mut parts = eps_rule(&[AffinePart::whole(w, x)], Some(b), z_out, r_out, eps, "lrp_linear")?;
    Ok(Vector::from_vec(parts.remove(0)))
}

/// Relevance split of an elementwise product `gate ⊙ info`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSplit {
    pub info: Vector,
    pub gate: Vector,
}

/// The information vector takes all relevance; the gate takes none.
pub fn lrp_gate_product(gate: &Vector, info: &Vector, r_out: &Vector) -> Result<GateSplit> {
    if gate.len() != info.len() || info.len() != r_out.len() {
        return Err(Error::Tensor(TensorError::ShapeMismatch {
            op: "lrp_gate_product",
            left: format!("gate {} info {}", gate.len(), info.len()),
            right: format!("R {}", r_out.len()),
        }));
    }
    Ok(GateSplit {
        info: r_out.clone(),
        gate: Vector::zeros(gate.len()),
    })
}

/// ε-rule for an elementwise sum `total = Σ_k terms[k]` (no weights, no bias,
/// fan-in = number of terms).
pub(crate) fn split_sum(
    terms: &[Vector],
    total: &Vector,
    r_out: &Vector,
    eps: f64,
    context: &'static str,
) -> Result<Vec<Vector>> {
    let d = terms.len() as f64;
    let mut out = vec![vec![0.0; total.len()]; terms.len()];
    for j in 0..total.len() {
        let r = r_out[j];
        if r == 0.0 {
            continue;
        }
        let denom = stabilized(total[j], eps);
        if denom == 0.0 {
            return Err(Error::Singular { context });
        }
        let ratio = r / denom;
        let share = eps * sign(total[j]) / d;
        for (term, acc) in terms.iter().zip(out.iter_mut()) {
            acc[j] = (term[j] + share) * ratio;
        }
    }
    Ok(out.into_iter().map(Vector::from_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn identity_passes_relevance_through() {
        let w = Matrix::identity(3);
        let x = v(&[0.5, -2.0, 3.0]);
        let r = v(&[1.0, 2.0, -0.5]);
        let out = lrp_linear(&w, &Vector::zeros(3), &x, &x, &r, 0.0).unwrap();
        assert_eq!(out, r);
    }

    #[test]
    fn proportional_split_hand_case() {
        let w = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let out = lrp_linear(&w, &v(&[0.0]), &v(&[1.0, 3.0]), &v(&[4.0]), &v(&[4.0]), 0.0).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 3.0]);
    }

    #[test]
    fn bias_is_spread_over_fan_in() {
        // z = 1 + 3 + 2 = 6; each input also gets b/D = 1.
        let w = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let out = lrp_linear(&w, &v(&[2.0]), &v(&[1.0, 3.0]), &v(&[6.0]), &v(&[6.0]), 0.0).unwrap();
        assert_eq!(out.as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn conservation_random_case() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let w = Matrix::new(3, 4, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let x = v(&(0..4).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let b = Vector::zeros(3);
        let z = crate::tensor::affine(&w, &x, &b).unwrap();
        let r = v(&[0.7, -1.3, 2.1]);
        let out = lrp_linear(&w, &b, &x, &z, &r, 0.0).unwrap();
        assert!((out.sum() - r.sum()).abs() <= 1e-9 * r.sum().abs());
    }

    #[test]
    fn zero_denominator_without_epsilon_is_singular() {
        let w = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let x = v(&[2.0, 2.0]);
        let err = lrp_linear(&w, &v(&[0.0]), &x, &v(&[0.0]), &v(&[1.0]), 0.0).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
        // sign(0) = +1: the stabilizer resolves it.
        let out = lrp_linear(&w, &v(&[0.0]), &x, &v(&[0.0]), &v(&[1.0]), 1e-5).unwrap();
        assert!((out.sum() - 1.0).abs() < 1e-12);
        // No relevance to distribute: nothing to divide.
        assert!(lrp_linear(&w, &v(&[0.0]), &x, &v(&[0.0]), &v(&[0.0]), 0.0).is_ok());
    }

    #[test]
    fn shape_mismatch() {
        let w = Matrix::zeros(2, 3);
        assert!(lrp_linear(&w, &Vector::zeros(2), &Vector::zeros(2), &Vector::zeros(2), &Vector::zeros(2), 0.0).is_err());
        assert!(lrp_gate_product(&Vector::zeros(2), &Vector::zeros(3), &Vector::zeros(2)).is_err());
    }

    #[test]
    fn gate_product_rule() {
        let s = lrp_gate_product(&v(&[0.5, 0.9]), &v(&[1.0, -2.0]), &v(&[0.3, 0.7])).unwrap();
        assert_eq!(s.info.as_slice(), &[0.3, 0.7]);
        assert_eq!(s.gate.as_slice(), &[0.0, 0.0]);
        let s = lrp_gate_product(&v(&[0.5, 0.9]), &v(&[1.0, -2.0]), &Vector::zeros(2)).unwrap();
        assert!(s.info.iter().chain(s.gate.iter()).all(|&r| r == 0.0));
        let s = lrp_gate_product(&v(&[1.0, 1.0]), &v(&[1.0, -2.0]), &v(&[0.3, 0.7])).unwrap();
        assert!(s.gate.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn frozen_part_folds_into_bias() {
        // z = 1·2 + 1·4 (frozen) = 6; live input gets everything.
        let w = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let x = [2.0, 4.0];
        let parts = [
            AffinePart { w: &w, cols: 0..1, x: &x[0..1], frozen: false },
            AffinePart { w: &w, cols: 1..2, x: &x[1..2], frozen: true },
        ];
        let out = eps_rule(&parts, Some(&[0.0]), &[6.0], &[3.0], 0.0, "test").unwrap();
        assert_eq!(out[0], vec![3.0]);
        assert_eq!(out[1], vec![0.0]);
    }

    proptest! {
        #[test]
        fn eps_rule_conserves_with_bias_and_epsilon(
            wdata in prop::collection::vec(-1.0f64..1.0, 15),
            x in prop::collection::vec(-1.0f64..1.0, 5),
            b in prop::collection::vec(-0.5f64..0.5, 3),
            r in prop::collection::vec(-1.0f64..1.0, 3),
            eps in prop::sample::select(vec![1e-5, 1e-2]),
        ) {
            let w = Matrix::new(3, 5, wdata).unwrap();
            let x = v(&x);
            let b = v(&b);
            let z = crate::tensor::affine(&w, &x, &b).unwrap();
            let r = v(&r);
            let out = lrp_linear(&w, &b, &x, &z, &r, eps).unwrap();
            // Rounding bound: each output moves |R_j|/|denom_j| times the
            // magnitude of the terms summed for it.
            let bound: f64 = (0..3).map(|j| {
                let mag: f64 = (0..5).map(|i| (w.get(j, i) * x[i]).abs()).sum::<f64>() + b[j].abs() + eps;
                r[j].abs() / (z[j] + eps * sign(z[j])).abs() * mag
            }).sum();
            prop_assert!((out.sum() - r.sum()).abs() <= 1e-12 * bound.max(1.0));
        }

        #[test]
        fn split_sum_conserves(
            a in prop::collection::vec(-2.0f64..2.0, 4),
            b in prop::collection::vec(-2.0f64..2.0, 4),
            r in prop::collection::vec(-1.0f64..1.0, 4),
        ) {
            let a = v(&a[..]);
            let b = v(&b);
            let total = v(&a.iter().zip(b.iter()).map(|(x, y)| x + y).collect::<Vec<_>>());
            let r = v(&r);
            let parts = split_sum(&[a.clone(), b.clone()], &total, &r, 1e-5, "test").unwrap();
            for j in 0..4 {
                let s = parts[0][j] + parts[1][j];
                let mag = a[j].abs() + b[j].abs() + 1e-5;
                let bound = r[j].abs() / stabilized(total[j], 1e-5).abs() * mag;
                prop_assert!((s - r[j]).abs() <= 1e-12 * bound.max(1.0));
            }
        }
    }
}
