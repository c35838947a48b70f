//! Dense kernels with forward/backward contracts and a finite-difference
//! verification harness.

mod gradcheck;
pub(crate) mod kernels;
mod mlp;
mod ops;
mod params;
mod tensor;

pub use gradcheck::{
    central_difference_jacobian, check_param_gradients, check_selected_gradients, extrapolated_difference_jacobian, max_relative_error, GradCheckRegistry,
    GradCheckReport, DEFAULT_STEP, CHECK_STEP, REL_FLOOR,
};
pub use kernels::MASK_SENTINEL;
pub use mlp::{init_layer_norm, init_linear, layer_norm as layer_norm_params, linear as linear_params};
pub use mlp::{Activation, MlpSpec, LAYER_NORM_EPS};
pub use ops::{Eager, Gradients, Ops, Tape, Var};
pub use params::{ParamStore, WEIGHT_FORMAT_VERSION, WEIGHT_MAGIC};
pub use tensor::{precision, set_precision, Mask, Precision, Tensor};

use crate::error::{Error, Result};

/// Weight matrix (`out × in`) and bias (`out`) of one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearWeights {
    pub w: Tensor,
    pub b: Tensor,
}

impl LinearWeights {
    pub fn new(w: Tensor, b: Tensor) -> Result<Self> {
        if w.shape().len() != 2 || b.len() != w.rows() {
            return Err(Error::dim("LinearWeights", format!("{:?} / {:?}", w.shape(), b.shape())));
        }
        Ok(Self { w, b })
    }
}

pub fn linear_forward(x: &Tensor, weights: &LinearWeights) -> Result<Tensor> {
    kernels::linear_kernel(x, &weights.w, Some(&weights.b))
}

pub fn masked_softmax(logits: &Tensor, mask: &Mask) -> Result<Tensor> {
    kernels::masked_softmax_kernel(logits, mask)
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    kernels::layer_norm_kernel(x, gamma, beta, eps)
}

/// Runs `spec` with weights registered under `prefix` in `weights`.
pub fn mlp_forward(x: &Tensor, spec: &MlpSpec, weights: &ParamStore, prefix: &str) -> Result<Tensor> {
    let mut ops = Eager::new(weights);
    let x = ops.constant(x.clone());
    let y = spec.forward(&mut ops, &x, prefix)?;
    Ok(y.as_ref().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_identity_and_bias() {
        let id = LinearWeights::new(Tensor::identity(2), Tensor::zeros(&[2])).unwrap();
        let y = linear_forward(&Tensor::from_rows(&[[1.0, 0.0]]).unwrap(), &id).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0]);

        let w = LinearWeights::new(
            Tensor::matrix(2, 2, vec![0.3, -1.0, 2.0, 5.0]).unwrap(),
            Tensor::vector(vec![3.0, 4.0]),
        )
        .unwrap();
        let y = linear_forward(&Tensor::zeros(&[1, 2]), &w).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);

        let w = LinearWeights::new(
            Tensor::matrix(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(&[2]),
        )
        .unwrap();
        let y = linear_forward(&Tensor::from_rows(&[[1.0, 2.0]]).unwrap(), &w).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
    }

    #[test]
    fn linear_shape_mismatch() {
        let id = LinearWeights::new(Tensor::identity(2), Tensor::zeros(&[2])).unwrap();
        let r = linear_forward(&Tensor::zeros(&[1, 3]), &id);
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn masked_softmax_examples() {
        let l = Tensor::from_rows(&[[5.0, 100.0]]).unwrap();
        let y = masked_softmax(&l, &Mask::new(1, 2, vec![true, false]).unwrap()).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0]);

        let y = masked_softmax(&Tensor::zeros(&[1, 2]), &Mask::all(1, 2)).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);

        let l = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        let y = masked_softmax(&l, &Mask::new(1, 2, vec![false, false]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn layer_norm_examples() {
        let one = Tensor::filled(&[3], 1.0);
        let zero = Tensor::zeros(&[3]);
        let y = layer_norm(&Tensor::filled(&[1, 3], 4.2), &one, &zero, 1e-5).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));

        let one = Tensor::filled(&[2], 1.0);
        let zero = Tensor::zeros(&[2]);
        let y = layer_norm(&Tensor::from_rows(&[[-1.0, 1.0]]).unwrap(), &one, &zero, 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);

        let g = Tensor::filled(&[2], 2.0);
        let b = Tensor::filled(&[2], 1.0);
        let y = layer_norm(&Tensor::from_rows(&[[0.0, 2.0]]).unwrap(), &g, &b, 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 3.0]);
    }

    fn logits_and_mask() -> impl Strategy<Value = (Tensor, Mask)> {
        (1usize..6, 1usize..8).prop_flat_map(|(r, c)| {
            (
                proptest::collection::vec(-30.0f64..30.0, r * c),
                proptest::collection::vec(any::<bool>(), r * c),
            )
                .prop_map(move |(l, m)| {
                    (Tensor::matrix(r, c, l).unwrap(), Mask::new(r, c, m).unwrap())
                })
        })
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_zero_or_one((l, m) in logits_and_mask()) {
            let y = masked_softmax(&l, &m).unwrap();
            for r in 0..y.rows() {
                let s: f64 = y.row(r).iter().sum();
                let any = m.row(r).iter().any(|k| *k);
                if any { prop_assert!((s - 1.0).abs() < 1e-12); } else { prop_assert_eq!(s, 0.0); }
                for j in 0..y.cols() {
                    if !m.get(r, j) { prop_assert_eq!(y.at(r, j), 0.0); }
                    prop_assert!(y.at(r, j) >= 0.0);
                }
            }
        }

        #[test]
        fn softmax_shift_invariant((l, m) in logits_and_mask(), shift in -50.0f64..50.0) {
            let shifted = l.map(|v| v + shift);
            let a = masked_softmax(&l, &m).unwrap();
            let b = masked_softmax(&shifted, &m).unwrap();
            prop_assert!(a.max_abs_diff(&b) <= 1e-12);
        }

        #[test]
        fn identity_linear_is_exact(rows in 1usize..5, cols in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1e3..1e3)).collect();
            let x = Tensor::matrix(rows, cols, data).unwrap();
            let id = LinearWeights::new(Tensor::identity(cols), Tensor::zeros(&[cols])).unwrap();
            prop_assert_eq!(linear_forward(&x, &id).unwrap(), x);
        }
    }
}
