//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles.
//! Calling [`Tape::backward`] on a one-element result walks the record
//! once in reverse and returns [`Gradients`] for every leaf.
//!
//! ```
//! use eegbigru::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
//! let y = tape.add(x, x).unwrap();
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 2.0]);
//! ```
//!
//! Shapes are explicit: apart from scalar ops and [`Tape::add_bias`] there
//! is no broadcasting.

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var, PROB_CLAMP};
pub use tensor::{DType, Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("backward needs a one-element loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    BadRate(f64),
}


#[cfg(test)]
mod tests {
    use super::gradcheck::{max_rel_err, numeric_grad};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    /// Checks d(Σ w⊙f(x))/dx for a unary op against finite differences,
    /// where `w` is a fixed random weighting that makes the check non-trivial.
    fn check_unary(
        build: &dyn Fn(&mut Tape<f64>, Var) -> Var,
        shape: &[usize],
        trials: usize,
        seed: u64,
    ) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let x0 = random(shape, &mut rng);
            let mut tape = Tape::new();
            let x = tape.param(x0.clone());
            let y = build(&mut tape, x);
            let w = random(tape.shape(y), &mut rng);
            let wv = tape.constant(w.clone());
            let prod = tape.mul(y, wv).unwrap();
            let loss = tape.sum(prod);
            let g = tape.backward(loss).unwrap();
            let mut f = |xp: &Tensor<f64>| {
                let mut tp = Tape::new();
                let x = tp.constant(xp.clone());
                let y = build(&mut tp, x);
                let wv = tp.constant(w.clone());
                let prod = tp.mul(y, wv).unwrap();
                let l = tp.sum(prod);
                tp.value(l).item()
            };
            let num = numeric_grad(&mut f, &x0, 1e-5);
            worst = worst.max(max_rel_err(g.wrt(x), &num));
        }
        worst
    }

    #[test]
    fn matmul_values() {
        let mut tape = Tape::<f64>::new();
        let i = tape.constant(Tensor::eye(2));
        let x = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = tape.matmul(i, x).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());

        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(&[2, 1], &[5.0, 6.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 1]);
        assert_eq!(tape.value(c).data(), &[17.0, 39.0]);
        assert!(matches!(tape.matmul(b, b), Err(AutodiffError::ShapeMismatch { .. })));
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a0 = random(&[3, 4], &mut rng);
            let b0 = random(&[4, 2], &mut rng);
            let mut tape = Tape::new();
            let a = tape.param(a0.clone());
            let b = tape.param(b0.clone());
            let c = tape.matmul(a, b).unwrap();
            let loss = tape.sum(c);
            let g = tape.backward(loss).unwrap();
            let mut fa = |ap: &Tensor<f64>| ap.matmul(&b0).unwrap().data().iter().sum();
            let na = numeric_grad(&mut fa, &a0, 1e-5);
            let mut fb = |bp: &Tensor<f64>| a0.matmul(bp).unwrap().data().iter().sum();
            let nb = numeric_grad(&mut fb, &b0, 1e-5);
            assert!(max_rel_err(g.wrt(a), &na) < 1e-6);
            assert!(max_rel_err(g.wrt(b), &nb) < 1e-6);
        }
    }

    #[test]
    fn elementwise_identities() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2, 2], &[1.0, -2.0, 3.5, 0.0]));
        let zero = tape.constant(Tensor::zeros(&[2, 2]));
        let one = tape.constant(Tensor::ones(&[2, 2]));
        let s = tape.add(a, zero).unwrap();
        let p = tape.mul(a, one).unwrap();
        assert_eq!(tape.value(s), tape.value(a));
        assert_eq!(tape.value(p), tape.value(a));
        let bad = tape.constant(Tensor::zeros(&[4]));
        assert!(tape.add(a, bad).is_err());
        assert!(tape.sub(a, bad).is_err());
        assert!(tape.mul(a, bad).is_err());
    }

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let a0 = random(&[2, 3], &mut rng);
            let b0 = random(&[2, 3], &mut rng);
            let build = |tp: &mut Tape<f64>, a: Var, b: Var| {
                let s = tp.add(a, b).unwrap();
                let d = tp.sub(s, b).unwrap();
                let m = tp.mul(d, b).unwrap();
                let sc = tp.scale(m, 0.7);
                let sh = tp.add_scalar(sc, 0.3);
                let m2 = tp.mul(sh, a).unwrap();
                tp.sum(m2)
            };
            let mut tape = Tape::new();
            let a = tape.param(a0.clone());
            let b = tape.param(b0.clone());
            let l = build(&mut tape, a, b);
            let g = tape.backward(l).unwrap();
            let mut fa = |ap: &Tensor<f64>| {
                let mut tp = Tape::new();
                let (a, b) = (tp.constant(ap.clone()), tp.constant(b0.clone()));
                let l = build(&mut tp, a, b);
                tp.value(l).item()
            };
            let na = numeric_grad(&mut fa, &a0, 1e-5);
            let mut fb = |bp: &Tensor<f64>| {
                let mut tp = Tape::new();
                let (a, b) = (tp.constant(a0.clone()), tp.constant(bp.clone()));
                let l = build(&mut tp, a, b);
                tp.value(l).item()
            };
            let nb = numeric_grad(&mut fb, &b0, 1e-5);
            worst = worst.max(max_rel_err(g.wrt(a), &na)).max(max_rel_err(g.wrt(b), &nb));
        }
        assert!(worst < 1e-6, "worst rel err {worst}");
    }

    #[test]
    fn activation_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[0.0, -3.0, 800.0]));
        let s = tape.sigmoid(x);
        let th = tape.tanh(x);
        let r = tape.relu(x);
        assert_eq!(tape.value(s).data()[0], 0.5);
        assert_eq!(tape.value(th).data()[0], 0.0);
        assert_eq!(tape.value(r).data()[1], 0.0);
        assert_eq!(tape.value(s).data()[2], 1.0);
        let neg = tape.constant(t(&[1], &[-800.0]));
        let sn = tape.sigmoid(neg);
        assert!(tape.value(sn).all_finite());
        assert_eq!(tape.value(sn).data()[0], 0.0);
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        assert!(check_unary(&|tp, x| tp.sigmoid(x), &[3, 4], 100, 1) < 1e-6);
        assert!(check_unary(&|tp, x| tp.tanh(x), &[3, 4], 100, 2) < 1e-6);
        // ReLU is not differentiable at 0; random draws never land exactly there.
        assert!(check_unary(&|tp, x| tp.relu(x), &[3, 4], 100, 4) < 1e-6);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[0.0, 1.0]));
        let r = tape.relu(x);
        let l = tape.sum(r);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_closed_forms() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3, 2], &[0.0, 0.0, 2f64.ln(), 0.0, 1000.0, 0.0]));
        let p = tape.softmax(x).unwrap();
        let v = tape.value(p).data().to_vec();
        assert_eq!(&v[0..2], &[0.5, 0.5]);
        assert!((v[2] - 2.0 / 3.0).abs() < 1e-12 && (v[3] - 1.0 / 3.0).abs() < 1e-12);
        assert!(v.iter().all(|x| x.is_finite()));
        assert!((v[4] - 1.0).abs() < 1e-12 && v[5] < 1e-12);
        let one = tape.constant(Tensor::zeros(&[2, 1]));
        assert!(tape.softmax(one).is_err());
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        assert!(check_unary(&|tp, x| tp.softmax(x).unwrap(), &[3, 4], 100, 5) < 1e-6);
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let mut tape = Tape::<f64>::new();
        let labels = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let perfect = tape.constant(labels.clone());
        let l = tape.cross_entropy(perfect, labels.clone()).unwrap();
        assert!(tape.value(l).item().abs() <= 1e-11);
        let half = tape.constant(Tensor::full(&[2, 2], 0.5));
        let l = tape.cross_entropy(half, labels.clone()).unwrap();
        assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-12);
        let bad = tape.constant(Tensor::full(&[3, 2], 0.5));
        assert!(tape.cross_entropy(bad, labels).is_err());
    }

    #[test]
    fn fused_gradient_is_p_minus_y_over_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let z0 = random(&[4, 2], &mut rng);
            let mut labels = Tensor::zeros(&[4, 2]);
            for b in 0..4 {
                let k = rng.random_range(0..2);
                labels.data_mut()[b * 2 + k] = 1.0;
            }
            let mut tape = Tape::new();
            let z = tape.param(z0.clone());
            let l = tape.softmax_cross_entropy(z, labels.clone()).unwrap();
            let g = tape.backward(l).unwrap();
            let mut f = |zp: &Tensor<f64>| {
                let mut tp = Tape::new();
                let z = tp.constant(zp.clone());
                let p = tp.softmax(z).unwrap();
                let l = tp.cross_entropy(p, labels.clone()).unwrap();
                tp.value(l).item()
            };
            let num = numeric_grad(&mut f, &z0, 1e-5);
            assert!(max_rel_err(g.wrt(z), &num) < 1e-6);

            let mut tp = Tape::new();
            let zc = tp.constant(z0.clone());
            let p = tp.softmax(zc).unwrap();
            let expected: Vec<f64> = tp
                .value(p)
                .data()
                .iter()
                .zip(labels.data())
                .map(|(p, y)| (p - y) / 4.0)
                .collect();
            for (a, e) in g.wrt(z).data().iter().zip(&expected) {
                assert!((a - e).abs() < 1e-15);
            }
            // The unfused path agrees with the fused loss value.
            let lu = tp.cross_entropy(p, labels.clone()).unwrap();
            assert!((tp.value(lu).item() - tape.value(l).item()).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_shapes_and_routing() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::ones(&[4, 128]));
        let b = tape.param(Tensor::zeros(&[4, 128]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[4, 256]);
        let l = tape.sum(c);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(a), &Tensor::ones(&[4, 128]));

        let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let empty = tape.constant(Tensor::zeros(&[2, 0]));
        let xc = tape.concat(&[x, empty], 1).unwrap();
        assert_eq!(tape.value(xc), tape.value(x));
        let wrong = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(tape.concat(&[x, wrong], 1).is_err());
    }

    #[test]
    fn concat_slice_reshape_gradients() {
        let check = check_unary(
            &|tp, x| {
                let s0 = tp.slice(x, 1, 0, 2).unwrap();
                let s1 = tp.slice(x, 1, 1, 3).unwrap();
                let t0 = tp.tanh(s0);
                let c = tp.concat(&[s1, t0], 1).unwrap();
                let r = tp.reshape(c, &[2, 5, 3]).unwrap();
                let r2 = tp.slice(r, 1, 1, 4).unwrap();
                let r3 = tp.reshape(r2, &[2, 12]).unwrap();
                let c2 = tp.concat(&[r3, r3], 1).unwrap();
                tp.reshape(c2, &[2, 3, 4, 2]).unwrap()
            },
            &[2, 4, 3],
            20,
            8,
        );
        assert!(check < 1e-6, "{check}");
    }

    #[test]
    fn add_bias_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x0 = random(&[3, 2], &mut rng);
        let b0 = random(&[2], &mut rng);
        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let b = tape.param(b0.clone());
        let y = tape.add_bias(x, b).unwrap();
        let y2 = tape.mul(y, y).unwrap();
        let l = tape.sum(y2);
        let g = tape.backward(l).unwrap();
        let mut fb = |bp: &Tensor<f64>| {
            let mut tp = Tape::new();
            let (x, b) = (tp.constant(x0.clone()), tp.constant(bp.clone()));
            let y = tp.add_bias(x, b).unwrap();
            let y2 = tp.mul(y, y).unwrap();
            let l = tp.sum(y2);
            tp.value(l).item()
        };
        let nb = numeric_grad(&mut fb, &b0, 1e-5);
        assert!(max_rel_err(g.wrt(b), &nb) < 1e-6);
        let wrong = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.add_bias(x, wrong).is_err());
    }

    #[test]
    fn dropout_contract() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[4], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(tape.dropout(x, 0.0, true, 1).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.5, false, 1).unwrap(), x);
        assert!(matches!(tape.dropout(x, 1.0, true, 1), Err(AutodiffError::BadRate(_))));
        assert!(tape.dropout(x, -0.1, true, 1).is_err());
        let d1 = tape.dropout(x, 0.5, true, 77).unwrap();
        let d2 = tape.dropout(x, 0.5, true, 77).unwrap();
        assert_eq!(tape.value(d1), tape.value(d2));
    }

    #[test]
    fn dropout_statistics() {
        let n = 1_000_000;
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[n]));
        let d = tape.dropout(x, 0.5, true, 2024).unwrap();
        let v = tape.value(d).data();
        let zeros = v.iter().filter(|&&x| x == 0.0).count() as f64 / n as f64;
        let mean = v.iter().sum::<f64>() / n as f64;
        assert!((zeros - 0.5).abs() < 0.002, "zero fraction {zeros}");
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn backward_edge_cases() {
        let mut tape = Tape::<f64>::new();
        let theta = tape.param(Tensor::full(&[2, 3], 0.3));
        let unused = tape.param(Tensor::full(&[5], 1.0));
        let l = tape.sum(theta);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(theta), &Tensor::ones(&[2, 3]));
        assert_eq!(g.wrt(unused), &Tensor::zeros(&[5]));
        assert!(matches!(tape.backward(theta), Err(AutodiffError::NonScalarLoss(_))));
    }

    #[test]
    fn fan_out_doubles_exactly() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[0.1, -7.0, 2.5]));
        let y = tape.add(x, x).unwrap();
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut tape = Tape::<f32>::new();
            let x = tape.param(random(&[8, 6], &mut rng).cast());
            let w = tape.param(random(&[6, 3], &mut rng).cast());
            let h = tape.matmul(x, w).unwrap();
            let h = tape.tanh(h);
            let h = tape.dropout(h, 0.5, true, 99).unwrap();
            let l = tape.mean(h);
            let g = tape.backward(l).unwrap();
            (tape.value(l).clone(), g.wrt(x).clone(), g.wrt(w).clone())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mean_gradient() {
        assert!(check_unary(&|tp, x| {
            let m = tp.mean(x);
            let t = tp.tanh(x);
            let s = tp.sum(t);
            let both = tp.add(m, s).unwrap();
            let c = tp.reshape(both, &[1]).unwrap();
            let rep = tp.concat(&[c; 4], 0).unwrap();
            tp.reshape(rep, &[2, 2]).unwrap()
        }, &[2, 2], 20, 6) < 1e-6);
    }
}
