//! Dense reverse-mode differentiation.
//!
//! A [`Tape`] borrows a [`ParamStore`] and records each primitive applied to
//! its nodes. `Tape::backward` returns exact partials for every parameter and
//! every differentiable input reached from the loss.

mod params;
mod tape;
mod tensor;

pub use params::{ParamGrads, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, rel_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Checks d/dx sum(c ⊙ f(x)) against central differences.
    fn check_unary(shape: &[usize], f: impl Fn(&mut Tape, Var) -> Var) {
        let store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&mut rng, shape);
        let eval = |x: &Tensor, weights: &Tensor| -> (f64, Option<Vec<f64>>) {
            let mut tape = Tape::new(&store);
            let xv = tape.input(x.clone());
            let y = f(&mut tape, xv);
            let c = tape.constant(weights.clone());
            let y_shape = tape.shape(y).to_vec();
            let c = tape.reshape(c, &y_shape).unwrap();
            let prod = tape.mul(y, c).unwrap();
            let loss = tape.sum(prod);
            let g = tape.backward(loss).unwrap();
            (tape.item(loss), g.wrt(xv).map(<[f64]>::to_vec))
        };
        let probe = {
            let mut tape = Tape::new(&store);
            let xv = tape.input(x.clone());
            let y = f(&mut tape, xv);
            tape.value(y).len()
        };
        let weights = random(&mut rng, &[probe]);
        let (_, analytic) = eval(&x, &weights);
        let analytic = analytic.unwrap();
        let numeric = central_difference(x.data(), 1e-6, |data| {
            let t = Tensor::new(x.shape(), data.to_vec()).unwrap();
            eval(&t, &weights).0
        });
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(rel_error(*a, *n) < 1e-7, "analytic {a} numeric {n}");
        }
    }

    #[test]
    fn sigmoid_at_zero() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        assert_eq!(tape.item(y), 0.5);
    }

    #[test]
    fn log_softmax_symmetric() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::row(vec![3.7, 3.7]));
        let y = tape.log_softmax(x);
        for v in tape.value(y).data() {
            assert!((v + 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_gradients() {
        let store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, &[4, 5]);
        let b = random(&mut rng, &[5, 3]);
        let loss_of = |a: &Tensor, b: &Tensor| {
            let mut tape = Tape::new(&store);
            let av = tape.input(a.clone());
            let bv = tape.input(b.clone());
            let c = tape.matmul(av, bv).unwrap();
            let t = tape.tanh(c);
            let l = tape.sum(t);
            let g = tape.backward(l).unwrap();
            (tape.item(l), g.wrt(av).unwrap().to_vec(), g.wrt(bv).unwrap().to_vec())
        };
        let (_, ga, gb) = loss_of(&a, &b);
        let na = central_difference(a.data(), 1e-6, |d| {
            loss_of(&Tensor::new(&[4, 5], d.to_vec()).unwrap(), &b).0
        });
        let nb = central_difference(b.data(), 1e-6, |d| {
            loss_of(&a, &Tensor::new(&[5, 3], d.to_vec()).unwrap()).0
        });
        for (x, y) in ga.iter().zip(&na).chain(gb.iter().zip(&nb)) {
            assert!(rel_error(*x, *y) < 1e-7, "{x} vs {y}");
        }
    }

    #[test]
    fn elementwise_primitives() {
        check_unary(&[2, 3], |t, x| t.sigmoid(x));
        check_unary(&[2, 3], |t, x| t.tanh(x));
        check_unary(&[2, 4], |t, x| t.softmax(x));
        check_unary(&[3, 4], |t, x| t.log_softmax(x));
        check_unary(&[2, 3], |t, x| t.affine(x, -2.5, 1.0));
        check_unary(&[2, 3], |t, x| t.mul(x, x).unwrap());
        check_unary(&[2, 3], |t, x| {
            let y = t.tanh(x);
            t.sub(x, y).unwrap()
        });
        check_unary(&[2, 3], |t, x| {
            let y = t.sigmoid(x);
            t.add(x, y).unwrap()
        });
    }

    #[test]
    fn structural_primitives() {
        check_unary(&[3, 4], |t, x| t.slice_rows(x, 1, 2).unwrap());
        check_unary(&[3, 4], |t, x| t.slice_cols(x, 1, 2).unwrap());
        check_unary(&[3, 4], |t, x| {
            let a = t.tanh(x);
            t.concat_cols(&[x, a]).unwrap()
        });
        check_unary(&[3, 4], |t, x| {
            let a = t.sigmoid(x);
            t.concat_rows(&[a, x]).unwrap()
        });
        check_unary(&[5, 3], |t, x| t.embedding(x, 2).unwrap());
        check_unary(&[3, 4], |t, x| t.gather(x, 5).unwrap());
        check_unary(&[3, 4], |t, x| t.reshape(x, &[4, 3]).unwrap());
        check_unary(&[3, 4], |t, x| t.sum(x));
        check_unary(&[3, 4], |t, x| {
            let r = t.slice_rows(x, 0, 1).unwrap();
            let r = t.sigmoid(r);
            t.add_row(x, r).unwrap()
        });
    }

    #[test]
    fn sum_and_square() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(Tensor::row(vec![1.0, -2.0, 0.5]));
        let s = tape.sum(x);
        assert_eq!(tape.backward(s).unwrap().wrt(x).unwrap(), &[1.0, 1.0, 1.0]);
        let sq = tape.mul(x, x).unwrap();
        let l = tape.sum(sq);
        assert_eq!(tape.backward(l).unwrap().wrt(x).unwrap(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn params_and_repeatability() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = store.add_uniform("w", &[3, 2], 0.5, &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::row(vec![0.1, 0.2, 0.3]));
        let wv = tape.param(w);
        assert_eq!(tape.param(w), wv);
        let y = tape.matmul(x, wv).unwrap();
        let y = tape.tanh(y);
        let l = tape.sum(y);
        let g1 = tape.backward(l).unwrap().to_param_grads(&store);
        let g2 = tape.backward(l).unwrap().to_param_grads(&store);
        assert_eq!(g1, g2);
        for (a, b) in g1.get(w).data().iter().zip(g2.get(w).data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn errors_name_the_primitive() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let r = tape_row(&mut tape);
        assert!(tape.add(a, r).is_err());
        assert!(matches!(
            tape.backward(a),
            Err(crate::error::Error::NonScalarLoss(_))
        ));
    }

    fn tape_row(tape: &mut Tape) -> Var {
        tape.constant(Tensor::zeros(&[1, 3]))
    }

    #[test]
    fn constants_receive_no_gradient() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let c = tape.constant(Tensor::row(vec![1.0, 2.0]));
        let x = tape.input(Tensor::row(vec![3.0, 4.0]));
        let p = tape.mul(c, x).unwrap();
        let l = tape.sum(p);
        let g = tape.backward(l).unwrap();
        assert!(g.wrt(c).is_none());
        assert_eq!(g.wrt(x).unwrap(), &[1.0, 2.0]);
    }
}
