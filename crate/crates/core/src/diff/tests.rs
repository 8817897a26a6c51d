use std::collections::BTreeMap;

use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::check_graph;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Tensor {
    Tensor::vector((0..n).map(|_| rng.random_range(-r..r)).collect())
}

fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Reduces a vector output to a scalar with fixed random weights so every
/// output component contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var, DiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = tape.value(y).len();
    let w = tape.constant(Tensor::new(
        tape.value(y).shape().to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?)?;
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

#[test]
fn affine_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![3.0, 4.0])).unwrap();
    let w = tape
        .constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap())
        .unwrap();
    let b = tape.constant(Tensor::vector(vec![0.0, 0.0])).unwrap();
    let y = tape.affine(x, w, Some(b)).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 4.0]);

    let w = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
    let y = tape.affine(x, w, None).unwrap();
    assert_eq!(tape.value(y).data(), &[11.0]);
}

#[test]
fn affine_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = rand_mat(&mut rng, 4, 3);
    let x = rand_vec(&mut rng, 3, 1.0);
    let b = rand_vec(&mut rng, 4, 1.0);
    let expected: Vec<f64> = (0..4)
        .map(|i| b.data()[i] + (0..3).map(|j| w.data()[i * 3 + j] * x.data()[j]).sum::<f64>())
        .collect();
    let mut tape = Tape::new();
    let (xv, wv, bv) = (
        tape.constant(x).unwrap(),
        tape.constant(w).unwrap(),
        tape.constant(b).unwrap(),
    );
    let y = tape.affine(xv, wv, Some(bv)).unwrap();
    for (a, e) in tape.value(y).data().iter().zip(&expected) {
        assert_abs_diff_eq!(*a, *e, epsilon = 1e-14);
    }
}

#[test]
fn affine_rejects_bad_shapes() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
    let w = tape.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap()).unwrap();
    assert!(matches!(tape.affine(x, w, None), Err(DiffError::ShapeMismatch { .. })));
    let w = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap()).unwrap();
    let b = tape.constant(Tensor::vector(vec![0.0; 3])).unwrap();
    assert!(matches!(
        tape.affine(x, w, Some(b)),
        Err(DiffError::ShapeMismatch { .. })
    ));
}

#[test]
fn elu_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![0.0, 1.0, -1.0])).unwrap();
    let y = tape.elu(x).unwrap();
    let d = tape.value(y).data();
    assert_eq!(d[0], 0.0);
    assert_eq!(d[1], 1.0);
    assert_abs_diff_eq!(d[2], (-1.0f64).exp() - 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(d[2], -0.632121, epsilon = 1e-6);
}

#[test]
fn sigmoid_examples() {
    assert_eq!(sigmoid(0.0), 0.5);
    let hi = sigmoid(38.0);
    assert!(hi < 1.0 && 1.0 - hi < 1.2e-16);
    assert!(sigmoid(-800.0) > 0.0);
    assert!(sigmoid(800.0) < 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let x: f64 = rng.random_range(-30.0..30.0);
        assert_abs_diff_eq!(sigmoid(x), 1.0 / (1.0 + (-x).exp()), epsilon = 1e-12);
    }
}

#[test]
#[allow(clippy::approx_constant)]
fn bce_examples() {
    assert_abs_diff_eq!(bce(0.5, 1.0), 2f64.ln(), epsilon = 1e-15);
    assert_abs_diff_eq!(bce(0.5, 0.5), 0.693147, epsilon = 1e-6);
    assert!(bce(0.0, 1.0).is_finite());
    assert!(bce(1.0, 0.0).is_finite());
    // For each target the minimum over a grid of p sits at p = c, with value H(c).
    for c in [0.1, 0.25, 0.5, 0.8] {
        let grid: Vec<f64> = (1..1000).map(|i| i as f64 / 1000.0).collect();
        let argmin = grid
            .iter()
            .copied()
            .min_by(|a, b| bce(*a, c).total_cmp(&bce(*b, c)))
            .unwrap();
        assert_abs_diff_eq!(argmin, c, epsilon = 1e-12);
        let h = -(c * c.ln() + (1.0 - c) * (1.0 - c).ln());
        assert_abs_diff_eq!(bce(c, c), h, epsilon = 1e-12);
    }
}

#[test]
fn l1_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
    let z = tape.constant(Tensor::vector(vec![0.0, 0.0])).unwrap();
    let d = tape.l1_distance(a, a).unwrap();
    assert_eq!(tape.value(d).item(), 0.0);
    let d = tape.l1_distance(a, z).unwrap();
    assert_eq!(tape.value(d).item(), 3.0);
    let three = tape.constant(Tensor::vector(vec![0.0; 3])).unwrap();
    assert!(matches!(
        tape.l1_distance(a, three),
        Err(DiffError::ShapeMismatch { .. })
    ));
}

#[test]
fn l1_subgradient_at_zero_is_zero() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true).unwrap();
    let b = tape.constant(Tensor::vector(vec![1.0, 0.0])).unwrap();
    let d = tape.l1_distance(a, b).unwrap();
    let g = tape.backward(d).unwrap();
    assert_eq!(g.get(a).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn concat_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::vector(vec![1.0])).unwrap();
    let b = tape.constant(Tensor::vector(vec![2.0, 3.0])).unwrap();
    let e = tape.constant(Tensor::vector(vec![])).unwrap();
    let c = tape.concat(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);
    let c = tape.concat(e, b).unwrap();
    assert_eq!(tape.value(c).data(), &[2.0, 3.0]);
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 5.0]), true).unwrap();
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

    // loss = bce(sigmoid(w·x), 1), w = 0, x = 1: dL/dw = -2 · 0.25 · 1 = -0.5
    let mut tape = Tape::new();
    let w = tape.param("w", &Tensor::matrix(1, 1, vec![0.0]).unwrap()).unwrap();
    let x = tape.constant(Tensor::vector(vec![1.0])).unwrap();
    let z = tape.affine(x, w, None).unwrap();
    let p = tape.sigmoid(z).unwrap();
    let l = tape.bce(p, 1.0).unwrap();
    let g = tape.backward(l).unwrap();
    assert_abs_diff_eq!(g.named()["w"].item(), -0.5, epsilon = 1e-15);
}

#[test]
fn second_backward_is_an_error() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(2.0), true).unwrap();
    let y = tape.exp(x).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.backward(y).unwrap_err(), DiffError::DoubleBackward);
}

#[test]
fn detached_losses_are_rejected() {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::scalar(1.0)).unwrap();
    let y = tape.exp(c).unwrap();
    assert_eq!(tape.backward(y).unwrap_err(), DiffError::DetachedLoss);

    let mut other = Tape::new();
    let x = other.leaf(Tensor::scalar(1.0), true).unwrap();
    let mut tape = Tape::new();
    assert_eq!(tape.backward(x).unwrap_err(), DiffError::DetachedLoss);
    assert_eq!(tape.exp(x).unwrap_err(), DiffError::ForeignVar);
}

#[test]
fn non_finite_forward_trips() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::scalar(1000.0)).unwrap();
    assert!(matches!(tape.exp(x), Err(DiffError::NonFinite { op: "exp" })));
    assert!(tape.leaf(Tensor::scalar(f64::NAN), false).is_err());
}

#[test]
fn unused_params_get_zero_gradients() {
    let mut tape = Tape::new();
    let a = tape.param("a", &Tensor::scalar(1.0)).unwrap();
    let _b = tape.param("b", &Tensor::vector(vec![1.0, 2.0])).unwrap();
    let y = tape.exp(a).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.named()["b"].data(), &[0.0, 0.0]);
}

const FD_TOL: f64 = 1e-4;

fn fd_points(mut f: impl FnMut(&mut ChaCha8Rng) -> f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfd);
    for _ in 0..20 {
        let err = f(&mut rng);
        assert!(err < FD_TOL, "relative error {err}");
    }
}

#[test]
fn fd_affine() {
    fd_points(|rng| {
        let ins = [rand_vec(rng, 5, 1.0), rand_mat(rng, 4, 5), rand_vec(rng, 4, 1.0)];
        check_graph(&ins, |t, v| {
            let y = t.affine(v[0], v[1], Some(v[2]))?;
            weighted_sum(t, y, 1)
        })
        .unwrap()
    });
    fd_points(|rng| {
        let ins = [rand_vec(rng, 3, 1.0), rand_mat(rng, 2, 3)];
        check_graph(&ins, |t, v| {
            let y = t.affine(v[0], v[1], None)?;
            weighted_sum(t, y, 2)
        })
        .unwrap()
    });
}

#[test]
fn fd_elementwise() {
    fd_points(|rng| {
        let ins = [rand_vec(rng, 6, 2.0)];
        let e = check_graph(&ins, |t, v| {
            let y = t.elu(v[0])?;
            weighted_sum(t, y, 3)
        })
        .unwrap();
        let s = check_graph(&ins, |t, v| {
            let y = t.sigmoid(v[0])?;
            weighted_sum(t, y, 4)
        })
        .unwrap();
        let x = check_graph(&ins, |t, v| {
            let y = t.exp(v[0])?;
            weighted_sum(t, y, 5)
        })
        .unwrap();
        let n = check_graph(&ins, |t, v| {
            let y = t.normalize(v[0])?;
            weighted_sum(t, y, 6)
        })
        .unwrap();
        let c = check_graph(&ins, |t, v| {
            let y = t.scale(v[0], -1.7)?;
            weighted_sum(t, y, 7)
        })
        .unwrap();
        e.max(s).max(x).max(n).max(c)
    });
}

#[test]
fn fd_bce_and_l1() {
    fd_points(|rng| {
        let p = Tensor::scalar(rng.random_range(0.05..0.95));
        let c: f64 = rng.random_range(0.0..1.0);
        let b = check_graph(&[p], |t, v| t.bce(v[0], c)).unwrap();
        let ins = [rand_vec(rng, 5, 1.0), rand_vec(rng, 5, 1.0)];
        let l = check_graph(&ins, |t, v| t.l1_distance(v[0], v[1])).unwrap();
        b.max(l)
    });
}

#[test]
fn fd_structural() {
    fd_points(|rng| {
        let ins = [rand_vec(rng, 3, 1.0), rand_vec(rng, 4, 1.0)];
        let c = check_graph(&ins, |t, v| {
            let y = t.concat(v[0], v[1])?;
            weighted_sum(t, y, 8)
        })
        .unwrap();
        let tl = check_graph(&ins[..1], |t, v| {
            let y = t.tile(v[0], 11)?;
            weighted_sum(t, y, 9)
        })
        .unwrap();
        let ins2 = [rand_vec(rng, 4, 1.0), rand_vec(rng, 4, 1.0), rand_vec(rng, 4, 1.0)];
        let a = check_graph(&ins2, |t, v| {
            let s = t.add(v[0], v[1])?;
            let m = t.mul(s, v[2])?;
            let n = t.add_n(&[m, v[0], v[2]])?;
            let r = t.mean_n(&[n, v[1]])?;
            weighted_sum(t, r, 10)
        })
        .unwrap();
        c.max(tl).max(a)
    });
}

#[test]
fn tile_gradients_route_to_sources() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]), true).unwrap();
    let y = tape.tile(x, 8).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0]);
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[3.0, 3.0, 2.0]);
}

#[test]
fn adam_first_step() {
    let mut params = ParamStore::new();
    params.insert("theta", Tensor::scalar(0.0));
    let mut opt = OptimizerState::new(AdamConfig::with_lr(0.1));
    let grads = BTreeMap::from([("theta".to_string(), Tensor::scalar(1.0))]);
    opt.step(&mut params, &grads).unwrap();
    assert_abs_diff_eq!(params.get("theta").unwrap().item(), -0.1, epsilon = 1e-8);
    assert_eq!(opt.step, 1);
}

#[test]
fn adam_zero_grad_keeps_params() {
    let mut params = ParamStore::new();
    params.insert("theta", Tensor::vector(vec![0.3, -0.2]));
    let mut opt = OptimizerState::new(AdamConfig::with_lr(0.1));
    let grads = BTreeMap::from([("theta".to_string(), Tensor::vector(vec![0.0, 0.0]))]);
    opt.step(&mut params, &grads).unwrap();
    assert_eq!(params.get("theta").unwrap().data(), &[0.3, -0.2]);
    assert_eq!(opt.step, 1);
}

#[test]
fn adam_skips_missing_and_rejects_bad_shapes() {
    let mut params = ParamStore::new();
    params.insert("a", Tensor::scalar(1.0));
    params.insert("b", Tensor::scalar(1.0));
    let mut opt = OptimizerState::new(AdamConfig::with_lr(0.1));
    let grads = BTreeMap::from([("a".to_string(), Tensor::scalar(1.0))]);
    opt.step(&mut params, &grads).unwrap();
    assert_eq!(params.get("b").unwrap().item(), 1.0);
    assert!(!opt.first_moment.contains_key("b"));
    let bad = BTreeMap::from([("a".to_string(), Tensor::vector(vec![1.0, 2.0]))]);
    assert!(matches!(
        opt.step(&mut params, &bad),
        Err(DiffError::ShapeMismatch { .. })
    ));
}

#[test]
fn adam_minimizes_a_quadratic() {
    // Reference value from a standalone run of the textbook update rule.
    const THETA_AFTER_100: f64 = 0.002936675681102579;
    let mut params = ParamStore::new();
    params.insert("theta", Tensor::scalar(1.0));
    let mut opt = OptimizerState::new(AdamConfig::with_lr(0.1));
    for _ in 0..100 {
        let mut tape = Tape::new();
        let th = tape.param("theta", params.get("theta").unwrap()).unwrap();
        let sq = tape.mul(th, th).unwrap();
        let g = tape.backward(sq).unwrap();
        opt.step(&mut params, g.named()).unwrap();
    }
    let theta = params.get("theta").unwrap().item();
    assert!(theta.abs() < 0.05);
    assert_abs_diff_eq!(theta, THETA_AFTER_100, epsilon = 1e-12);
}

#[test]
fn identical_runs_are_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut params = ParamStore::new();
        params.init_glorot("w", 3, 4, &mut rng);
        params.init_zeros("b", &[3]);
        let mut opt = OptimizerState::new(AdamConfig::with_lr(0.01));
        for i in 0..25 {
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape, true).unwrap();
            let x = tape
                .constant(Tensor::vector(vec![i as f64 * 0.1, 1.0, -0.5, 0.2]))
                .unwrap();
            let y = tape.affine(x, vars["w"], Some(vars["b"])).unwrap();
            let y = tape.elu(y).unwrap();
            let l = tape.sum(y).unwrap();
            let g = tape.backward(l).unwrap();
            opt.step(&mut params, g.named()).unwrap();
        }
        params
    };
    let (a, b) = (run(), run());
    assert!(a.bit_identical(&b));
    assert_eq!(a.checksum(), b.checksum());
}

#[test]
fn glorot_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ParamStore::new();
    params.init_glorot("w", 10, 14, &mut rng);
    let bound = (6.0f64 / 24.0).sqrt();
    assert!(params.get("w").unwrap().data().iter().all(|v| v.abs() <= bound));
    assert_eq!(params.get("w").unwrap().shape(), &[10, 14]);
}
