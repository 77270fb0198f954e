//! Finite-difference oracle checks for the differentiation graph.
//!
//! Every differentiable op is checked against central differences on random
//! inputs; second-order results are checked against finite differences of the
//! first-order gradient.

use divlab::{Graph, Tensor, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FD_H: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / denom
}

/// Check d(f)/d(inputs) against central finite differences.
/// `f` must build a scalar from leaf vars created from `inputs`.
fn grad_check(
    inputs: &[Tensor],
    f: impl Fn(&Graph, &[Var]) -> Var,
    tol: f64,
) {
    let graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.leaf(t.clone(), true)).collect();
    let root = f(&graph, &vars);
    let grads = graph.backward(&root, None, false).unwrap();

    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .tensor(&vars[k])
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        for i in 0..input.len() {
            let mut plus = input.clone();
            plus.data_mut()[i] += FD_H;
            let mut minus = input.clone();
            minus.data_mut()[i] -= FD_H;

            let eval = |perturbed: &Tensor| -> f64 {
                let g = Graph::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| g.leaf(if j == k { perturbed.clone() } else { t.clone() }, false))
                    .collect();
                f(&g, &vars).item().unwrap()
            };
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_H);
            let a = analytic.data()[i];
            assert!(
                rel_err(a, numeric) < tol,
                "input {k} element {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

#[test]
fn matmul_hand_example() {
    let g = Graph::new();
    let a = g.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), false);
    let b = g.leaf(Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap(), false);
    let c = a.matmul(&b).unwrap();
    assert_eq!(c.value().data(), &[3.0, 7.0]);
}

#[test]
fn softmax_symmetry_and_rowsum() {
    let g = Graph::new();
    let z = g.leaf(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap(), false);
    let s = z.softmax().unwrap();
    assert_eq!(s.value().data(), &[0.5, 0.5]);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z = g.leaf(rand_tensor(&mut rng, &[4, 7], -5.0, 5.0), false);
    let s = z.softmax().unwrap().value();
    for row in 0..4 {
        let sum: f64 = s.data()[row * 7..(row + 1) * 7].iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(s.data()[row * 7..(row + 1) * 7].iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn conv2d_all_ones_window_sum() {
    let g = Graph::new();
    let x = g.leaf(Tensor::ones(&[1, 1, 3, 3]), false);
    let w = g.leaf(Tensor::ones(&[1, 1, 2, 2]), false);
    let y = x.conv2d(&w, 1, 0).unwrap().value();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert!(y.data().iter().all(|&v| v == 4.0));
}

#[test]
fn backward_square_and_softmax_conservation() {
    let g = Graph::new();
    let x = g.leaf(Tensor::scalar(3.0), true);
    let y = x.mul(&x).unwrap();
    let grads = g.backward(&y, None, false).unwrap();
    assert_eq!(grads.tensor(&x).unwrap().data(), &[6.0]);

    // sum of softmax is constant 1, so gradient vanishes
    let g = Graph::new();
    let z = g.leaf(Tensor::new(vec![1, 3], vec![0.3, -1.2, 2.0]).unwrap(), true);
    let root = z.softmax().unwrap().sum().unwrap();
    let grads = g.backward(&root, None, false).unwrap();
    for &v in grads.tensor(&z).unwrap().data() {
        assert!(v.abs() < 1e-12);
    }
}

#[test]
fn elementwise_ops_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let a = rand_tensor(&mut rng, &[2, 3], -2.0, 2.0);
    let b = rand_tensor(&mut rng, &[2, 3], 0.5, 2.0);
    grad_check(&[a.clone(), b.clone()], |_, v| {
        let t = v[0].mul(&v[1]).unwrap();
        let u = v[0].sub(&v[1]).unwrap();
        t.add(&u).unwrap().div(&v[1]).unwrap().sum().unwrap()
    }, 1e-4);
    grad_check(&[b.clone()], |_, v| {
        v[0].log().unwrap().add(&v[0].exp().unwrap()).unwrap().sum().unwrap()
    }, 1e-4);
    grad_check(&[a.clone()], |_, v| v[0].powf(2.0).unwrap().sum().unwrap(), 1e-4);
    grad_check(&[a.clone()], |_, v| v[0].relu().unwrap().sum().unwrap(), 1e-4);
    grad_check(&[a], |_, v| v[0].abs().unwrap().mul(&v[0]).unwrap().sum().unwrap(), 1e-4);
}

#[test]
fn broadcast_ops_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let bias = rand_tensor(&mut rng, &[4], -1.0, 1.0);
    grad_check(&[a, bias], |_, v| {
        v[0].add(&v[1]).unwrap().powf(2.0).unwrap().sum().unwrap()
    }, 1e-4);
}

#[test]
fn reduction_and_shape_ops_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = rand_tensor(&mut rng, &[3, 4], -2.0, 2.0);
    grad_check(&[a.clone()], |_, v| {
        v[0].sum_axis(1).unwrap().powf(2.0).unwrap().mean().unwrap()
    }, 1e-4);
    grad_check(&[a.clone()], |_, v| {
        v[0].max_axis(1).unwrap().sum().unwrap()
    }, 1e-4);
    grad_check(&[a.clone()], |_, v| {
        v[0].reshape(&[2, 6]).unwrap().slice(1, 1, 4).unwrap().powf(2.0).unwrap().sum().unwrap()
    }, 1e-4);
    grad_check(&[a.clone()], |_, v| {
        let s1 = v[0].slice(0, 0, 1).unwrap();
        let s2 = v[0].slice(0, 1, 3).unwrap();
        Var::concat(&[s2, s1], 0).unwrap().powf(3.0).unwrap().sum().unwrap()
    }, 1e-4);
    grad_check(&[a], |g, v| {
        let c = g.constant(Tensor::ones(&[3, 2]));
        v[0].transpose2d().unwrap().matmul(&c).unwrap().powf(2.0).unwrap().sum().unwrap()
    }, 1e-4);
}

#[test]
fn softmax_and_logsoftmax_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let z = rand_tensor(&mut rng, &[3, 5], -3.0, 3.0);
    let w = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);
    grad_check(&[z.clone(), w.clone()], |_, v| {
        v[0].softmax().unwrap().mul(&v[1]).unwrap().sum().unwrap()
    }, 1e-4);
    grad_check(&[z, w], |_, v| {
        v[0].log_softmax().unwrap().mul(&v[1]).unwrap().sum().unwrap()
    }, 1e-4);
}

#[test]
fn conv2d_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for &(stride, pad) in &[(1usize, 0usize), (1, 1), (2, 1)] {
        let x = rand_tensor(&mut rng, &[2, 2, 5, 5], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
        grad_check(&[x, w], move |_, v| {
            v[0].conv2d(&v[1], stride, pad).unwrap().powf(2.0).unwrap().sum().unwrap()
        }, 1e-4);
    }
}

#[test]
fn variance_axis0_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let a = rand_tensor(&mut rng, &[3, 4], -2.0, 2.0);
    grad_check(&[a], |_, v| v[0].variance_axis0().unwrap().sum().unwrap(), 1e-4);
}

#[test]
fn two_layer_mlp_grad_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let x = rand_tensor(&mut rng, &[4, 6], -1.0, 1.0);
    let w1 = rand_tensor(&mut rng, &[6, 5], -0.7, 0.7);
    let b1 = rand_tensor(&mut rng, &[5], -0.1, 0.1);
    let w2 = rand_tensor(&mut rng, &[5, 3], -0.7, 0.7);
    let b2 = rand_tensor(&mut rng, &[3], -0.1, 0.1);
    let labels = [0usize, 2, 1, 2];
    let mut onehot = Tensor::zeros(&[4, 3]);
    for (i, &l) in labels.iter().enumerate() {
        onehot.data_mut()[i * 3 + l] = 1.0;
    }
    grad_check(&[w1, b1, w2, b2], move |g, v| {
        let xc = g.constant(x.clone());
        let h = xc.matmul(&v[0]).unwrap().add(&v[1]).unwrap().relu().unwrap();
        let logits = h.matmul(&v[2]).unwrap().add(&v[3]).unwrap();
        let oh = g.constant(onehot.clone());
        logits
            .log_softmax()
            .unwrap()
            .mul(&oh)
            .unwrap()
            .sum()
            .unwrap()
            .scale(-1.0 / 4.0)
            .unwrap()
    }, 1e-4);
}

// ---- second order ----

#[test]
fn grad_of_grad_cubic() {
    // f(x) = x^3 at x=3: f' = 27, f'' = 18
    let g = Graph::new();
    let x = g.leaf(Tensor::scalar(3.0), true);
    let y = x.powf(3.0).unwrap();
    let grads = g.backward(&y, None, true).unwrap();
    let dy = grads.get(&x).unwrap();
    assert!((dy.item().unwrap() - 27.0).abs() < 1e-12);
    let grads2 = g.backward(&dy, None, false).unwrap();
    assert!((grads2.tensor(&x).unwrap().data()[0] - 18.0).abs() < 1e-12);
}

#[test]
fn grad_of_grad_mixed_partial() {
    // f(x,y) = x*y: d/dy (df/dx) = 1
    let g = Graph::new();
    let x = g.leaf(Tensor::scalar(1.5), true);
    let y = g.leaf(Tensor::scalar(-2.0), true);
    let f = x.mul(&y).unwrap();
    let grads = g.backward(&f, None, true).unwrap();
    let dfdx = grads.get(&x).unwrap();
    let grads2 = g.backward(&dfdx, None, false).unwrap();
    assert!((grads2.tensor(&y).unwrap().data()[0] - 1.0).abs() < 1e-12);
}

#[test]
fn nesting_deeper_than_one_is_rejected() {
    let g = Graph::new();
    let x = g.leaf(Tensor::scalar(2.0), true);
    let y = x.powf(4.0).unwrap();
    let grads = g.backward(&y, None, true).unwrap();
    let dy = grads.get(&x).unwrap();
    assert!(g.backward(&dy, None, true).is_err());
}

/// Second-order oracle: gradient of sum-of-squared-input-gradients w.r.t.
/// weights, checked against finite differences of that quantity.
#[test]
fn mlp_second_order_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let x = rand_tensor(&mut rng, &[2, 4], -1.0, 1.0);
    let w1 = rand_tensor(&mut rng, &[4, 5], -0.8, 0.8);
    let w2 = rand_tensor(&mut rng, &[5, 3], -0.8, 0.8);

    // q(w) = sum_i (d loss / d x_i)^2, loss smooth (no relu kinks):
    // use tanh-free smooth net via exp-based softplus? powf(2) keeps it smooth.
    let q = |w1t: &Tensor, w2t: &Tensor, create: bool| -> (f64, Option<(Tensor, Tensor)>) {
        let g = Graph::new();
        let xv = g.leaf(x.clone(), true);
        let w1v = g.leaf(w1t.clone(), true);
        let w2v = g.leaf(w2t.clone(), true);
        let h = xv.matmul(&w1v).unwrap().powf(2.0).unwrap();
        let loss = h.matmul(&w2v).unwrap().log_softmax().unwrap().slice(1, 0, 1).unwrap().sum().unwrap();
        let grads = g.backward(&loss, None, true).unwrap();
        let gx = grads.get(&xv).unwrap();
        let qv = gx.mul(&gx).unwrap().sum().unwrap();
        let out = qv.item().unwrap();
        if create {
            let grads2 = g.backward(&qv, None, false).unwrap();
            let gw1 = grads2.tensor(&w1v).unwrap();
            let gw2 = grads2.tensor(&w2v).unwrap();
            (out, Some((gw1, gw2)))
        } else {
            (out, None)
        }
    };

    let (_, analytic) = q(&w1, &w2, true);
    let (gw1, gw2) = analytic.unwrap();

    let h = 1e-5;
    for (which, (base, analytic)) in [(0usize, (&w1, &gw1)), (1, (&w2, &gw2))] {
        for i in 0..base.len() {
            let mut plus = (*base).clone();
            plus.data_mut()[i] += h;
            let mut minus = (*base).clone();
            minus.data_mut()[i] -= h;
            let (qp, _) = if which == 0 { q(&plus, &w2, false) } else { q(&w1, &plus, false) };
            let (qm, _) = if which == 0 { q(&minus, &w2, false) } else { q(&w1, &minus, false) };
            let numeric = (qp - qm) / (2.0 * h);
            let a = analytic.data()[i];
            assert!(
                rel_err(a, numeric) < 1e-3,
                "weight set {which} element {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

#[test]
fn backward_linearity() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = rand_tensor(&mut rng, &[2, 3], -2.0, 2.0);
    let grad_of = |a: f64, b: f64| -> Tensor {
        let g = Graph::new();
        let xv = g.leaf(x.clone(), true);
        let f = xv.powf(2.0).unwrap().sum().unwrap().scale(a).unwrap();
        let h = xv.exp().unwrap().sum().unwrap().scale(b).unwrap();
        let root = f.add(&h).unwrap();
        let grads = g.backward(&root, None, false).unwrap();
        grads.tensor(&xv).unwrap()
    };
    let g10 = grad_of(1.0, 0.0);
    let g01 = grad_of(0.0, 1.0);
    let gab = grad_of(2.5, -1.5);
    for i in 0..x.len() {
        let expect = 2.5 * g10.data()[i] - 1.5 * g01.data()[i];
        assert!((gab.data()[i] - expect).abs() < 1e-12);
    }
}

#[test]
fn determinism_bit_identical() {
    let run = || -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, &[3, 3], -1.0, 1.0);
        let g = Graph::new();
        let xv = g.leaf(x, true);
        let y = xv.exp().unwrap().softmax().unwrap().sum().unwrap();
        let grads = g.backward(&y, None, false).unwrap();
        grads.tensor(&xv).unwrap().data().to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn shape_mismatch_reports_both_shapes() {
    let g = Graph::new();
    let a = g.leaf(Tensor::zeros(&[2, 3]), false);
    let b = g.leaf(Tensor::zeros(&[4, 5]), false);
    let err = a.matmul(&b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]") && err.contains("[4, 5]"), "{err}");
}

#[test]
fn log_of_nonpositive_rejected() {
    let g = Graph::new();
    let a = g.leaf(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap(), false);
    assert!(a.log().is_err());
    let b = g.leaf(Tensor::new(vec![2], vec![1.0, -1.0]).unwrap(), false);
    assert!(b.div(&g.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap())).is_err());
}
