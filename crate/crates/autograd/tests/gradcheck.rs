//! Central finite-difference checks for every differentiable op.

use mwgan_autograd::{Adam, Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Compare analytic gradients of `f` against central differences for every
/// element of every input.
fn check<F>(inputs: &[Tensor], f: F, tol: f64)
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&g, &vars);
    let grads = g.backward(out);

    let eval = |ins: &[Tensor]| -> f64 {
        let g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        f(&g, &vars).item()
    };
    let eps = 1e-6;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += eps;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / (1.0 + numeric.abs());
            assert!(err < tol, "input {k} elem {i}: analytic {a} numeric {numeric}");
        }
    }
}

/// Weighted sum so every output element carries a distinct sensitivity.
fn probe<'g>(g: &'g Graph, x: Var<'g>) -> Var<'g> {
    let shape = x.shape();
    let w = Tensor::from_fn(&shape, |i| ((i as f64) * 0.731).sin());
    x.mul(g.constant(w)).sum()
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[3, 4], &mut rng);
    check(&[a.clone(), b.clone()], |g, v| probe(g, v[0].add(v[1]).mul(v[0]).sub(v[1].scale(0.3))), 1e-6);
    check(&[a.clone()], |g, v| probe(g, v[0].tanh().add_scalar(0.5).square()), 1e-6);
    check(&[a.clone()], |g, v| probe(g, v[0].leaky_relu(0.2)), 1e-6);
    check(&[a.clone()], |g, v| probe(g, v[0].relu().neg()), 1e-6);
    check(&[a], |_, v| v[0].abs().mean(), 1e-6);
}

#[test]
fn linear_and_shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[2, 5], &mut rng);
    let w = random(&[3, 5], &mut rng);
    let b = random(&[3], &mut rng);
    let y = random(&[2, 4], &mut rng);
    check(&[x.clone(), w, b], |g, v| probe(g, v[0].linear(v[1], Some(v[2]))), 1e-6);
    check(&[x.clone(), y], |g, v| {
        let c = g.concat(&[v[0], v[1]]);
        probe(g, c.narrow(2, 5).reshape(&[5, 2]))
    }, 1e-6);
    check(&[x], |_, v| v[0].log_softmax().select(3), 1e-6);
}

#[test]
fn conv_pool_and_norm_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[2, 3, 6, 5], &mut rng);
    let w = random(&[4, 3, 3, 3], &mut rng);
    let b = random(&[4], &mut rng);
    check(&[x.clone(), w.clone(), b.clone()], |g, v| probe(g, v[0].conv2d(v[1], Some(v[2]), 2, 1)), 1e-6);
    check(&[x.clone(), w], |g, v| probe(g, v[0].conv2d(v[1], None, 1, 0)), 1e-6);
    check(&[x.clone()], |g, v| probe(g, v[0].max_pool2d(3, 2, 1)), 1e-6);
    check(&[x.clone()], |g, v| probe(g, v[0].upsample2x()), 1e-6);
    check(&[x.clone()], |g, v| probe(g, v[0].instance_norm()), 1e-5);
    check(&[x.clone()], |g, v| probe(g, v[0].global_avg_pool()), 1e-6);
    let s = random(&[2, 3], &mut rng);
    let t = random(&[2, 3], &mut rng);
    check(&[x, s, t], |g, v| probe(g, v[0].channel_affine(v[1], v[2])), 1e-6);
}

#[test]
fn conv_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[1, 2, 5, 5], &mut rng);
    let w = random(&[3, 2, 4, 4], &mut rng);
    let g = Graph::new();
    let out = g.constant(x.clone()).conv2d(g.constant(w.clone()), None, 2, 1).value();
    assert_eq!(out.shape(), &[1, 3, 2, 2]);
    for o in 0..3 {
        for oy in 0..2 {
            for ox in 0..2 {
                let mut acc = 0.0;
                for c in 0..2 {
                    for ky in 0..4 {
                        for kx in 0..4 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                acc += x.data()[(c * 5 + iy as usize) * 5 + ix as usize]
                                    * w.data()[((o * 2 + c) * 4 + ky) * 4 + kx];
                            }
                        }
                    }
                }
                let got = out.data()[(o * 2 + oy) * 2 + ox];
                assert!((got - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn log_softmax_rows_normalise() {
    let g = Graph::new();
    let x = g.constant(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, -50.0, 0.0, 50.0]));
    let lp = x.log_softmax().value();
    for r in 0..2 {
        let s: f64 = lp.data()[r * 3..(r + 1) * 3].iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn adam_moves_against_gradient_and_ignores_missing_grads() {
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::new(&[2], vec![1.0, -1.0]));
    let b = store.add("b", Tensor::new(&[1], vec![5.0]));
    let mut adam = Adam::new(&store, 0.5, 0.999);
    let grads = vec![Some(Tensor::new(&[2], vec![2.0, -3.0])), None];
    adam.step(&mut store, &grads, 0.1);
    // First Adam step moves each coordinate by lr * sign(g).
    assert!((store.get(a).data()[0] - 0.9).abs() < 1e-9);
    assert!((store.get(a).data()[1] + 0.9).abs() < 1e-9);
    assert_eq!(store.get(b).data(), &[5.0]);
}
