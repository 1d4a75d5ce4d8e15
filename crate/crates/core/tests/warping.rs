use mwgan::landmarks::{LandmarkSet, Point, NUM_LANDMARKS};
use mwgan::warping::{self, solve_tps, FlowField};
use mwgan::ImageTensor;
use mwgan_autograd::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn face_like(rng: &mut ChaCha8Rng) -> LandmarkSet {
    LandmarkSet::new(std::array::from_fn(|_| [rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)]))
}

fn jitter(l: &LandmarkSet, amount: f64, rng: &mut ChaCha8Rng) -> LandmarkSet {
    l.map(|p| [p[0] + rng.random_range(-amount..amount), p[1] + rng.random_range(-amount..amount)])
}

fn smooth_image(size: usize) -> ImageTensor {
    ImageTensor::from_fn(size, size, |c, y, x| {
        let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
        (0.8 * (3.0 * u + 1.7 * v + c as f64).sin() * (2.1 * v - 0.5 * u).cos()).clamp(-1.0, 1.0)
    })
}

/// Dense Gauss-Jordan solve of the interpolation system, written from the
/// textbook formulation `U(r) = r^2 log r`.
fn oracle_tps(src: &[Point], dst: &[Point]) -> impl Fn(Point) -> Point {
    let n = src.len();
    let m = n + 3;
    let u = |a: Point, b: Point| {
        let r = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        if r == 0.0 { 0.0 } else { r * r * r.ln() }
    };
    let mut a = vec![vec![0.0; m + 2]; m];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = u(src[i], src[j]);
        }
        a[i][n] = 1.0;
        a[i][n + 1] = src[i][0];
        a[i][n + 2] = src[i][1];
        a[n][i] = 1.0;
        a[n + 1][i] = src[i][0];
        a[n + 2][i] = src[i][1];
        a[i][m] = dst[i][0];
        a[i][m + 1] = dst[i][1];
    }
    for col in 0..m {
        let piv = (col..m).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, piv);
        let p = a[col][col];
        for k in 0..m + 2 {
            a[col][k] /= p;
        }
        for r in 0..m {
            if r != col {
                let f = a[r][col];
                for k in 0..m + 2 {
                    a[r][k] -= f * a[col][k];
                }
            }
        }
    }
    let coef: Vec<[f64; 2]> = a.iter().map(|row| [row[m], row[m + 1]]).collect();
    let src = src.to_vec();
    move |p: Point| {
        let mut out = [0.0; 2];
        for k in 0..2 {
            out[k] = coef[n][k] + coef[n + 1][k] * p[0] + coef[n + 2][k] * p[1];
            for i in 0..n {
                out[k] += coef[i][k] * u(p, src[i]);
            }
        }
        out
    }
}

#[test]
fn tps_interpolates_and_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let src = face_like(&mut rng);
        let dst = jitter(&src, 0.08, &mut rng);
        let tps = solve_tps(&src, &dst, 0.0).unwrap();
        for i in 0..NUM_LANDMARKS {
            let f = tps.eval(src.points[i]);
            assert!((f[0] - dst.points[i][0]).abs() < 1e-8 && (f[1] - dst.points[i][1]).abs() < 1e-8);
        }
        let oracle = oracle_tps(&src.points, &dst.points);
        for _ in 0..100 {
            let p = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let (a, b) = (tps.eval(p), oracle(p));
            assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn identity_warp_returns_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = ImageTensor::from_fn(24, 24, |_, _, _| rng.random_range(-1.0..1.0));
    let l = face_like(&mut rng);
    for reg in [0.0, 1e-4] {
        let out = warping::warp_image(&img, &l, &l, reg).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-6);
    }
}

#[test]
fn one_pixel_shift_translates_the_image() {
    let size = 32;
    let img = ImageTensor::from_fn(size, size, |c, y, x| (x as f64 * 0.05 + y as f64 * 0.02 - 0.8 + 0.1 * c as f64).clamp(-1.0, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let src = face_like(&mut rng);
    let dst = src.map(|p| [p[0] + 1.0 / size as f64, p[1]]);
    let out = warping::warp_image(&img, &src, &dst, 0.0).unwrap();
    for c in 0..3 {
        for y in 0..size {
            for x in 1..size {
                assert!((out.get(c, y, x) - img.get(c, y, x - 1)).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn constant_images_are_fixed_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = ImageTensor::filled(20, 20, [0.3, -0.2, 0.9]);
    for _ in 0..5 {
        let src = face_like(&mut rng);
        let dst = jitter(&src, 0.1, &mut rng);
        let out = warping::warp_image(&img, &src, &dst, 1e-4).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-12);
    }
}

#[test]
fn forward_then_reverse_warp_approximately_restores() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let img = smooth_image(48);
    for _ in 0..4 {
        let src = face_like(&mut rng);
        let dst = jitter(&src, 0.03, &mut rng);
        let there = warping::warp_image(&img, &src, &dst, 0.0).unwrap();
        let back = warping::warp_image(&there, &dst, &src, 0.0).unwrap();
        let mae = back.mean_abs_diff(&img);
        assert!(mae < 0.02, "round-trip MAE {mae}");
    }
}

#[test]
fn graph_op_matches_plain_warp() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let imgs = [smooth_image(16), ImageTensor::filled(16, 16, [0.1, 0.2, 0.3])];
    let srcs = [face_like(&mut rng), face_like(&mut rng)];
    let dsts = [jitter(&srcs[0], 0.05, &mut rng), jitter(&srcs[1], 0.05, &mut rng)];
    let g = Graph::new();
    let out = warping::warp(
        g.constant(ImageTensor::batch(&[&imgs[0], &imgs[1]])),
        g.constant(LandmarkSet::batch(&[&srcs[0], &srcs[1]])),
        g.constant(LandmarkSet::batch(&[&dsts[0], &dsts[1]])),
        1e-4,
    )
    .unwrap();
    for n in 0..2 {
        let expect = warping::warp_image(&imgs[n], &srcs[n], &dsts[n], 1e-4).unwrap();
        let got = ImageTensor::from_tensor(&out.value(), n).unwrap();
        assert_eq!(got, expect);
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

/// Analytic gradients of `sum(w * warp(img, src, dst))` against central
/// differences for every landmark coordinate and a sample of pixels.
#[test]
fn warp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let size = 16;
    let img = smooth_image(size).to_tensor();
    let src0 = face_like(&mut rng);
    let src = LandmarkSet::batch(&[&src0]);
    let dst = LandmarkSet::batch(&[&jitter(&src0, 0.05, &mut rng)]);
    let weights = Tensor::from_fn(img.shape(), |_| rng.random_range(-1.0..1.0));
    for reg in [0.0, 1e-4] {
        let loss = |i: &Tensor, s: &Tensor, d: &Tensor| -> f64 {
            let g = Graph::new();
            let out = warping::warp(g.constant(i.clone()), g.constant(s.clone()), g.constant(d.clone()), reg).unwrap();
            out.mul(g.constant(weights.clone())).sum().item()
        };
        let g = Graph::new();
        let (vi, vs, vd) = (g.variable(img.clone()), g.variable(src.clone()), g.variable(dst.clone()));
        let out = warping::warp(vi, vs, vd, reg).unwrap();
        let grads = g.backward(out.mul(g.constant(weights.clone())).sum());
        let eps = 1e-6;
        let inputs = [img.clone(), src.clone(), dst.clone()];
        let vars = [vi, vs, vd];
        for k in 0..3 {
            let analytic = grads.get(vars[k]).unwrap();
            assert!(analytic.all_finite());
            let idx: Vec<usize> = if k == 0 { (0..img.len()).step_by(37).collect() } else { (0..inputs[k].len()).collect() };
            for i in idx {
                let mut p = inputs.clone();
                p[k].data_mut()[i] += eps;
                let mut m = inputs.clone();
                m[k].data_mut()[i] -= eps;
                let (lp, lm) = (loss(&p[0], &p[1], &p[2]), loss(&m[0], &m[1], &m[2]));
                let numeric = (lp - lm) / (2.0 * eps);
                let a = analytic.data()[i];
                if rel_err(a, numeric) < 1e-3 {
                    continue;
                }
                // Bilinear sampling is piecewise linear: a pixel boundary
                // inside the stencil makes the central difference average two
                // slopes. Then the one-sided slopes must disagree and the
                // analytic value must equal one of them.
                let l0 = loss(&inputs[0], &inputs[1], &inputs[2]);
                let (fwd, bwd) = ((lp - l0) / eps, (l0 - lm) / eps);
                assert!(
                    rel_err(fwd, bwd) > 1e-3 && rel_err(a, fwd).min(rel_err(a, bwd)) < 1e-3,
                    "reg {reg} input {k} elem {i}: analytic {a} numeric {numeric} (one-sided {fwd}, {bwd})"
                );
            }
        }
    }
}

#[test]
fn flow_field_round_trips_through_its_binary_format() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let src = face_like(&mut rng);
    let dst = jitter(&src, 0.05, &mut rng);
    let flow = FlowField::compute(&src, &dst, 1e-4, 12, 10).unwrap();
    assert_eq!(flow.data.len(), 12 * 10 * 2);
    let mut buf = Vec::new();
    flow.write_to(&mut buf).unwrap();
    assert!(buf.starts_with(b"MWFLOW1\n12 10\n"));
    assert_eq!(FlowField::read_from(buf.as_slice()).unwrap(), flow);
    assert!(FlowField::read_from(&b"MWFLOW1\n2 2\n"[..]).is_err());

    let ident = FlowField::compute(&src, &src, 0.0, 8, 8).unwrap();
    assert!(ident.data.iter().all(|v| v.abs() < 1e-5));
}

