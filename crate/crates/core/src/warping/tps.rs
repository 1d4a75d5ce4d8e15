//! Thin-plate spline interpolation between two point sets.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::landmarks::{LandmarkSet, Point};

/// Pivot ratio below which a factorisation is treated as singular.
const SINGULAR_RATIO: f64 = 1e-11;

/// Radial basis `U(r) = r^2 ln r`, written in terms of `d2 = r^2`.
pub fn radial_basis(d2: f64) -> f64 {
    if d2 > 0.0 {
        0.5 * d2 * d2.ln()
    } else {
        0.0
    }
}

/// Derivative of [`radial_basis`] with respect to the evaluation point,
/// divided by the offset vector: `dU/dq = basis_slope(d2) * (q - c)`.
pub fn basis_slope(d2: f64) -> f64 {
    if d2 > 0.0 {
        d2.ln() + 1.0
    } else {
        0.0
    }
}

/// Solved thin-plate spline `f: R^2 -> R^2`,
///
/// `f_k(p) = affine[k][0] + affine[k][1] * p.x + affine[k][2] * p.y + sum_i weights[i][k] * U(|p - c_i|)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TpsParams {
    pub affine: [[f64; 3]; 2],
    pub weights: Vec<Point>,
    pub control_points: Vec<Point>,
    pub regularization: f64,
}

impl TpsParams {
    pub fn eval(&self, p: Point) -> Point {
        let mut out = [0.0; 2];
        for k in 0..2 {
            out[k] = self.affine[k][0] + self.affine[k][1] * p[0] + self.affine[k][2] * p[1];
        }
        for (c, w) in self.control_points.iter().zip(&self.weights) {
            let u = radial_basis(dist2(p, *c));
            out[0] += w[0] * u;
            out[1] += w[1] * u;
        }
        out
    }
}

pub(crate) fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Fitted spline together with the inverse of its system matrix, which the
/// differentiable warp reuses in its backward pass.
pub(crate) struct TpsSystem {
    pub params: TpsParams,
    /// Inverse of `[[K + reg I, P], [P^T, 0]]`, size `(n + 3)^2`.
    pub inverse: DMatrix<f64>,
}

pub(crate) fn system_matrix(ctrl: &[Point], reg: f64) -> DMatrix<f64> {
    let n = ctrl.len();
    let mut l = DMatrix::<f64>::zeros(n + 3, n + 3);
    for i in 0..n {
        for j in 0..n {
            l[(i, j)] = if i == j { reg } else { radial_basis(dist2(ctrl[i], ctrl[j])) };
        }
        l[(i, n)] = 1.0;
        l[(i, n + 1)] = ctrl[i][0];
        l[(i, n + 2)] = ctrl[i][1];
        l[(n, i)] = 1.0;
        l[(n + 1, i)] = ctrl[i][0];
        l[(n + 2, i)] = ctrl[i][1];
    }
    l
}

pub(crate) fn fit(ctrl: &[Point], values: &[Point], reg: f64) -> Result<TpsSystem> {
    assert_eq!(ctrl.len(), values.len());
    if reg < 0.0 || !reg.is_finite() {
        return Err(Error::Numeric(format!("regularization must be finite and >= 0, got {reg}")));
    }
    if ctrl.iter().chain(values).flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite control point".into()));
    }
    let n = ctrl.len();
    let l = system_matrix(ctrl, reg);
    let lu = l.clone().lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..n + 3).map(|i| u[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min / max < SINGULAR_RATIO {
        return Err(Error::SingularSystem(format!(
            "{n} control points, pivot ratio {:.3e}",
            if max > 0.0 { min / max } else { 0.0 }
        )));
    }
    let inverse = lu
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem(format!("{n} control points")))?;
    let mut rhs = DMatrix::<f64>::zeros(n + 3, 2);
    for (i, v) in values.iter().enumerate() {
        rhs[(i, 0)] = v[0];
        rhs[(i, 1)] = v[1];
    }
    let coef = &inverse * rhs;
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("non-finite coefficients".into()));
    }
    let params = TpsParams {
        affine: std::array::from_fn(|k| [coef[(n, k)], coef[(n + 1, k)], coef[(n + 2, k)]]),
        weights: (0..n).map(|i| [coef[(i, 0)], coef[(i, 1)]]).collect(),
        control_points: ctrl.to_vec(),
        regularization: reg,
    };
    Ok(TpsSystem { params, inverse })
}

/// Spline with `f(src_i) = dst_i` (exactly for `reg = 0`, in the penalised
/// least-bending sense for `reg > 0`).
pub fn solve_tps(src: &LandmarkSet, dst: &LandmarkSet, reg: f64) -> Result<TpsParams> {
    solve_tps_points(&src.points, &dst.points, reg)
}

pub fn solve_tps_points(src: &[Point], dst: &[Point], reg: f64) -> Result<TpsParams> {
    Ok(fit(src, dst, reg)?.params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_points() -> LandmarkSet {
        LandmarkSet::new(std::array::from_fn(|i| {
            let t = i as f64;
            [0.15 + 0.7 * ((t * 0.37).fract()), 0.1 + 0.8 * ((t * 0.61 + 0.2).fract())]
        }))
    }

    #[test]
    fn identity_fit_has_identity_affine_and_zero_weights() {
        let l = grid_points();
        let p = solve_tps(&l, &l, 0.0).unwrap();
        assert!((p.affine[0][0]).abs() < 1e-10 && (p.affine[0][1] - 1.0).abs() < 1e-10 && p.affine[0][2].abs() < 1e-10);
        assert!((p.affine[1][0]).abs() < 1e-10 && p.affine[1][1].abs() < 1e-10 && (p.affine[1][2] - 1.0).abs() < 1e-10);
        assert!(p.weights.iter().flatten().all(|w| w.abs() < 1e-10));
    }

    #[test]
    fn translation_goes_to_the_affine_part() {
        let l = grid_points();
        let moved = l.map(|p| [p[0] + 0.05, p[1] - 0.02]);
        let p = solve_tps(&l, &moved, 0.0).unwrap();
        assert!((p.affine[0][0] - 0.05).abs() < 1e-10);
        assert!((p.affine[1][0] + 0.02).abs() < 1e-10);
        assert!(p.weights.iter().flatten().all(|w| w.abs() < 1e-10));
    }

    #[test]
    fn weights_satisfy_side_conditions() {
        let l = grid_points();
        let d = l.map(|p| [p[0] + 0.1 * (p[1] * 7.0).sin(), p[1] + 0.05 * (p[0] * 5.0).cos()]);
        let p = solve_tps(&l, &d, 0.0).unwrap();
        for k in 0..2 {
            let s: f64 = p.weights.iter().map(|w| w[k]).sum();
            let sx: f64 = p.weights.iter().zip(&p.control_points).map(|(w, c)| w[k] * c[0]).sum();
            let sy: f64 = p.weights.iter().zip(&p.control_points).map(|(w, c)| w[k] * c[1]).sum();
            assert!(s.abs() < 1e-6 && sx.abs() < 1e-6 && sy.abs() < 1e-6);
        }
    }

    #[test]
    fn collinear_or_duplicate_points_are_singular_without_regularization() {
        let line = LandmarkSet::new(std::array::from_fn(|i| [i as f64 / 20.0, i as f64 / 20.0]));
        assert!(matches!(solve_tps(&line, &line, 0.0), Err(Error::SingularSystem(_))));
        let mut dup = grid_points();
        dup.points[5] = dup.points[4];
        assert!(matches!(solve_tps(&dup, &dup, 0.0), Err(Error::SingularSystem(_))));
        assert!(solve_tps(&dup, &dup, 1e-3).is_ok());
    }

    #[test]
    fn regularization_trades_exactness_for_smoothness() {
        let l = grid_points();
        let d = l.map(|p| [p[0] + 0.1 * (p[1] * 9.0).sin(), p[1]]);
        let exact = solve_tps(&l, &d, 0.0).unwrap();
        let smooth = solve_tps(&l, &d, 1.0).unwrap();
        let err = |t: &TpsParams| -> f64 {
            l.points.iter().zip(&d.points).map(|(s, t2)| dist2(t.eval(*s), *t2)).sum()
        };
        assert!(err(&exact) < 1e-16);
        assert!(err(&smooth) > 1e-8);
    }
}
