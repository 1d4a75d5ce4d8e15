//! The 17-point facial landmark scheme and per-landmark displacements.

use mwgan_autograd::Tensor;

use crate::error::{Error, Result};

pub const NUM_LANDMARKS: usize = 17;
pub const LANDMARK_DIM: usize = 2 * NUM_LANDMARKS;

/// Positions within the 17-point scheme. "Left" means smaller x in the image.
pub mod index {
    pub const LEFT_EAR: usize = 0;
    pub const CHIN: usize = 1;
    pub const RIGHT_EAR: usize = 2;
    pub const HEAD_TOP: usize = 3;
    pub const LEFT_BROW_OUTER: usize = 4;
    pub const LEFT_BROW_INNER: usize = 5;
    pub const RIGHT_BROW_INNER: usize = 6;
    pub const RIGHT_BROW_OUTER: usize = 7;
    pub const LEFT_EYE_OUTER: usize = 8;
    pub const LEFT_EYE_INNER: usize = 9;
    pub const RIGHT_EYE_INNER: usize = 10;
    pub const RIGHT_EYE_OUTER: usize = 11;
    pub const NOSE_TIP: usize = 12;
    pub const MOUTH_LEFT: usize = 13;
    pub const MOUTH_UPPER: usize = 14;
    pub const MOUTH_RIGHT: usize = 15;
    pub const MOUTH_LOWER: usize = 16;

    /// Points spanning the initial face crop box.
    pub const CROP_ANCHORS: [usize; 4] = [LEFT_EAR, RIGHT_EAR, HEAD_TOP, CHIN];
    pub const LEFT_EYE: [usize; 2] = [LEFT_EYE_OUTER, LEFT_EYE_INNER];
    pub const RIGHT_EYE: [usize; 2] = [RIGHT_EYE_INNER, RIGHT_EYE_OUTER];
}

pub type Point = [f64; 2];

/// 17 ordered points in normalised image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LandmarkSet {
    pub points: [Point; NUM_LANDMARKS],
}

impl LandmarkSet {
    pub fn new(points: [Point; NUM_LANDMARKS]) -> Self {
        Self { points }
    }

    pub fn zeros() -> Self {
        Self { points: [[0.0; 2]; NUM_LANDMARKS] }
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != LANDMARK_DIM {
            return Err(Error::Shape { what: "landmarks", expected: vec![LANDMARK_DIM], got: vec![v.len()] });
        }
        Ok(Self { points: std::array::from_fn(|i| [v[2 * i], v[2 * i + 1]]) })
    }

    /// `[x0, y0, x1, y1, ...]`.
    pub fn to_flat(&self) -> [f64; LANDMARK_DIM] {
        std::array::from_fn(|k| self.points[k / 2][k % 2])
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, LANDMARK_DIM], self.to_flat().to_vec())
    }

    pub fn batch(sets: &[&LandmarkSet]) -> Tensor {
        let data: Vec<f64> = sets.iter().flat_map(|s| s.to_flat()).collect();
        Tensor::new(&[sets.len(), LANDMARK_DIM], data)
    }

    /// Row `n` of an `[N, 34]` tensor.
    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Self> {
        if t.shape().len() != 2 || t.dim(1) != LANDMARK_DIM || n >= t.dim(0) {
            return Err(Error::Shape { what: "landmark tensor", expected: vec![n + 1, LANDMARK_DIM], got: t.shape().to_vec() });
        }
        Self::from_flat(&t.data()[n * LANDMARK_DIM..(n + 1) * LANDMARK_DIM])
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().flatten().all(|v| v.is_finite())
    }

    pub fn left_eye_center(&self) -> Point {
        midpoint(self.points[index::LEFT_EYE[0]], self.points[index::LEFT_EYE[1]])
    }

    pub fn right_eye_center(&self) -> Point {
        midpoint(self.points[index::RIGHT_EYE[0]], self.points[index::RIGHT_EYE[1]])
    }

    pub fn map(&self, f: impl FnMut(Point) -> Point) -> Self {
        Self { points: self.points.map(f) }
    }

    /// Mean of the per-point Euclidean distances.
    pub fn mean_distance(&self, other: &LandmarkSet) -> f64 {
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
            .sum::<f64>()
            / NUM_LANDMARKS as f64
    }

    pub fn mean_of(sets: &[LandmarkSet]) -> LandmarkSet {
        let mut acc = LandmarkSet::zeros();
        for s in sets {
            for (a, p) in acc.points.iter_mut().zip(&s.points) {
                a[0] += p[0];
                a[1] += p[1];
            }
        }
        let n = sets.len().max(1) as f64;
        acc.map(|p| [p[0] / n, p[1] / n])
    }
}

fn midpoint(a: Point, b: Point) -> Point {
    [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
}

/// Per-landmark offsets in normalised coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisplacementField {
    pub deltas: [Point; NUM_LANDMARKS],
}

impl DisplacementField {
    pub fn zeros() -> Self {
        Self { deltas: [[0.0; 2]; NUM_LANDMARKS] }
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        Ok(Self { deltas: LandmarkSet::from_flat(v)?.points })
    }

    pub fn to_flat(&self) -> [f64; LANDMARK_DIM] {
        LandmarkSet { points: self.deltas }.to_flat()
    }

    pub fn l1_norm(&self) -> f64 {
        self.deltas.iter().flatten().map(|v| v.abs()).sum()
    }

    pub fn l1_distance(&self, other: &DisplacementField) -> f64 {
        self.deltas
            .iter()
            .flatten()
            .zip(other.deltas.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// `l + d`, point by point.
pub fn apply_displacement(l: &LandmarkSet, d: &DisplacementField) -> LandmarkSet {
    LandmarkSet { points: std::array::from_fn(|i| [l.points[i][0] + d.deltas[i][0], l.points[i][1] + d.deltas[i][1]]) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    #[test]
    fn zero_displacement_is_identity() {
        let mut r = pseudo(3);
        let l = LandmarkSet::new(std::array::from_fn(|_| [r(), r()]));
        assert_eq!(apply_displacement(&l, &DisplacementField::zeros()), l);
    }

    #[test]
    fn displacement_of_origin_is_the_displacement() {
        let mut r = pseudo(4);
        let d = DisplacementField { deltas: std::array::from_fn(|_| [r(), r()]) };
        assert_eq!(apply_displacement(&LandmarkSet::zeros(), &d).points, d.deltas);
    }

    #[test]
    fn displacement_matches_loop_oracle() {
        let mut r = pseudo(5);
        let l = LandmarkSet::new(std::array::from_fn(|_| [r(), r()]));
        let d = DisplacementField { deltas: std::array::from_fn(|_| [r(), r()]) };
        let got = apply_displacement(&l, &d);
        let (lf, df) = (l.to_flat(), d.to_flat());
        let mut want = [0.0; LANDMARK_DIM];
        for k in 0..LANDMARK_DIM {
            want[k] = lf[k] + df[k];
        }
        assert_eq!(got.to_flat(), want);
    }

    #[test]
    fn flat_layout_is_interleaved() {
        let l = LandmarkSet::new(std::array::from_fn(|i| [i as f64, 100.0 + i as f64]));
        let f = l.to_flat();
        assert_eq!(&f[..4], &[0.0, 100.0, 1.0, 101.0]);
        assert_eq!(LandmarkSet::from_flat(&f).unwrap(), l);
        assert!(LandmarkSet::from_flat(&f[..10]).is_err());
    }
}
