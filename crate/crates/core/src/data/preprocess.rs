//! Eye-line alignment, landmark-anchored cropping and resizing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{sample_bilinear, ImageTensor};
use crate::landmarks::{index, LandmarkSet, Point, NUM_LANDMARKS};

/// Enlargement applied to the tight landmark box before cropping.
pub const CROP_SCALE: f64 = 1.5;

/// Axis-aligned box in normalised image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl CropBox {
    pub const FULL: CropBox = CropBox { x0: 0.0, y0: 0.0, x1: 1.0, y1: 1.0 };

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> Point {
        [0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)]
    }
}

/// Rotate about the eye midpoint so that the eye centres share a row.
///
/// The rotation is rigid in pixel space, so non-square images keep their
/// proportions; landmarks and pixels go through the same transform.
pub fn rotate_to_horizontal_eyes(image: &ImageTensor, landmarks: &LandmarkSet) -> Result<(ImageTensor, LandmarkSet)> {
    let (w, h) = (image.width() as f64, image.height() as f64);
    let (le, re) = (landmarks.left_eye_center(), landmarks.right_eye_center());
    let (dx, dy) = ((re[0] - le[0]) * w, (re[1] - le[1]) * h);
    if dx.hypot(dy) < 1e-9 {
        return Err(Error::DegenerateGeometry("eye centres coincide".into()));
    }
    for p in [le, re] {
        if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
            return Err(Error::DegenerateGeometry(format!("eye centre {p:?} lies outside the image")));
        }
    }
    let theta = dy.atan2(dx);
    if theta == 0.0 {
        return Ok((image.clone(), landmarks.clone()));
    }
    let (mx, my) = (0.5 * (le[0] + re[0]) * w, 0.5 * (le[1] + re[1]) * h);
    let (s, c) = theta.sin_cos();
    // Forward map rotates by -theta; the image is pulled through its inverse.
    let rotated = landmarks.map(|p| {
        let (x, y) = (p[0] * w - mx, p[1] * h - my);
        [(c * x + s * y + mx) / w, (-s * x + c * y + my) / h]
    });
    let out = ImageTensor::from_fn(image.height(), image.width(), |ch, py, px| {
        let (x, y) = (px as f64 - mx, py as f64 - my);
        let (sx, sy) = (c * x - s * y + mx, s * x + c * y + my);
        sample_bilinear(image.plane(ch), image.width(), image.height(), sx, sy)
    });
    Ok((out, rotated))
}

/// Tight box through the ear centres, head top and chin, enlarged by
/// [`CROP_SCALE`] about its centre and clamped to the image.
pub fn compute_crop_box(landmarks: &LandmarkSet) -> Result<CropBox> {
    let pts = index::CROP_ANCHORS.map(|i| landmarks.points[i]);
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    if !(x1 > x0 && y1 > y0) {
        return Err(Error::DegenerateGeometry("crop anchors span zero area".into()));
    }
    let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let (hw, hh) = (0.5 * CROP_SCALE * (x1 - x0), 0.5 * CROP_SCALE * (y1 - y0));
    Ok(CropBox {
        x0: (cx - hw).max(0.0),
        y0: (cy - hh).max(0.0),
        x1: (cx + hw).min(1.0),
        y1: (cy + hh).min(1.0),
    })
}

/// Per-axis affine map from output pixel index to source pixel coordinate,
/// aligning pixel centres: `src = offset + scale * dst`.
#[derive(Clone, Copy, Debug)]
struct AxisMap {
    offset: f64,
    scale: f64,
}

impl AxisMap {
    fn new(lo: f64, extent: f64, src_len: usize, dst_len: usize) -> Self {
        let scale = extent * src_len as f64 / dst_len as f64;
        Self { offset: lo * src_len as f64 + 0.5 * scale - 0.5, scale }
    }
}

fn crop_maps(image: &ImageTensor, b: &CropBox, size: usize) -> (AxisMap, AxisMap) {
    (
        AxisMap::new(b.x0, b.width(), image.width(), size),
        AxisMap::new(b.y0, b.height(), image.height(), size),
    )
}

/// Bilinear crop of `b` resized to `size x size`; samples falling outside
/// the frame replicate the border.
pub fn crop_and_resize(image: &ImageTensor, b: &CropBox, size: usize) -> Result<ImageTensor> {
    if !(b.width() > 0.0 && b.height() > 0.0) || size == 0 {
        return Err(Error::DegenerateGeometry(format!("crop box {b:?} to {size}px")));
    }
    let (mx, my) = crop_maps(image, b, size);
    Ok(ImageTensor::from_fn(size, size, |c, y, x| {
        let sx = mx.offset + mx.scale * x as f64;
        let sy = my.offset + my.scale * y as f64;
        sample_bilinear(image.plane(c), image.width(), image.height(), sx, sy)
    }))
}

/// Landmarks expressed in the frame produced by [`crop_and_resize`].
pub fn remap_landmarks(landmarks: &LandmarkSet, image: &ImageTensor, b: &CropBox, size: usize) -> LandmarkSet {
    let (mx, my) = crop_maps(image, b, size);
    let (w, h, s) = (image.width() as f64, image.height() as f64, size as f64);
    landmarks.map(|p| [(p[0] * w - mx.offset) / mx.scale / s, (p[1] * h - my.offset) / my.scale / s])
}

/// Full alignment: rotate eyes level, crop around the head, resize.
pub fn preprocess(image: &ImageTensor, landmarks: &LandmarkSet, size: usize) -> Result<(ImageTensor, LandmarkSet)> {
    let (rot, rl) = rotate_to_horizontal_eyes(image, landmarks)?;
    let b = compute_crop_box(&rl)?;
    let out = crop_and_resize(&rot, &b, size)?;
    let mut l = remap_landmarks(&rl, &rot, &b, size);
    // Axis scaling keeps the eye line level up to rounding; make it exact.
    let (le, re) = (l.left_eye_center(), l.right_eye_center());
    let dy = 0.5 * (re[1] - le[1]);
    for i in index::LEFT_EYE {
        l.points[i][1] += dy;
    }
    for i in index::RIGHT_EYE {
        l.points[i][1] -= dy;
    }
    Ok((out, l))
}

/// Parse 17 `x y` lines of pixel coordinates and normalise by the image size.
pub fn load_landmark_file(path: &Path, width: usize, height: usize) -> Result<LandmarkSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmarks(&text, path, width as f64, height as f64)
}

/// Normalised landmark sidecar as written to the processed cache.
pub fn load_normalized_landmarks(path: &Path) -> Result<LandmarkSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmarks(&text, path, 1.0, 1.0)
}

pub fn format_landmarks(l: &LandmarkSet) -> String {
    l.points.iter().map(|p| format!("{:?} {:?}\n", p[0], p[1])).collect()
}

fn parse_landmarks(text: &str, path: &Path, sx: f64, sy: f64) -> Result<LandmarkSet> {
    let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let lines: Vec<&str> = text.trim_end().lines().collect();
    let mut points = [[0.0; 2]; NUM_LANDMARKS];
    for (i, line) in lines.iter().enumerate() {
        if i >= NUM_LANDMARKS {
            return Err(err(i + 1, format!("expected {NUM_LANDMARKS} landmark lines, found {}", lines.len())));
        }
        let mut toks = line.split_whitespace();
        for k in 0..2 {
            let tok = toks.next().ok_or_else(|| err(i + 1, "expected two numbers".into()))?;
            let v: f64 = tok.parse().map_err(|_| err(i + 1, format!("`{tok}` is not a number")))?;
            if !v.is_finite() {
                return Err(err(i + 1, format!("non-finite coordinate `{tok}`")));
            }
            points[i][k] = v / if k == 0 { sx } else { sy };
        }
        if toks.next().is_some() {
            return Err(err(i + 1, "expected exactly two numbers".into()));
        }
    }
    if lines.len() != NUM_LANDMARKS {
        return Err(err(lines.len() + 1, format!("expected {NUM_LANDMARKS} landmark lines, found {}", lines.len())));
    }
    Ok(LandmarkSet::new(points))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Landmark set whose eye corners straddle the given eye centres.
    fn with_eyes(le: Point, re: Point) -> LandmarkSet {
        let mut l = LandmarkSet::new(std::array::from_fn(|i| [0.3 + 0.02 * i as f64, 0.6 - 0.015 * i as f64]));
        let (dx, dy) = (0.03 * (re[0] - le[0]), 0.03 * (re[1] - le[1]));
        l.points[index::LEFT_EYE_OUTER] = [le[0] - dx, le[1] - dy];
        l.points[index::LEFT_EYE_INNER] = [le[0] + dx, le[1] + dy];
        l.points[index::RIGHT_EYE_INNER] = [re[0] - dx, re[1] - dy];
        l.points[index::RIGHT_EYE_OUTER] = [re[0] + dx, re[1] + dy];
        l
    }

    fn noise_image(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, |c, y, x| (((c * 131 + y * 31 + x * 17) % 97) as f64 / 48.5) - 1.0)
    }

    #[test]
    fn level_eyes_leave_everything_unchanged() {
        let img = noise_image(20, 20);
        let l = with_eyes([0.3, 0.3], [0.7, 0.3]);
        let (out, lr) = rotate_to_horizontal_eyes(&img, &l).unwrap();
        assert_eq!(out, img);
        assert_eq!(lr, l);
    }

    #[test]
    fn vertical_eye_line_rotates_a_quarter_turn() {
        let img = noise_image(16, 16);
        let l = with_eyes([0.3, 0.3], [0.3, 0.7]);
        let (_, lr) = rotate_to_horizontal_eyes(&img, &l).unwrap();
        let (le, re) = (lr.left_eye_center(), lr.right_eye_center());
        assert!((le[1] - re[1]).abs() < 1e-12);
        assert!(re[0] > le[0]);
        assert!((le[1] - 0.5).abs() < 1e-12 && (le[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn rotation_matches_explicit_rotation_matrix() {
        let img = noise_image(10, 10);
        let l = with_eyes([0.2, 0.2], [0.6, 0.5]);
        let (_, lr) = rotate_to_horizontal_eyes(&img, &l).unwrap();
        let ang = -(0.3f64).atan2(0.4);
        let rot = [[ang.cos(), -ang.sin()], [ang.sin(), ang.cos()]];
        let m = [0.4, 0.35];
        for i in 0..NUM_LANDMARKS {
            let d = [l.points[i][0] - m[0], l.points[i][1] - m[1]];
            let expect = [m[0] + rot[0][0] * d[0] + rot[0][1] * d[1], m[1] + rot[1][0] * d[0] + rot[1][1] * d[1]];
            assert!((lr.points[i][0] - expect[0]).abs() < 1e-6 && (lr.points[i][1] - expect[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn coincident_eyes_are_rejected() {
        let l = with_eyes([0.4, 0.4], [0.4, 0.4]);
        assert!(matches!(rotate_to_horizontal_eyes(&noise_image(8, 8), &l), Err(Error::DegenerateGeometry(_))));
    }

    fn anchors(pts: [Point; 4]) -> LandmarkSet {
        let mut l = LandmarkSet::new([[0.5, 0.5]; NUM_LANDMARKS]);
        for (i, p) in index::CROP_ANCHORS.iter().zip(pts) {
            l.points[*i] = p;
        }
        l
    }

    #[test]
    fn crop_box_scales_and_clamps() {
        let b = compute_crop_box(&anchors([[0.2, 0.5], [0.8, 0.5], [0.5, 0.1], [0.5, 0.9]])).unwrap();
        assert_eq!(b.center(), [0.5, 0.5]);
        assert!((b.x0 - 0.05).abs() < 1e-12 && (b.x1 - 0.95).abs() < 1e-12);
        assert_eq!((b.y0, b.y1), (0.0, 1.0));
        assert!(compute_crop_box(&anchors([[0.3, 0.3]; 4])).is_err());
    }

    #[test]
    fn full_box_at_native_size_is_exact_identity() {
        let img = noise_image(12, 12);
        assert!(crop_and_resize(&img, &CropBox::FULL, 12).unwrap() == img);
        let l = with_eyes([0.3, 0.4], [0.7, 0.4]);
        let back = remap_landmarks(&l, &img, &CropBox::FULL, 12);
        assert!(back.mean_distance(&l) < 1e-15);
    }

    #[test]
    fn constant_image_crops_to_constant() {
        let img = ImageTensor::filled(9, 13, [0.25, -0.5, 1.0]);
        let b = CropBox { x0: 0.1, y0: 0.2, x1: 0.73, y1: 0.9 };
        let out = crop_and_resize(&img, &b, 7).unwrap();
        assert!(out.max_abs_diff(&ImageTensor::filled(7, 7, [0.25, -0.5, 1.0])) < 1e-15);
    }

    #[test]
    fn landmark_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        let body: String = (0..17).map(|i| format!("{i} {i}\n")).collect();
        std::fs::write(&p, &body).unwrap();
        let l = load_landmark_file(&p, 256, 256).unwrap();
        assert_eq!(l.points[3], [3.0 / 256.0, 3.0 / 256.0]);

        std::fs::write(&p, format!("{body}\n")).unwrap();
        assert_eq!(load_landmark_file(&p, 256, 256).unwrap(), l);

        let short: String = (0..16).map(|i| format!("{i} {i}\n")).collect();
        std::fs::write(&p, short).unwrap();
        assert!(matches!(load_landmark_file(&p, 256, 256), Err(Error::Parse { line: 17, .. })));

        std::fs::write(&p, body.replace("5 5", "5 x")).unwrap();
        let e = load_landmark_file(&p, 256, 256).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 6, .. }), "{e}");
    }

    #[test]
    fn normalized_sidecar_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.lm");
        let l = with_eyes([0.123456789, 0.3], [0.7, 0.3000000001]);
        std::fs::write(&p, format_landmarks(&l)).unwrap();
        assert_eq!(load_normalized_landmarks(&p).unwrap(), l);
    }
}
