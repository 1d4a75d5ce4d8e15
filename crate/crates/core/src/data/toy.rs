//! Procedural face corpus with exactly known landmarks.
//!
//! Photos are smoothly shaded with sensor noise; caricatures use an
//! exaggerated copy of the same identity's geometry, drawn with flat
//! posterised colour from a random palette and dark outlines. Each identity
//! has fixed geometry, so identity is recoverable from shape alone.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Domain, PreprocessedSample};
use crate::image::ImageTensor;
use crate::landmarks::{LandmarkSet, Point};

/// Face shape in normalised coordinates; vertical offsets are relative to
/// the head centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceGeometry {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub ear_dy: f64,
    pub ear_r: f64,
    pub eye_y: f64,
    pub eye_dx: f64,
    pub eye_rx: f64,
    pub eye_ry: f64,
    pub brow_gap: f64,
    pub nose_y: f64,
    pub nose_w: f64,
    pub mouth_y: f64,
    pub mouth_w: f64,
    pub mouth_h: f64,
}

/// `(low, high)` for each shape parameter after `cx, cy`, in field order.
const RANGES: [(f64, f64); 14] = [
    (0.22, 0.30),   // rx
    (0.28, 0.36),   // ry
    (-0.04, 0.02),  // ear_dy
    (0.035, 0.055), // ear_r
    (-0.11, -0.04), // eye_y
    (0.085, 0.125), // eye_dx
    (0.035, 0.055), // eye_rx
    (0.02, 0.035),  // eye_ry
    (0.04, 0.07),   // brow_gap
    (0.03, 0.09),   // nose_y
    (0.02, 0.04),   // nose_w
    (0.13, 0.20),   // mouth_y
    (0.06, 0.11),   // mouth_w
    (0.015, 0.035), // mouth_h
];

/// Number of distinct exaggeration modes applied to caricatures.
pub const EXAGGERATION_MODES: usize = 4;

impl FaceGeometry {
    fn params(&self) -> [f64; 14] {
        [
            self.rx, self.ry, self.ear_dy, self.ear_r, self.eye_y, self.eye_dx, self.eye_rx, self.eye_ry,
            self.brow_gap, self.nose_y, self.nose_w, self.mouth_y, self.mouth_w, self.mouth_h,
        ]
    }

    fn from_params(cx: f64, cy: f64, p: [f64; 14]) -> Self {
        let [rx, ry, ear_dy, ear_r, eye_y, eye_dx, eye_rx, eye_ry, brow_gap, nose_y, nose_w, mouth_y, mouth_w, mouth_h] = p;
        Self { cx, cy, rx, ry, ear_dy, ear_r, eye_y, eye_dx, eye_rx, eye_ry, brow_gap, nose_y, nose_w, mouth_y, mouth_w, mouth_h }
    }

    /// The average face, centred.
    pub fn mean() -> Self {
        Self::from_params(0.5, 0.5, RANGES.map(|(a, b)| 0.5 * (a + b)))
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        Self::from_params(0.5, 0.5, RANGES.map(|(a, b)| rng.random_range(a..b)))
    }

    /// Amplify the deviation from the mean face by `k`, then apply one of
    /// [`EXAGGERATION_MODES`] characteristic distortions.
    pub fn exaggerated(&self, k: f64, mode: usize) -> Self {
        let mean = Self::mean().params();
        let mut p = self.params();
        for (v, m) in p.iter_mut().zip(mean) {
            *v = m + k * (*v - m);
        }
        let mut g = Self::from_params(self.cx, self.cy, p);
        match mode % EXAGGERATION_MODES {
            0 => {
                g.rx *= 0.82;
                g.ry *= 1.12;
                g.mouth_y *= 1.15;
            }
            1 => {
                g.rx *= 1.15;
                g.ry *= 0.9;
                g.eye_dx *= 1.2;
            }
            2 => {
                g.eye_rx *= 1.5;
                g.eye_ry *= 1.6;
                g.brow_gap *= 1.3;
            }
            _ => {
                g.mouth_w *= 1.5;
                g.mouth_h *= 1.4;
                g.nose_y *= 1.35;
            }
        }
        g.sanitized()
    }

    /// Keep every primitive positive-sized and the head inside the frame.
    fn sanitized(mut self) -> Self {
        self.rx = self.rx.clamp(0.14, 0.40);
        self.ry = self.ry.clamp(0.2, 0.42);
        self.ear_r = self.ear_r.clamp(0.02, 0.08);
        self.eye_rx = self.eye_rx.clamp(0.02, (0.3 * self.rx).min(0.09));
        self.eye_ry = self.eye_ry.clamp(0.012, 0.06);
        self.eye_dx = self.eye_dx.clamp(self.eye_rx + 0.01, self.rx - self.eye_rx - 0.01);
        self.eye_y = self.eye_y.clamp(-0.5 * self.ry, -0.05);
        self.brow_gap = self.brow_gap.clamp(self.eye_ry + 0.01, 0.12);
        self.mouth_w = self.mouth_w.clamp(0.03, self.rx * 0.8);
        self.mouth_h = self.mouth_h.clamp(0.008, 0.06);
        self.mouth_y = self.mouth_y.clamp(self.eye_y + self.mouth_h + 0.07, self.ry - self.mouth_h - 0.03);
        self.nose_y = self.nose_y.clamp(self.eye_y + 0.03, self.mouth_y - self.mouth_h - 0.01);
        self
    }

    /// Rigid jitter: shift by `(dx, dy)` and scale about the centre by `s`.
    pub fn jittered(&self, dx: f64, dy: f64, s: f64) -> Self {
        let mut p = self.params();
        for v in &mut p {
            *v *= s;
        }
        Self::from_params(self.cx + dx, self.cy + dy, p)
    }

    fn eye_centers(&self) -> [Point; 2] {
        let y = self.cy + self.eye_y;
        [[self.cx - self.eye_dx, y], [self.cx + self.eye_dx, y]]
    }

    /// The 17 landmarks, exactly where the renderer draws them.
    pub fn landmarks(&self) -> LandmarkSet {
        let (cx, cy) = (self.cx, self.cy);
        let [le, re] = self.eye_centers();
        let by = le[1] - self.brow_gap;
        let my = cy + self.mouth_y;
        LandmarkSet::new([
            [cx - self.rx, cy + self.ear_dy],
            [cx, cy + self.ry],
            [cx + self.rx, cy + self.ear_dy],
            [cx, cy - self.ry],
            [le[0] - self.eye_rx, by],
            [le[0] + self.eye_rx, by],
            [re[0] - self.eye_rx, by],
            [re[0] + self.eye_rx, by],
            [le[0] - self.eye_rx, le[1]],
            [le[0] + self.eye_rx, le[1]],
            [re[0] - self.eye_rx, re[1]],
            [re[0] + self.eye_rx, re[1]],
            [cx, cy + self.nose_y],
            [cx - self.mouth_w, my],
            [cx, my - self.mouth_h],
            [cx + self.mouth_w, my],
            [cx, my + self.mouth_h],
        ])
    }
}

type Rgb = [f64; 3];

/// Colours and rendering mode for one drawing.
#[derive(Clone, Copy, Debug)]
pub struct Appearance {
    pub background: [Rgb; 2],
    pub skin: Rgb,
    pub hair: Rgb,
    pub features: Rgb,
    pub lips: Rgb,
    pub domain: Domain,
    /// Per-pixel noise level (photos only).
    pub noise: f64,
}

const CARICATURE_PALETTES: [[Rgb; 5]; 4] = [
    // background, skin, hair, features, lips
    [[0.9, 0.85, 0.3], [0.95, 0.6, 0.2], [0.5, 0.1, -0.6], [-0.9, -0.9, -0.9], [0.9, -0.5, -0.4]],
    [[-0.2, 0.6, 0.9], [0.9, 0.75, 0.55], [-0.7, -0.8, -0.2], [-0.8, -0.9, -0.6], [0.6, -0.7, 0.2]],
    [[0.8, 0.3, 0.7], [0.7, 0.9, 0.6], [0.1, -0.6, -0.8], [-1.0, -0.8, -0.8], [-0.2, -0.7, 0.8]],
    [[0.3, 0.9, 0.4], [1.0, 0.8, 0.8], [-0.5, -0.2, 0.5], [-0.6, -0.9, -1.0], [1.0, 0.1, -0.3]],
];

impl Appearance {
    pub fn photo(skin: Rgb, hair: Rgb, rng: &mut impl Rng) -> Self {
        let g = rng.random_range(-0.3..0.3);
        let tint = rng.random_range(-0.15..0.15);
        Self {
            background: [[g + tint, g, g - tint], [g - 0.3, g - 0.3 + tint, g - 0.2]],
            skin: skin.map(|v| v + rng.random_range(-0.05..0.05)),
            hair,
            features: [-0.75, -0.8, -0.8],
            lips: [0.45, -0.3, -0.25],
            domain: Domain::Photo,
            noise: 0.04,
        }
    }

    pub fn caricature(rng: &mut impl Rng) -> Self {
        let p = CARICATURE_PALETTES[rng.random_range(0..CARICATURE_PALETTES.len())];
        let shift: Rgb = std::array::from_fn(|_| rng.random_range(-0.1..0.1));
        let t = |c: Rgb| -> Rgb { std::array::from_fn(|k| (c[k] + shift[k]).clamp(-1.0, 1.0)) };
        Self {
            background: [t(p[0]), t(p[0])],
            skin: t(p[1]),
            hair: t(p[2]),
            features: p[3],
            lips: t(p[4]),
            domain: Domain::Caricature,
            noise: 0.0,
        }
    }
}

fn ellipse_sd(u: f64, v: f64, c: Point, rx: f64, ry: f64, px: f64) -> f64 {
    let n = (((u - c[0]) / rx).powi(2) + ((v - c[1]) / ry).powi(2)).sqrt();
    (n - 1.0) * rx.min(ry) * px
}

fn segment_sd(u: f64, v: f64, a: Point, b: Point, half_width: f64, px: f64) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let t = (((u - a[0]) * dx + (v - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    (((u - a[0] - t * dx).powi(2) + (v - a[1] - t * dy).powi(2)).sqrt() - half_width) * px
}

/// Coverage of a shape with signed distance `sd` (pixels), antialiased.
fn cover(sd: f64) -> f64 {
    (0.5 - sd).clamp(0.0, 1.0)
}

fn blend(dst: &mut Rgb, src: Rgb, a: f64) {
    for k in 0..3 {
        dst[k] += a * (src[k] - dst[k]);
    }
}

fn posterize(v: f64, levels: f64) -> f64 {
    (v * levels).round() / levels
}

/// Draw `g` at `size x size` with the given appearance.
pub fn render_face(g: &FaceGeometry, look: &Appearance, size: usize, rng: &mut impl Rng) -> ImageTensor {
    let px = size as f64;
    let caricature = look.domain == Domain::Caricature;
    let [le, re] = g.eye_centers();
    let lm = g.landmarks();
    let ears = [lm.points[0], lm.points[2]];
    let mouth_c = [g.cx, g.cy + g.mouth_y];
    let nose = lm.points[12];
    let hairline = g.cy - 0.45 * g.ry;
    let noise = Normal::new(0.0, look.noise.max(1e-12)).unwrap();
    let mut pixels = vec![[0.0; 3]; size * size];
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / px, y as f64 / px);
            let t = v;
            let mut c: Rgb = std::array::from_fn(|k| look.background[0][k] * (1.0 - t) + look.background[1][k] * t);
            let head_sd = ellipse_sd(u, v, [g.cx, g.cy], g.rx, g.ry, px);
            let ear_sd = ears.map(|e| ellipse_sd(u, v, e, g.ear_r * 0.7, g.ear_r, px));
            let mut shade = 1.0 - 0.35 * (((u - g.cx + 0.3 * g.rx) / g.rx).powi(2) + ((v - g.cy + 0.3 * g.ry) / g.ry).powi(2)) * 0.5;
            if caricature {
                shade = 0.85 + posterize(shade - 0.85, 4.0);
            }
            let skin = look.skin.map(|s| s * shade);
            for sd in ear_sd {
                blend(&mut c, skin.map(|s| s * 0.9), cover(sd));
            }
            blend(&mut c, skin, cover(head_sd));
            // Hair: the part of the head above the hairline.
            blend(&mut c, look.hair, cover(head_sd).min(cover((v - hairline) * px)));
            for e in [le, re] {
                let sd = ellipse_sd(u, v, e, g.eye_rx, g.eye_ry, px);
                blend(&mut c, [0.95, 0.95, 0.9], cover(sd));
                let r = g.eye_ry * 0.8;
                blend(&mut c, look.features, cover(ellipse_sd(u, v, e, r, r, px)));
                let a = [e[0] - g.eye_rx, e[1] - g.brow_gap];
                let b = [e[0] + g.eye_rx, e[1] - g.brow_gap];
                blend(&mut c, look.features, cover(segment_sd(u, v, a, b, 0.4 / px, px)));
                if caricature {
                    blend(&mut c, look.features, cover(sd.abs() - 0.5) * 0.8);
                }
            }
            let nose_sd = ellipse_sd(u, v, nose, g.nose_w, g.nose_w * 0.6, px);
            blend(&mut c, skin.map(|s| s * 0.7 - 0.1), cover(nose_sd));
            let mouth_sd = ellipse_sd(u, v, mouth_c, g.mouth_w, g.mouth_h, px);
            blend(&mut c, look.lips, cover(mouth_sd));
            if caricature {
                blend(&mut c, look.features, cover(head_sd.abs() - 0.6));
                blend(&mut c, look.features, cover(mouth_sd.abs() - 0.4) * 0.8);
            }
            pixels[y * size + x] = c;
        }
    }
    ImageTensor::from_fn(size, size, |ch, y, x| {
        let n = if look.noise > 0.0 { noise.sample(rng) } else { 0.0 };
        (pixels[y * size + x][ch] + n).clamp(-1.0, 1.0)
    })
}

/// Per-identity constants shared by every drawing of that person.
#[derive(Clone, Copy, Debug)]
pub struct ToyIdentity {
    pub geometry: FaceGeometry,
    pub skin: Rgb,
    pub hair: Rgb,
}

impl ToyIdentity {
    pub fn random(rng: &mut impl Rng) -> Self {
        let tone = rng.random_range(-0.3..0.7);
        let hair = rng.random_range(-0.9..0.2);
        Self {
            geometry: FaceGeometry::random(rng),
            skin: [tone + 0.2, tone - 0.05, tone - 0.25],
            hair: [hair + 0.15, hair, hair - 0.1],
        }
    }
}

/// One photo and one caricature of the same identity.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyPair {
    pub photo: PreprocessedSample,
    pub caricature: PreprocessedSample,
}

/// Render `per_identity` photo/caricature pairs for each of `n_identities`
/// people at `size x size`. Identities are numbered `0..n_identities`.
pub fn synth_toy_dataset(n_identities: usize, per_identity: usize, size: usize, seed: u64) -> Vec<ToyPair> {
    assert!(size >= 32, "toy faces need at least 32 pixels");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let people: Vec<ToyIdentity> = (0..n_identities).map(|_| ToyIdentity::random(&mut rng)).collect();
    let mut out = Vec::with_capacity(n_identities * per_identity);
    for (id, person) in people.iter().enumerate() {
        for _ in 0..per_identity {
            let jitter = |rng: &mut ChaCha8Rng| {
                (rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(0.96..1.04))
            };
            let (dx, dy, s) = jitter(&mut rng);
            let g = person.geometry.jittered(dx, dy, s);
            let look = Appearance::photo(person.skin, person.hair, &mut rng);
            let photo = PreprocessedSample {
                image: render_face(&g, &look, size, &mut rng),
                landmarks: g.landmarks(),
                identity: id,
                domain: Domain::Photo,
            };
            let k = rng.random_range(1.6..2.4);
            let mode = rng.random_range(0..EXAGGERATION_MODES);
            let (dx, dy, s) = jitter(&mut rng);
            let g = person.geometry.exaggerated(k, mode).jittered(dx, dy, s);
            let look = Appearance::caricature(&mut rng);
            let caricature = PreprocessedSample {
                image: render_face(&g, &look, size, &mut rng),
                landmarks: g.landmarks(),
                identity: id,
                domain: Domain::Caricature,
            };
            out.push(ToyPair { photo, caricature });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        let a = synth_toy_dataset(8, 4, 32, 7);
        assert_eq!(a.len(), 32);
        for p in &a {
            for s in [&p.photo, &p.caricature] {
                assert_eq!((s.image.height(), s.image.width()), (32, 32));
                assert!(s.image.data().iter().all(|v| (-1.0..=1.0).contains(v)));
                assert!(s.landmarks.points.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            }
            assert_eq!(p.photo.identity, p.caricature.identity);
        }
        assert_eq!(a, synth_toy_dataset(8, 4, 32, 7));
        assert_ne!(a, synth_toy_dataset(8, 4, 32, 8));
    }

    #[test]
    fn chin_landmark_is_the_ellipse_bottom() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let g = FaceGeometry::random(&mut rng).exaggerated(2.0, rng.random_range(0..4)).jittered(0.01, -0.01, 1.02);
            let chin = g.landmarks().points[crate::landmarks::index::CHIN];
            assert_eq!(chin, [g.cx, g.cy + g.ry]);
            // The renderer's head boundary passes through the chin.
            assert!(ellipse_sd(chin[0], chin[1], [g.cx, g.cy], g.rx, g.ry, 32.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eyes_are_level_in_toy_faces() {
        for p in synth_toy_dataset(3, 2, 32, 0) {
            for l in [&p.photo.landmarks, &p.caricature.landmarks] {
                assert!((l.left_eye_center()[1] - l.right_eye_center()[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn caricatures_are_further_from_the_mean_face() {
        let mean = FaceGeometry::mean().landmarks();
        let pairs = synth_toy_dataset(6, 3, 32, 2);
        let avg = |f: &dyn Fn(&ToyPair) -> f64| pairs.iter().map(f).sum::<f64>() / pairs.len() as f64;
        let dp = avg(&|p| p.photo.landmarks.mean_distance(&mean));
        let dc = avg(&|p| p.caricature.landmarks.mean_distance(&mean));
        assert!(dc > 1.3 * dp, "photo {dp} caricature {dc}");
    }
}
