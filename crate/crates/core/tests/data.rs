use mwgan::data::preprocess::CROP_SCALE;
use mwgan::data::{
    compute_crop_box, crop_and_resize, preprocess, read_cache, synth_toy_dataset, write_cache, Corpus,
    CropBox, Domain,
};
use mwgan::landmarks::{index, LandmarkSet, Point};
use mwgan::ImageTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook bilinear interpolation with border clamping on a single plane.
fn oracle_bilinear(img: &ImageTensor, c: usize, x: f64, y: f64) -> f64 {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x = x.clamp(0.0, w - 1.0);
    let y = y.clamp(0.0, h - 1.0);
    let (x0, y0) = (x.floor(), y.floor());
    let (x1, y1) = ((x0 + 1.0).min(w - 1.0), (y0 + 1.0).min(h - 1.0));
    let (a, b) = (x - x0, y - y0);
    let v = |xx: f64, yy: f64| img.get(c, yy as usize, xx as usize);
    v(x0, y0) * (1.0 - a) * (1.0 - b) + v(x1, y0) * a * (1.0 - b) + v(x0, y1) * (1.0 - a) * b + v(x1, y1) * a * b
}

#[test]
fn checkerboard_half_crop_matches_reference_bilinear() {
    let img = ImageTensor::from_fn(16, 16, |c, y, x| if (x / 2 + y / 2 + c) % 2 == 0 { 1.0 } else { -1.0 });
    let b = CropBox { x0: 0.25, y0: 0.0, x1: 0.75, y1: 0.5 };
    let size = 11;
    let out = crop_and_resize(&img, &b, size).unwrap();
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                // Output pixel centre (x + 0.5) covers the box proportionally.
                let sx = (b.x0 + (x as f64 + 0.5) / size as f64 * 0.5) * 16.0 - 0.5;
                let sy = (b.y0 + (y as f64 + 0.5) / size as f64 * 0.5) * 16.0 - 0.5;
                assert!((out.get(c, y, x) - oracle_bilinear(&img, c, sx, sy)).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn crop_box_matches_min_max_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let l = LandmarkSet::new(std::array::from_fn(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]));
        let xs: Vec<f64> = [0, 1, 2, 3].iter().map(|&i| l.points[i][0]).collect();
        let ys: Vec<f64> = [0, 1, 2, 3].iter().map(|&i| l.points[i][1]).collect();
        let mn = |v: &[f64]| v.iter().cloned().fold(f64::MAX, f64::min);
        let mx = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max);
        let (cx, cy) = ((mn(&xs) + mx(&xs)) / 2.0, (mn(&ys) + mx(&ys)) / 2.0);
        let (hw, hh) = ((mx(&xs) - mn(&xs)) * 0.75, (mx(&ys) - mn(&ys)) * 0.75);
        let b = compute_crop_box(&l).unwrap();
        let expect = [(cx - hw).max(0.0), (cy - hh).max(0.0), (cx + hw).min(1.0), (cy + hh).min(1.0)];
        for (g, e) in [b.x0, b.y0, b.x1, b.y1].iter().zip(expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }
    assert_eq!(CROP_SCALE, 1.5);
}

/// Raw "photo": a dot at each landmark on a tilted face layout, drawn at
/// subpixel accuracy as a Gaussian blob.
fn dotted(l: &LandmarkSet, size: usize, which: &[usize]) -> ImageTensor {
    ImageTensor::from_fn(size, size, |_, y, x| {
        let mut v = -1.0;
        for &i in which {
            let p = l.points[i];
            let d2 = (x as f64 - p[0] * size as f64).powi(2) + (y as f64 - p[1] * size as f64).powi(2);
            v += 2.0 * (-d2 / 2.0).exp();
        }
        v.min(1.0)
    })
}

fn centroid_near(img: &ImageTensor, p: Point, radius: f64) -> Point {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            if (x as f64 - p[0] * w).hypot(y as f64 - p[1] * h) <= radius {
                let m = img.get(0, y, x) + 1.0;
                sx += m * x as f64;
                sy += m * y as f64;
                sw += m;
            }
        }
    }
    [sx / sw, sy / sw]
}

fn tilted_face(rng: &mut ChaCha8Rng) -> LandmarkSet {
    let tilt: f64 = rng.random_range(-0.35..0.35);
    let (s, c) = tilt.sin_cos();
    let base = mwgan::data::toy::FaceGeometry::mean().jittered(0.0, 0.0, 0.6).landmarks();
    base.map(|p| {
        let (x, y) = (p[0] - 0.5, p[1] - 0.5);
        [0.5 + c * x - s * y, 0.5 + s * x + c * y]
    })
}

#[test]
fn transformed_landmarks_stay_on_their_pixels() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    // A few well-separated points so blobs don't overlap.
    let which = [index::CHIN, index::HEAD_TOP, index::LEFT_EAR, index::RIGHT_EAR, index::NOSE_TIP];
    for _ in 0..5 {
        let l = tilted_face(&mut rng);
        let img = dotted(&l, 96, &which);
        let (out, lo) = preprocess(&img, &l, 64).unwrap();
        let le = lo.left_eye_center();
        let re = lo.right_eye_center();
        assert!((le[1] - re[1]).abs() < 1e-6);
        for &i in &which {
            let p = lo.points[i];
            let c = centroid_near(&out, p, 3.0);
            let err = (c[0] - p[0] * 64.0).hypot(c[1] - p[1] * 64.0);
            assert!(err < 1.0, "landmark {i}: dot at {c:?}, landmark at {:?}", [p[0] * 64.0, p[1] * 64.0]);
        }
    }
}

#[test]
fn preprocessing_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let l = tilted_face(&mut rng);
    let img = dotted(&l, 48, &[0, 1, 2, 3]);
    let a = preprocess(&img, &l, 32).unwrap();
    let b = preprocess(&img, &l, 32).unwrap();
    assert!(a.0 == b.0 && a.1 == b.1);
}

#[test]
fn cache_round_trip_preserves_samples_up_to_quantization() {
    let pairs = synth_toy_dataset(3, 2, 32, 1);
    let corpus = Corpus::from_samples(pairs.iter().flat_map(|p| [p.photo.clone(), p.caricature.clone()]));
    let dir = tempfile::tempdir().unwrap();
    let all: Vec<_> = corpus.iter().cloned().collect();
    write_cache(dir.path(), &all).unwrap();
    let back = read_cache(dir.path()).unwrap();
    assert_eq!(back.len(), all.len());
    for (a, b) in all.iter().zip(&back) {
        assert_eq!((a.identity, a.domain), (b.identity, b.domain));
        assert_eq!(a.landmarks, b.landmarks);
        assert!(a.image.max_abs_diff(&b.image) <= 1.0 / 255.0 + 1e-12);
    }
    assert_eq!(Corpus::from_samples(back).domain(Domain::Caricature).len(), 6);
    assert_eq!(corpus.identities(), vec![0, 1, 2]);
    assert_eq!(corpus.restrict(&[1]).photos.len(), 2);
}
