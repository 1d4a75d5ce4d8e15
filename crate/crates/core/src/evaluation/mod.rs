//! Sampling from a trained model, Fréchet distances over embedded image
//! sets, and latent-code diversity probes.

mod embed;
mod fid;

use std::path::Path;

use mwgan_autograd::{Binding, Graph, Tensor};
use rand::Rng;
use serde::Serialize;

pub use embed::{Embedder, EmbedderKind};
pub use fid::{fit_stats, frechet_distance, FeatureStats, EIGEN_TOLERANCE};

use crate::data::{Domain, PreprocessedSample};
use crate::error::{Error, Result};
use crate::geometric::Direction;
use crate::image::{ImageTensor, CHANNELS};
use crate::landmarks::LandmarkSet;
use crate::training::Model;
use crate::warping::warp;

/// Outputs of one translation of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    /// Texture-only result `[N, 3, S, S]`, before warping.
    pub stylized: Tensor,
    /// `Δl` `[N, 34]`.
    pub displacement: Tensor,
    /// `l + Δl` `[N, 34]`.
    pub landmarks: Tensor,
    /// Warped result `[N, 3, S, S]`.
    pub output: Tensor,
}

/// Translate `images`/`landmarks` of the direction's source domain with
/// explicit style codes `[N, d_s]` and landmark codes `[N, d_l]`.
pub fn translate_batch(model: &Model, images: &Tensor, landmarks: &Tensor, dir: Direction, style: &Tensor, latent: &Tensor) -> Result<Translation> {
    let g = Graph::new();
    let p = Binding::frozen(&g, &model.gen);
    let (src, tgt) = (dir.source(), dir.target());
    let x = g.constant(images.clone());
    let l = g.constant(landmarks.clone());
    let c = model.style.encode_content(&p, x, src)?;
    let xs = model.style.decode(&p, c, g.constant(style.clone()), tgt)?;
    let dl = model.geo.generate_displacement(&p, c, g.constant(latent.clone()), dir)?;
    let lt = l.add(dl);
    let out = warp(xs, l, lt, model.config.tps_regularization)?;
    let take = |v: mwgan_autograd::Var<'_>| v.value().as_ref().clone();
    Ok(Translation { stylized: take(xs), displacement: take(dl), landmarks: take(lt), output: take(out) })
}

/// Standard normal codes `[n, dim]`.
pub fn sample_codes(rng: &mut impl Rng, n: usize, dim: usize) -> Tensor {
    Tensor::from_fn(&[n, dim], |_| rng.sample(rand_distr::StandardNormal))
}

/// Style and landmark codes extracted from a guide caricature: the style
/// encoder's code of the guide image, and the landmark encoder's code of the
/// deformation from the photo's landmarks to the guide's.
pub fn encode_guide(model: &Model, guide: &ImageTensor, guide_landmarks: &LandmarkSet, photo_landmarks: &LandmarkSet) -> Result<(Tensor, Tensor)> {
    let g = Graph::new();
    let p = Binding::frozen(&g, &model.gen);
    let s = model.style.encode_style(&p, g.constant(ImageTensor::batch(&[guide])), Domain::Caricature)?;
    let z = model.geo.encode_landmark_latent(&p, g.constant(guide_landmarks.to_tensor()), g.constant(photo_landmarks.to_tensor()), Domain::Caricature)?;
    Ok((s.value().as_ref().clone(), z.value().as_ref().clone()))
}

fn repeat(t: &Tensor, n: usize) -> Tensor {
    Tensor::stack_batch(&vec![t; n])
}

fn images_of(t: &Tensor) -> Result<Vec<ImageTensor>> {
    (0..t.dim(0)).map(|i| ImageTensor::from_tensor(t, i)).collect()
}

/// One photo→caricature sample per (input, code draw), `per_input` draws each.
pub fn generate_caricatures(model: &Model, photos: &[PreprocessedSample], per_input: usize, rng: &mut impl Rng) -> Result<Vec<ImageTensor>> {
    let cfg = &model.config;
    let mut out = Vec::with_capacity(photos.len() * per_input);
    for s in photos {
        let x = repeat(&s.image.to_tensor(), per_input);
        let l = repeat(&s.landmarks.to_tensor(), per_input);
        let zs = sample_codes(rng, per_input, cfg.style_dim);
        let zl = sample_codes(rng, per_input, cfg.latent_dim);
        out.extend(images_of(&translate_batch(model, &x, &l, Direction::PhotoToCaricature, &zs, &zl)?.output)?);
    }
    Ok(out)
}

/// Outputs for every (style code, landmark code) combination of one input.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid {
    /// `cells[i][j]` uses style code `i` and landmark code `j`.
    pub cells: Vec<Vec<Translation>>,
}

impl SampleGrid {
    /// Output images arranged as rows of style codes.
    pub fn images(&self) -> Result<Vec<Vec<ImageTensor>>> {
        self.cells.iter().map(|row| row.iter().map(|t| ImageTensor::from_tensor(&t.output, 0)).collect()).collect()
    }
}

/// Translate one sample with `n_styles` style codes and `n_latents`
/// landmark codes drawn from `rng` (all style codes first).
pub fn sample_grid(model: &Model, image: &ImageTensor, landmarks: &LandmarkSet, dir: Direction, n_styles: usize, n_latents: usize, rng: &mut impl Rng) -> Result<SampleGrid> {
    let cfg = &model.config;
    let zs = sample_codes(rng, n_styles, cfg.style_dim);
    let zl = sample_codes(rng, n_latents, cfg.latent_dim);
    let (x, l) = (repeat(&image.to_tensor(), n_latents), repeat(&landmarks.to_tensor(), n_latents));
    let mut cells = Vec::with_capacity(n_styles);
    for i in 0..n_styles {
        let s = repeat(&zs.narrow_batch(i, 1), n_latents);
        let t = translate_batch(model, &x, &l, dir, &s, &zl)?;
        cells.push(
            (0..n_latents)
                .map(|j| Translation {
                    stylized: t.stylized.narrow_batch(j, 1),
                    displacement: t.displacement.narrow_batch(j, 1),
                    landmarks: t.landmarks.narrow_batch(j, 1),
                    output: t.output.narrow_batch(j, 1),
                })
                .collect(),
        );
    }
    Ok(SampleGrid { cells })
}

/// Fréchet distance between embedded image sets.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FidResult {
    pub embedder: String,
    pub generated: usize,
    pub real: usize,
    pub fid: f64,
}

pub fn fid_between(embedder: &Embedder, generated: &[ImageTensor], real: &[ImageTensor]) -> Result<FidResult> {
    let a = fit_stats(&embedder.embed(generated)?)?;
    let b = fit_stats(&embedder.embed(real)?)?;
    Ok(FidResult { embedder: embedder.id(), generated: generated.len(), real: real.len(), fid: frechet_distance(&a, &b)? })
}

/// Pairwise statistics over sampled codes, averaged over inputs.
///
/// "Landmark-code" statistics vary the landmark code with the style code
/// fixed; "style-code" statistics do the reverse. Distances are mean
/// absolute differences over all pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DiversityReport {
    pub inputs: usize,
    pub codes: usize,
    /// (i) `Δl` spread across landmark codes.
    pub landmark_code_displacement: f64,
    /// (ii) output-image spread across style codes.
    pub style_code_image: f64,
    /// Cross term: `Δl` spread across style codes.
    pub style_code_displacement: f64,
    /// Cross term: output-image spread across landmark codes.
    pub landmark_code_image: f64,
    /// Largest change of the stylized (pre-warp) image across landmark codes.
    pub landmark_code_stylized_max: f64,
}

fn mean_pairwise(rows: &Tensor) -> f64 {
    let n = rows.dim(0);
    let w = rows.len() / n.max(1);
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&rows.data()[i * w..(i + 1) * w], &rows.data()[j * w..(j + 1) * w]);
            total += a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / w as f64;
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// For each photo, draw `k` style and `k` landmark codes and measure how
/// much outputs move when only one of the two codes changes.
pub fn diversity_probe(model: &Model, photos: &[PreprocessedSample], k: usize, rng: &mut impl Rng) -> Result<DiversityReport> {
    let cfg = &model.config;
    let mut r = DiversityReport { inputs: photos.len(), codes: k, ..Default::default() };
    if photos.is_empty() || k == 0 {
        return Ok(r);
    }
    for s in photos {
        let x = repeat(&s.image.to_tensor(), k);
        let l = repeat(&s.landmarks.to_tensor(), k);
        let zs = sample_codes(rng, k, cfg.style_dim);
        let zl = sample_codes(rng, k, cfg.latent_dim);
        let fixed_s = repeat(&zs.narrow_batch(0, 1), k);
        let fixed_l = repeat(&zl.narrow_batch(0, 1), k);
        let vary_l = translate_batch(model, &x, &l, Direction::PhotoToCaricature, &fixed_s, &zl)?;
        let vary_s = translate_batch(model, &x, &l, Direction::PhotoToCaricature, &zs, &fixed_l)?;
        r.landmark_code_displacement += mean_pairwise(&vary_l.displacement);
        r.landmark_code_image += mean_pairwise(&vary_l.output);
        r.style_code_image += mean_pairwise(&vary_s.output);
        r.style_code_displacement += mean_pairwise(&vary_s.displacement);
        let first = vary_l.stylized.narrow_batch(0, 1);
        for i in 1..k {
            let d = vary_l.stylized.narrow_batch(i, 1).zip_map(&first, |a, b| (a - b).abs()).max_abs();
            r.landmark_code_stylized_max = r.landmark_code_stylized_max.max(d);
        }
    }
    let n = photos.len() as f64;
    r.landmark_code_displacement /= n;
    r.landmark_code_image /= n;
    r.style_code_image /= n;
    r.style_code_displacement /= n;
    Ok(r)
}

/// Contents of an evaluation report file.
#[derive(Clone, Debug, Serialize)]
pub struct EvaluationReport {
    pub checkpoint_step: u64,
    pub variant: String,
    pub config_hash: String,
    pub embedder: String,
    pub samples_per_input: usize,
    pub fid: FidResult,
    pub diversity: Option<DiversityReport>,
}

impl EvaluationReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serialises");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Grid of equally sized images with a one-pixel white border around every cell.
pub fn contact_sheet(rows: &[Vec<ImageTensor>]) -> Result<ImageTensor> {
    let first = rows.iter().flatten().next().ok_or_else(|| Error::Data("contact sheet needs at least one image".into()))?;
    let (h, w) = (first.height(), first.width());
    if rows.iter().flatten().any(|i| i.height() != h || i.width() != w) {
        return Err(Error::Data("contact sheet images differ in size".into()));
    }
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let (sh, sw) = (rows.len() * (h + 1) + 1, cols * (w + 1) + 1);
    let mut sheet = ImageTensor::filled(sh, sw, [1.0; 3]);
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            for ch in 0..CHANNELS {
                for y in 0..h {
                    for x in 0..w {
                        sheet.set(ch, 1 + r * (h + 1) + y, 1 + c * (w + 1) + x, img.get(ch, y, x));
                    }
                }
            }
        }
    }
    Ok(sheet)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_pairwise_examples() {
        assert_eq!(mean_pairwise(&Tensor::new(&[1, 2], vec![1.0, 2.0])), 0.0);
        // rows (0,0), (1,1), (2,0): pair distances 1, 1, 1
        assert_eq!(mean_pairwise(&Tensor::new(&[3, 2], vec![0.0, 0.0, 1.0, 1.0, 2.0, 0.0])), 1.0);
    }

    #[test]
    fn contact_sheet_layout() {
        let a = ImageTensor::filled(2, 3, [0.0; 3]);
        let sheet = contact_sheet(&[vec![a.clone(), a.clone()], vec![a.clone()]]).unwrap();
        assert_eq!((sheet.height(), sheet.width()), (7, 9));
        assert_eq!(sheet.get(0, 0, 0), 1.0);
        assert_eq!(sheet.get(0, 1, 1), 0.0);
        assert_eq!(sheet.get(0, 4, 5), 1.0);
        assert!(contact_sheet(&[]).is_err());
    }
}
