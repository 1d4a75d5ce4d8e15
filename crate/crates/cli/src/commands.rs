use std::path::{Path, PathBuf};

use log::{info, warn};
use mwgan::config::{DataSource, ExperimentConfig};
use mwgan::data::preprocess::load_normalized_landmarks;
use mwgan::data::{load_aligned, load_dataset, load_raw_sample, read_manifest, synth_toy_dataset, write_cache};
use mwgan::evaluation::{
    contact_sheet, diversity_probe, encode_guide, fid_between, generate_caricatures, sample_codes, sample_grid, translate_batch, Embedder,
    EvaluationReport,
};
use mwgan::geometric::Direction;
use mwgan::training::{load_checkpoint, train, TrainOutputs, TrainState, TrainingData};
use mwgan::warping::FlowField;
use mwgan::{Error, ImageTensor, LandmarkSet, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::manifest::RunManifest;
use crate::{Command, Common};

const DEFAULT_OUT: &str = "out";

fn out_dir(c: &Common) -> Result<PathBuf> {
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// The config file (or toy preset) with `--seed` and `--variant` applied.
fn resolve_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::toy(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(v) = c.variant {
        cfg = cfg.with_variant(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A trained state from `--checkpoint`; its stored config is authoritative.
fn checkpoint_state(c: &Common) -> Result<(TrainState, PathBuf)> {
    let path = c.checkpoint.clone().ok_or_else(|| Error::Config("this command needs --checkpoint".into()))?;
    let state = load_checkpoint(&path)?;
    if let Some(v) = c.variant {
        if v != state.model.config.variant {
            return Err(Error::Config(format!("--variant {v} conflicts with the checkpoint's variant {}", state.model.config.variant)));
        }
    }
    if c.config.is_some() {
        warn!("--config is ignored: the checkpoint carries its own config");
    }
    Ok((state, path))
}

fn sampling_rng(c: &Common) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(c.seed.unwrap_or(0))
}

/// An aligned input whose size matches the model.
fn load_input(path: &Path, size: usize) -> Result<(ImageTensor, LandmarkSet)> {
    let (img, lm) = load_aligned(path)?;
    if img.height() != size || img.width() != size {
        return Err(Error::Data(format!("{} is {}x{}, the model expects {size}x{size}", path.display(), img.width(), img.height())));
    }
    Ok((img, lm))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
}

fn save(img: &ImageTensor, path: PathBuf, m: &mut RunManifest) -> Result<()> {
    img.save_png(&path)?;
    info!("wrote {}", path.display());
    m.output(&path);
    Ok(())
}

pub fn run(c: &Common, cmd: Command) -> Result<()> {
    match cmd {
        Command::Prep { manifest, toy } => prep(c, manifest, toy),
        Command::Train { steps } => train_cmd(c, steps),
        Command::Generate { photos, n_styles, n_exaggerations } => generate(c, &photos, n_styles, n_exaggerations),
        Command::Guide { photo, guide } => guide_cmd(c, &photo, &guide),
        Command::Invert { caricature } => invert(c, &caricature),
        Command::EvalFid { samples_per_input, embedder_weights, embedder_seed, embedder_dim } => {
            eval_fid(c, samples_per_input, embedder_weights, embedder_seed, embedder_dim)
        }
        Command::Probe { k } => probe(c, k),
        Command::Flow { src, dst, size } => flow(c, &src, &dst, size),
    }
}

fn prep(c: &Common, manifest: Option<PathBuf>, toy: bool) -> Result<()> {
    let cfg = resolve_config(c)?;
    let out = out_dir(c)?;
    let mut m = RunManifest::new("prep", &cfg);
    let samples = match (manifest, toy) {
        (Some(path), _) => {
            m.input(&path)?;
            let raw = read_manifest(&path)?;
            let mut out = Vec::with_capacity(raw.len());
            for r in &raw {
                m.input(&r.image_path)?;
                m.input(&r.landmark_path)?;
                out.push(load_raw_sample(r, cfg.image_size)?);
            }
            out
        }
        (None, true) => {
            let (identities, per_identity, seed) = match cfg.data {
                DataSource::Toy { identities, per_identity, seed } => (identities, per_identity, seed),
                DataSource::Cache(_) => match ExperimentConfig::toy().data {
                    DataSource::Toy { identities, per_identity, seed } => (identities, per_identity, seed),
                    DataSource::Cache(_) => unreachable!("toy preset synthesises its data"),
                },
            };
            synth_toy_dataset(identities, per_identity, cfg.image_size, seed).into_iter().flat_map(|p| [p.photo, p.caricature]).collect()
        }
        (None, false) => return Err(Error::Config("prep needs --manifest PATH or --toy".into())),
    };
    write_cache(&out, &samples)?;
    info!("cached {} samples in {}", samples.len(), out.display());
    m.output(&out.join("index.tsv"));
    m.write(&out)
}

fn train_cmd(c: &Common, steps: Option<u64>) -> Result<()> {
    let out = out_dir(c)?;
    let mut state = match &c.checkpoint {
        Some(path) => {
            if c.seed.is_some() {
                return Err(Error::Config("--seed cannot change a resumed run".into()));
            }
            let (state, _) = checkpoint_state(c)?;
            info!("resuming from {} at step {}", path.display(), state.step);
            state
        }
        None => {
            let cfg = resolve_config(c)?;
            let ds = load_dataset(&cfg)?;
            TrainState::new(&cfg, &ds.train.identities())?
        }
    };
    let cfg = state.model.config.clone();
    let mut m = RunManifest::new("train", &cfg);
    if let Some(p) = &c.checkpoint {
        m.input(p)?;
    }
    if let Some(p) = &c.config {
        m.input(p)?;
    }
    if let DataSource::Cache(dir) = &cfg.data {
        m.input(Path::new(dir))?;
    }
    let until = steps.unwrap_or(cfg.total_steps);
    if until < state.step {
        return Err(Error::Config(format!("--steps {until} is behind the checkpoint's step {}", state.step)));
    }
    let data = TrainingData::new(load_dataset(&cfg)?.train)?;
    let summary = train(&mut state, &data, until, &TrainOutputs { dir: Some(out.clone()) })?;
    if let Some((step, r)) = summary.reports.last() {
        info!("finished at step {}: last total_G {:.4} (step {step}), {} skipped", state.step, r.total_g, state.skipped);
    }
    m.output(&out.join("losses.csv"));
    m.output(&out.join("final.ckpt"));
    m.write(&out)
}

fn generate(c: &Common, photos: &Path, n_styles: usize, n_exaggerations: usize) -> Result<()> {
    if n_styles == 0 || n_exaggerations == 0 {
        return Err(Error::Config("--n-styles and --n-exaggerations must be at least 1".into()));
    }
    let (state, ckpt) = checkpoint_state(c)?;
    let model = &state.model;
    let out = out_dir(c)?;
    let mut m = RunManifest::new("generate", &model.config);
    m.input(&ckpt)?;
    m.input(photos)?;
    let mut inputs: Vec<PathBuf> = std::fs::read_dir(photos)
        .map_err(|e| Error::io(photos, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    inputs.sort();
    if inputs.is_empty() {
        return Err(Error::Data(format!("no .png photos in {}", photos.display())));
    }
    let loaded = inputs.iter().map(|p| load_input(p, model.config.image_size)).collect::<Result<Vec<_>>>()?;
    let mut rng = sampling_rng(c);
    for (path, (img, lm)) in inputs.iter().zip(&loaded) {
        let grid = sample_grid(model, img, lm, Direction::PhotoToCaricature, n_styles, n_exaggerations, &mut rng)?;
        let cells = grid.images()?;
        let sheet = if n_styles == 1 && n_exaggerations == 1 { cells[0][0].clone() } else { contact_sheet(&cells)? };
        save(&sheet, out.join(format!("{}_grid.png", stem(path))), &mut m)?;
    }
    m.write(&out)
}

fn guide_cmd(c: &Common, photo: &Path, guide: &Path) -> Result<()> {
    let (state, ckpt) = checkpoint_state(c)?;
    let model = &state.model;
    let out = out_dir(c)?;
    let mut m = RunManifest::new("guide", &model.config);
    for p in [&ckpt, &photo.to_path_buf(), &guide.to_path_buf()] {
        m.input(p)?;
    }
    let size = model.config.image_size;
    let (img, lm) = load_input(photo, size)?;
    let (gimg, glm) = load_input(guide, size)?;
    let (s, z) = encode_guide(model, &gimg, &glm, &lm)?;
    let t = translate_batch(model, &img.to_tensor(), &lm.to_tensor(), Direction::PhotoToCaricature, &s, &z)?;
    save(&ImageTensor::from_tensor(&t.output, 0)?, out.join(format!("{}_guided_by_{}.png", stem(photo), stem(guide))), &mut m)?;
    m.write(&out)
}

fn invert(c: &Common, caricature: &Path) -> Result<()> {
    let (state, ckpt) = checkpoint_state(c)?;
    let model = &state.model;
    if model.config.variant.is_single_way() {
        warn!("single_way models never train the caricature-to-photo path");
    }
    let out = out_dir(c)?;
    let mut m = RunManifest::new("invert", &model.config);
    m.input(&ckpt)?;
    m.input(caricature)?;
    let (img, lm) = load_input(caricature, model.config.image_size)?;
    let mut rng = sampling_rng(c);
    let s = sample_codes(&mut rng, 1, model.config.style_dim);
    let z = sample_codes(&mut rng, 1, model.config.latent_dim);
    let t = translate_batch(model, &img.to_tensor(), &lm.to_tensor(), Direction::CaricatureToPhoto, &s, &z)?;
    save(&ImageTensor::from_tensor(&t.output, 0)?, out.join(format!("{}_photo.png", stem(caricature))), &mut m)?;
    m.write(&out)
}

/// Rows of a contact sheet showing the first few inputs' samples.
const SHEET_ROWS: usize = 8;

fn eval_fid(c: &Common, per_input: usize, weights: Option<PathBuf>, embedder_seed: u64, embedder_dim: usize) -> Result<()> {
    if per_input == 0 {
        return Err(Error::Config("--samples-per-input must be at least 1".into()));
    }
    let (state, ckpt) = checkpoint_state(c)?;
    let model = &state.model;
    let out = out_dir(c)?;
    let mut m = RunManifest::new("eval-fid", &model.config);
    m.input(&ckpt)?;
    let embedder = match &weights {
        Some(p) => {
            m.input(p)?;
            Embedder::from_weights(p)?
        }
        None => Embedder::proxy(embedder_seed, embedder_dim),
    };
    let test = load_dataset(&model.config)?.test;
    if test.photos.is_empty() || test.caricatures.len() < 2 {
        return Err(Error::Data("the test split needs photos and at least two caricatures".into()));
    }
    let mut rng = sampling_rng(c);
    let generated = generate_caricatures(model, &test.photos, per_input, &mut rng)?;
    let real: Vec<ImageTensor> = test.caricatures.iter().map(|s| s.image.clone()).collect();
    let fid = fid_between(&embedder, &generated, &real)?;
    info!("FID {:.4} ({} generated vs {} real, {})", fid.fid, fid.generated, fid.real, fid.embedder);
    let diversity = diversity_probe(model, &test.photos, 4, &mut rng)?;
    let report = EvaluationReport {
        checkpoint_step: state.step,
        variant: model.config.variant.to_string(),
        config_hash: model.config.hash(),
        embedder: embedder.id(),
        samples_per_input: per_input,
        fid,
        diversity: Some(diversity),
    };
    let path = out.join("report.json");
    report.write_json(&path)?;
    m.output(&path);
    let rows: Vec<Vec<ImageTensor>> = test
        .photos
        .iter()
        .zip(generated.chunks(per_input))
        .take(SHEET_ROWS)
        .map(|(p, g)| std::iter::once(p.image.clone()).chain(g.iter().cloned()).collect())
        .collect();
    save(&contact_sheet(&rows)?, out.join("samples.png"), &mut m)?;
    m.write(&out)
}

fn probe(c: &Common, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Config("--k must be at least 2".into()));
    }
    let (state, ckpt) = checkpoint_state(c)?;
    let model = &state.model;
    let out = out_dir(c)?;
    let mut m = RunManifest::new("probe", &model.config);
    m.input(&ckpt)?;
    let test = load_dataset(&model.config)?.test;
    let report = diversity_probe(model, &test.photos, k, &mut sampling_rng(c))?;
    let path = out.join("probe.json");
    let text = serde_json::to_string_pretty(&report).expect("report serialises");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    m.output(&path);
    m.write(&out)
}

fn flow(c: &Common, src: &Path, dst: &Path, size: usize) -> Result<()> {
    if size == 0 {
        return Err(Error::Config("--size must be positive".into()));
    }
    let cfg = resolve_config(c)?;
    let out = out_dir(c)?;
    let mut m = RunManifest::new("flow", &cfg);
    m.input(src)?;
    m.input(dst)?;
    let field = FlowField::compute(&load_normalized_landmarks(src)?, &load_normalized_landmarks(dst)?, cfg.tps_regularization, size, size)?;
    let path = out.join("flow.bin");
    let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    field.write_to(std::io::BufWriter::new(f)).map_err(|e| Error::io(&path, e))?;
    m.output(&path);
    m.write(&out)
}
