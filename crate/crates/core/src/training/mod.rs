//! Dual-way forward pass, alternating optimiser steps, and the training loop.

mod checkpoint;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use mwgan_autograd::{Adam, Binding, Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

use crate::adversaries::{Adversaries, CodeSpace};
use crate::config::ExperimentConfig;
use crate::data::{Corpus, Domain};
use crate::error::{Error, Result};
use crate::geometric::{Direction, GeometricNetwork};
use crate::image::ImageTensor;
use crate::landmarks::LandmarkSet;
use crate::losses::{assemble_losses, BundleEntry, ForwardBundle, LossReport};
use crate::style::StyleNetwork;
use crate::warping::warp;

/// Stream of the training RNG; parameter initialisation uses stream 0.
const TRAINING_STREAM: u64 = 1;

/// All networks plus their parameters: generators and encoders in `gen`,
/// critics and identity classifiers in `disc`.
#[derive(Clone)]
pub struct Model {
    pub config: ExperimentConfig,
    /// Training identities; class `k` of the identity classifiers is `identities[k]`.
    pub identities: Vec<usize>,
    pub style: StyleNetwork,
    pub geo: GeometricNetwork,
    pub adv: Adversaries,
    pub gen: ParamStore,
    pub disc: ParamStore,
}

impl Model {
    pub fn new(config: &ExperimentConfig, identities: &[usize]) -> Result<Self> {
        config.validate()?;
        let mut ids = identities.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < 2 {
            return Err(Error::Data(format!("need at least two training identities, got {}", ids.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut gen = ParamStore::new();
        let style = StyleNetwork::new(&mut gen, config, &mut rng);
        let geo = GeometricNetwork::new(&mut gen, config, &mut rng);
        let mut disc = ParamStore::new();
        let adv = Adversaries::new(&mut disc, config, ids.len(), &mut rng);
        Ok(Self { config: config.clone(), identities: ids, style, geo, adv, gen, disc })
    }

    /// Classifier index of an identity.
    pub fn class_of(&self, identity: usize) -> Result<usize> {
        self.identities
            .binary_search(&identity)
            .map_err(|_| Error::Data(format!("identity {identity} is not a training identity")))
    }

    fn single_way(&self) -> bool {
        self.config.variant.is_single_way()
    }
}

/// One unpaired training batch: index 0 holds photos, index 1 caricatures.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: [Tensor; 2],
    pub landmarks: [Tensor; 2],
    /// Classifier indices, not raw identity ids.
    pub labels: [Vec<usize>; 2],
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Assemble a batch from per-domain samples.
    pub fn from_samples(model: &Model, photos: &[&crate::data::PreprocessedSample], caricatures: &[&crate::data::PreprocessedSample]) -> Result<Self> {
        if photos.len() != caricatures.len() || photos.is_empty() {
            return Err(Error::Data("a batch needs the same positive number of photos and caricatures".into()));
        }
        let side = |s: &[&crate::data::PreprocessedSample]| -> Result<(Tensor, Tensor, Vec<usize>)> {
            let imgs: Vec<&ImageTensor> = s.iter().map(|x| &x.image).collect();
            let lms: Vec<&LandmarkSet> = s.iter().map(|x| &x.landmarks).collect();
            let labels = s.iter().map(|x| model.class_of(x.identity)).collect::<Result<_>>()?;
            Ok((ImageTensor::batch(&imgs), LandmarkSet::batch(&lms), labels))
        };
        let (xp, lp, yp) = side(photos)?;
        let (xc, lc, yc) = side(caricatures)?;
        Ok(Self { images: [xp, xc], landmarks: [lp, lc], labels: [yp, yc] })
    }
}

/// Uniform sampling of unpaired batches from the training identities.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub corpus: Corpus,
}

impl TrainingData {
    pub fn new(corpus: Corpus) -> Result<Self> {
        for d in Domain::BOTH {
            if corpus.domain(d).is_empty() {
                return Err(Error::Data(format!("no {d} samples for training")));
            }
        }
        Ok(Self { corpus })
    }

    pub fn identities(&self) -> Vec<usize> {
        self.corpus.identities()
    }

    pub fn sample(&self, model: &Model, n: usize, rng: &mut impl Rng) -> Result<Batch> {
        let mut pick = |d: Domain| {
            let pool = self.corpus.domain(d);
            (0..n).map(|_| &pool[rng.random_range(0..pool.len())]).collect::<Vec<_>>()
        };
        let photos = pick(Domain::Photo);
        let caricatures = pick(Domain::Caricature);
        Batch::from_samples(model, &photos, &caricatures)
    }
}

fn gaussian(rng: &mut impl Rng, n: usize, dim: usize) -> Tensor {
    Tensor::from_fn(&[n, dim], |_| rng.sample(StandardNormal))
}

/// Codes drawn for one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledCodes {
    /// Style codes indexed by target direction: `[z_c^s, z_p^s]`.
    pub style: [Tensor; 2],
    /// Landmark latent codes `[z^l_{p→c}, z^l_{c→p}]`.
    pub latent: [Tensor; 2],
}

impl SampledCodes {
    /// Draws `z_c^s, z_p^s, z^l_{p→c}, z^l_{c→p}` in that order.
    pub fn draw(cfg: &ExperimentConfig, n: usize, rng: &mut impl Rng) -> Self {
        let zsc = gaussian(rng, n, cfg.style_dim);
        let zsp = gaussian(rng, n, cfg.style_dim);
        let zlp = gaussian(rng, n, cfg.latent_dim);
        let zlc = gaussian(rng, n, cfg.latent_dim);
        Self { style: [zsc, zsp], latent: [zlp, zlc] }
    }
}

/// Both directions of the generator side of one training step.
///
/// Pair entries of translation quantities are indexed by direction
/// (`[p→c, c→p]`); the single-way variant leaves the c→p side empty.
pub fn forward_pass<'g>(model: &Model, p: &Binding<'g, '_>, batch: &Batch, codes: &SampledCodes) -> Result<ForwardBundle<'g>> {
    let g = p.graph();
    let cfg = &model.config;
    let single = model.single_way();
    let dirs: &[Direction] = if single { &[Direction::PhotoToCaricature] } else { &[Direction::PhotoToCaricature, Direction::CaricatureToPhoto] };
    let x = batch.images.clone().map(|t| g.constant(t));
    let l = batch.landmarks.clone().map(|t| g.constant(t));

    let mut b = ForwardBundle::new();
    b.insert_pair("input", Some(x[0]), Some(x[1]));
    b.insert_pair("landmarks", Some(l[0]), Some(l[1]));
    b.insert("labels", BundleEntry::Labels(batch.labels.clone()));

    // Within-domain autoencoding.
    let mut content = [None; 2];
    let mut style_enc = [None; 2];
    let mut recon = [None; 2];
    for d in Domain::BOTH {
        let i = d as usize;
        let c = model.style.encode_content(p, x[i], d)?;
        let s = model.style.encode_style(p, x[i], d)?;
        recon[i] = Some(model.style.decode(p, c, s, d)?);
        content[i] = Some(c);
        style_enc[i] = Some(s);
    }
    b.insert_pair("recon", recon[0], recon[1]);
    b.insert_pair("content", content[0], content[1]);
    b.insert_pair("style_encoded", style_enc[0], style_enc[1]);

    let zs = codes.style.clone().map(|t| g.constant(t));
    let zl = codes.latent.clone().map(|t| g.constant(t));
    b.insert_pair("style_sampled", Some(zs[0]), Some(zs[1]));
    b.insert_pair("latent_sampled", Some(zl[0]), Some(zl[1]));

    let mut stylized = [None; 2];
    let mut style_re = [None; 2];
    let mut content_re = [None; 2];
    let mut cycled = [None; 2];
    let mut disp = [None; 2];
    let mut l_gen = [None; 2];
    let mut warped = [None; 2];
    let mut latent_re = [None; 2];
    for &dir in dirs {
        let (src, tgt) = (dir.source(), dir.target());
        let (i, si) = (dir as usize, src as usize);
        let c_src = content[si].expect("content computed for both domains");
        // Texture: render the source content in the target domain.
        let xs = model.style.decode(p, c_src, zs[i], tgt)?;
        stylized[i] = Some(xs);
        style_re[i] = Some(model.style.encode_style(p, xs, tgt)?);
        let c_re = model.style.encode_content(p, xs, tgt)?;
        content_re[i] = Some(c_re);
        cycled[i] = Some(model.style.decode(p, c_re, style_enc[si].expect("style computed"), src)?);
        // Geometry: displace the source landmarks and warp the stylized image.
        let c_geo = if cfg.detach_content_for_geo { c_src.detach() } else { c_src };
        let dl = model.geo.generate_displacement(p, c_geo, zl[i], dir)?;
        let lt = l[si].add(dl);
        disp[i] = Some(dl);
        l_gen[i] = Some(lt);
        warped[i] = Some(warp(xs, l[si], lt, cfg.tps_regularization)?);
        latent_re[i] = if single { None } else { Some(model.geo.encode_landmark_latent(p, lt, l[si], tgt)?) };
    }
    b.insert_pair("stylized", stylized[0], stylized[1]);
    b.insert_pair("style_reencoded", style_re[0], style_re[1]);
    b.insert_pair("content_reencoded", content_re[0], content_re[1]);
    b.insert_pair("cycled", cycled[0], cycled[1]);
    b.insert_pair("displacement", disp[0], disp[1]);
    b.insert_pair("landmarks_generated", l_gen[0], l_gen[1]);
    b.insert_pair("warped", warped[0], warped[1]);
    b.insert_pair("latent_reencoded", latent_re[0], latent_re[1]);
    Ok(b)
}

fn push<'g>(group: &mut std::collections::BTreeMap<String, Vec<Var<'g>>>, key: String, v: Var<'g>) {
    group.entry(key).or_default().push(v);
}

/// Run every critic and classifier over the bundle, filling
/// `critic_scores` and `identity_log_probs`.
///
/// Critic keys are `{image|landmark|code}.{target}.{real|fake}`; identity
/// keys are `{image|landmark}.{domain}` with the real sample first and the
/// sample generated from that domain second, both labelled with that
/// domain's labels.
pub fn score_bundle<'g>(adv: &Adversaries, p: &Binding<'g, '_>, b: &mut ForwardBundle<'g>) -> Result<()> {
    use std::collections::BTreeMap;
    let x = b.pair("input")?;
    let l = b.pair("landmarks")?;
    let warped = b.pair("warped")?;
    let l_gen = b.pair("landmarks_generated")?;
    let style_enc = b.pair("style_encoded")?;
    let style_re = b.pair("style_reencoded")?;
    let zs = b.pair("style_sampled")?;
    let zl = b.pair("latent_sampled")?;
    let latent_re = b.pair("latent_reencoded")?;

    let mut critic: BTreeMap<String, Vec<Var<'g>>> = BTreeMap::new();
    let mut ident: BTreeMap<String, Vec<Var<'g>>> = BTreeMap::new();
    for d in Domain::BOTH {
        let i = d as usize;
        // Generated samples that land in domain d come from the other direction.
        let into = Direction::from_source(d.other()) as usize;
        let from = Direction::from_source(d) as usize;
        if let Some(fake) = warped[into] {
            push(&mut critic, format!("image.{d}.real"), adv.score_image(p, x[i].expect("input"), d)?);
            push(&mut critic, format!("image.{d}.fake"), adv.score_image(p, fake, d)?);
        }
        if let Some(fake) = l_gen[into] {
            push(&mut critic, format!("landmark.{d}.real"), adv.score_landmarks(p, l[i].expect("landmarks"), d)?);
            push(&mut critic, format!("landmark.{d}.fake"), adv.score_landmarks(p, fake, d)?);
        }
        if let Some(gen) = warped[from] {
            push(&mut ident, format!("image.{d}"), adv.identity_log_prob_image(p, x[i].expect("input"))?);
            push(&mut ident, format!("image.{d}"), adv.identity_log_prob_image(p, gen)?);
        }
        if let Some(gen) = l_gen[from] {
            push(&mut ident, format!("landmark.{d}"), adv.identity_log_prob_landmarks(p, l[i].expect("landmarks"))?);
            push(&mut ident, format!("landmark.{d}"), adv.identity_log_prob_landmarks(p, gen)?);
        }
    }
    for space in CodeSpace::ALL {
        // (real Gaussian sample, encoder outputs living in this space)
        let (real, fakes) = match space {
            CodeSpace::StylePhoto => (zs[1], [style_enc[0], style_re[1]]),
            CodeSpace::StyleCaricature => (zs[0], [style_enc[1], style_re[0]]),
            CodeSpace::LatentP2c => (zl[0], [latent_re[0], None]),
            CodeSpace::LatentC2p => (zl[1], [latent_re[1], None]),
        };
        let fakes: Vec<Var<'g>> = fakes.into_iter().flatten().collect();
        if fakes.is_empty() {
            continue;
        }
        if let Some(z) = real {
            push(&mut critic, format!("code.{}.real", space.name()), adv.score_latent(p, z, space)?);
        }
        for f in fakes {
            push(&mut critic, format!("code.{}.fake", space.name()), adv.score_latent(p, f, space)?);
        }
    }
    b.insert("critic_scores", BundleEntry::Group(critic));
    b.insert("identity_log_probs", BundleEntry::Group(ident));
    Ok(())
}

/// Copy of the generator-side entries as constants on another graph.
pub fn detach_bundle<'h>(b: &ForwardBundle<'_>, g: &'h Graph) -> ForwardBundle<'h> {
    let mut out = ForwardBundle::new();
    for name in b.names() {
        match b.get(name).expect("listed name") {
            BundleEntry::Pair(pair) => {
                let [a, c] = pair.map(|v| v.map(|v| g.constant(v.value().as_ref().clone())));
                out.insert_pair(name, a, c);
            }
            BundleEntry::Labels(l) => out.insert(name, BundleEntry::Labels(l.clone())),
            BundleEntry::Group(_) => {}
        }
    }
    out
}

/// Per-entry summary used in non-finite diagnostics.
pub fn describe_bundle(b: &ForwardBundle<'_>) -> String {
    let mut s = String::new();
    let stats = |v: Var<'_>| {
        let t = v.value();
        let finite = t.data().iter().filter(|x| x.is_finite()).count();
        let (lo, hi) = t.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        format!("shape {:?} min {lo:.4e} max {hi:.4e} finite {finite}/{}", t.shape(), t.len())
    };
    for name in b.names() {
        match b.get(name).expect("listed name") {
            BundleEntry::Pair(pair) => {
                for (side, v) in ["0", "1"].iter().zip(pair) {
                    if let Some(v) = v {
                        s.push_str(&format!("{name}[{side}]: {}\n", stats(*v)));
                    }
                }
            }
            BundleEntry::Labels(l) => s.push_str(&format!("{name}: {l:?}\n")),
            BundleEntry::Group(gr) => {
                for (k, vs) in gr {
                    for (j, v) in vs.iter().enumerate() {
                        s.push_str(&format!("{name}.{k}[{j}]: {}\n", stats(*v)));
                    }
                }
            }
        }
    }
    s
}

/// Every loss term at the current parameters for a given batch and codes,
/// without updating anything.
pub fn evaluate_losses(model: &Model, batch: &Batch, codes: &SampledCodes) -> Result<LossReport> {
    let g = Graph::new();
    let pg = Binding::frozen(&g, &model.gen);
    let pd = Binding::frozen(&g, &model.disc);
    let mut bundle = forward_pass(model, &pg, batch, codes)?;
    score_bundle(&model.adv, &pd, &mut bundle)?;
    Ok(assemble_losses(&bundle, &model.config.effective_weights())?.report)
}

/// Mutable training state: model, optimisers, step counter, and RNG.
#[derive(Clone)]
pub struct TrainState {
    pub model: Model,
    pub opt_gen: Adam,
    pub opt_disc: Adam,
    /// Number of completed steps (including skipped ones).
    pub step: u64,
    pub skipped: u64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(config: &ExperimentConfig, identities: &[usize]) -> Result<Self> {
        let model = Model::new(config, identities)?;
        let opt_gen = Adam::new(&model.gen, config.adam_beta1, config.adam_beta2);
        let opt_disc = Adam::new(&model.disc, config.adam_beta1, config.adam_beta2);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(TRAINING_STREAM);
        Ok(Self { model, opt_gen, opt_disc, step: 0, skipped: 0, rng })
    }

    pub fn learning_rate(&self) -> f64 {
        self.model.config.learning_rate(self.step)
    }
}

/// Result of one call to [`train_step`].
#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    /// Losses at the parameters the step started from.
    Trained(LossReport),
    /// The warp could not be solved for this batch; nothing was updated.
    Skipped(String),
}

fn is_geometry_failure(e: &Error) -> bool {
    matches!(e, Error::SingularSystem(_) | Error::DegenerateGeometry(_))
}

/// One discriminator update on `total_D` followed by one generator/encoder
/// update on `total_G`.
///
/// The discriminator sees detached generator outputs; the generator step
/// scores its outputs with the freshly updated, frozen discriminators. The
/// returned report is evaluated before either update.
pub fn train_step(state: &mut TrainState, batch: &Batch) -> Result<StepOutcome> {
    let step = state.step;
    let lr = state.learning_rate();
    let codes = SampledCodes::draw(&state.model.config, batch.len(), &mut state.rng);
    let weights = state.model.config.effective_weights();
    let g = Graph::new();
    let pg = Binding::new(&g, &state.model.gen);
    let mut bundle = match forward_pass(&state.model, &pg, batch, &codes) {
        Ok(b) => b,
        Err(e) if is_geometry_failure(&e) => {
            warn!("step {step}: skipped ({e})");
            state.step += 1;
            state.skipped += 1;
            return Ok(StepOutcome::Skipped(e.to_string()));
        }
        Err(e) => return Err(e),
    };

    let report = {
        let gd = Graph::new();
        let pd = Binding::new(&gd, &state.model.disc);
        let mut db = detach_bundle(&bundle, &gd);
        score_bundle(&state.model.adv, &pd, &mut db)?;
        let losses = assemble_losses(&db, &weights)?;
        if !losses.report.is_finite() {
            let dump = format!("{}{}", losses.report.dump(), describe_bundle(&db));
            return Err(Error::NonFinite { step, dump });
        }
        let grads = gd.backward(losses.total_d);
        let grads = pd.grads(&grads);
        state.opt_disc.step(&mut state.model.disc, &grads, lr);
        losses.report
    };

    let pd = Binding::frozen(&g, &state.model.disc);
    score_bundle(&state.model.adv, &pd, &mut bundle)?;
    let losses = assemble_losses(&bundle, &weights)?;
    if !losses.total_g.item().is_finite() {
        let dump = format!("{}{}", losses.report.dump(), describe_bundle(&bundle));
        return Err(Error::NonFinite { step, dump });
    }
    let grads = g.backward(losses.total_g);
    let grads = pg.grads(&grads);
    drop(pd);
    drop(pg);
    state.opt_gen.step(&mut state.model.gen, &grads, lr);
    state.step += 1;
    Ok(StepOutcome::Trained(report))
}

/// Appends loss reports as CSV rows, writing the header once.
pub struct CsvLog {
    out: BufWriter<File>,
    path: PathBuf,
}

impl CsvLog {
    /// Opens `path` for appending; a new or empty file gets the header.
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        let empty = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
        let mut log = Self { out: BufWriter::new(file), path: path.to_path_buf() };
        if empty {
            writeln!(log.out, "{}", LossReport::csv_header()).map_err(|e| Error::io(&log.path, e))?;
        }
        Ok(log)
    }

    pub fn append(&mut self, step: u64, r: &LossReport) -> Result<()> {
        writeln!(self.out, "{}", r.csv_row(step)).map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Where and how often the loop writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    /// Directory for `losses.csv` and checkpoints; `None` keeps everything in memory.
    pub dir: Option<PathBuf>,
}

/// Reports of the steps run by [`train`], in order (skipped steps omitted).
#[derive(Clone, Debug, Default)]
pub struct TrainSummary {
    pub reports: Vec<(u64, LossReport)>,
    pub skipped: u64,
}

/// Maximum fraction of skipped steps before a run is declared failed.
pub const MAX_SKIP_RATE: f64 = 0.01;

/// Run [`train_step`] until `state.step == until`, logging and
/// checkpointing per the config. Checkpoints are `step-XXXXXXX.ckpt`
/// plus `final.ckpt`.
pub fn train(state: &mut TrainState, data: &TrainingData, until: u64, outputs: &TrainOutputs) -> Result<TrainSummary> {
    let cfg = state.model.config.clone();
    let mut log = match &outputs.dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(CsvLog::open(&dir.join("losses.csv"))?)
        }
        None => None,
    };
    let mut summary = TrainSummary::default();
    let skip_budget = (cfg.total_steps as f64 * MAX_SKIP_RATE).floor() as u64;
    while state.step < until {
        let batch = data.sample(&state.model, cfg.batch_size, &mut state.rng)?;
        let step = state.step;
        match train_step(state, &batch)? {
            StepOutcome::Trained(r) => {
                if let Some(log) = log.as_mut() {
                    if step % cfg.log_every == 0 {
                        log.append(step, &r)?;
                    }
                }
                if step % 100 == 0 {
                    info!("step {step}: total_G {:.4} total_D {:.4}", r.total_g, r.total_d);
                }
                summary.reports.push((step, r));
            }
            StepOutcome::Skipped(_) => {
                summary.skipped += 1;
                if state.skipped > skip_budget {
                    return Err(Error::Numeric(format!(
                        "{} of {} steps skipped on unsolvable warps (limit {:.0}%)",
                        state.skipped,
                        cfg.total_steps,
                        MAX_SKIP_RATE * 100.0
                    )));
                }
            }
        }
        if let Some(dir) = &outputs.dir {
            if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 {
                save_checkpoint(state, &dir.join(format!("step-{:07}.ckpt", state.step)))?;
            }
        }
    }
    if let Some(log) = log.as_mut() {
        log.flush()?;
    }
    if let Some(dir) = &outputs.dir {
        save_checkpoint(state, &dir.join("final.ckpt"))?;
    }
    Ok(summary)
}
