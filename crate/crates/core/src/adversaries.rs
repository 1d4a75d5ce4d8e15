//! Discriminators and identity classifiers.

use mwgan_autograd::{Activation, Binding, Conv2d, Init, Linear, Mlp, ParamStore, Var};
use rand::Rng;

use crate::config::ExperimentConfig;
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::geometric::landmark_input;
use crate::image::CHANNELS;
use crate::landmarks::LANDMARK_DIM;
use crate::style::{check_shape, domain_index};

const LEAK: f64 = 0.2;
const IMAGE_BLOCKS: usize = 6;
const ID_IMAGE_BLOCKS: usize = 4;

/// Which latent space a code-distribution critic watches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeSpace {
    StylePhoto,
    StyleCaricature,
    LatentP2c,
    LatentC2p,
}

impl CodeSpace {
    pub const ALL: [CodeSpace; 4] = [CodeSpace::StylePhoto, CodeSpace::StyleCaricature, CodeSpace::LatentP2c, CodeSpace::LatentC2p];

    pub fn name(self) -> &'static str {
        match self {
            CodeSpace::StylePhoto => "style_photo",
            CodeSpace::StyleCaricature => "style_caricature",
            CodeSpace::LatentP2c => "latent_p2c",
            CodeSpace::LatentC2p => "latent_c2p",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Strided 4x4 conv stack followed by a linear layer.
#[derive(Debug, Clone)]
struct ConvCritic {
    convs: Vec<Conv2d>,
    head: Linear,
}

impl ConvCritic {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        size: usize,
        base: usize,
        blocks: usize,
        pad: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let (mut ch, mut side) = (CHANNELS, size);
        let convs = (0..blocks)
            .map(|i| {
                let out = base << i.min(2);
                let c = Conv2d::new(store, &format!("{name}.conv{i}"), ch, out, 4, 2, pad, true, rng);
                ch = out;
                side = (side + 2 * pad - 4) / 2 + 1;
                c
            })
            .collect();
        let head = Linear::new(store, &format!("{name}.head"), ch * side * side, outputs, Init::Normal((1.0 / (ch * side * side) as f64).sqrt()), rng);
        Self { convs, head }
    }

    fn forward<'g>(&self, p: &Binding<'g, '_>, x: Var<'g>) -> Var<'g> {
        let mut h = x;
        for c in &self.convs {
            h = c.forward(p, h).leaky_relu(LEAK);
        }
        self.head.forward(p, h.flatten())
    }
}

fn mlp(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Mlp {
    let fan_in = widths[widths.len() - 2];
    Mlp::new(store, name, widths, Activation::LeakyRelu(LEAK), Init::Normal((1.0 / fan_in as f64).sqrt()), rng)
}

/// Every critic and classifier, all stored in one parameter collection.
#[derive(Debug, Clone)]
pub struct Adversaries {
    image: [ConvCritic; 2],
    landmark: [Mlp; 2],
    code: [Mlp; 4],
    id_image: ConvCritic,
    id_landmark: Mlp,
    image_size: usize,
    style_dim: usize,
    latent_dim: usize,
    num_identities: usize,
}

impl Adversaries {
    pub fn new(store: &mut ParamStore, cfg: &ExperimentConfig, num_identities: usize, rng: &mut impl Rng) -> Self {
        let base = cfg.content_channels / 4;
        let size = cfg.image_size;
        let image = Domain::BOTH.map(|d| ConvCritic::new(store, &format!("adv.{d}.image"), size, base, IMAGE_BLOCKS, 2, 1, rng));
        let landmark = Domain::BOTH.map(|d| mlp(store, &format!("adv.{d}.landmark"), &[LANDMARK_DIM, 128, 128, 128, 128, 64, 1], rng));
        let code = CodeSpace::ALL.map(|s| {
            let dim = match s {
                CodeSpace::StylePhoto | CodeSpace::StyleCaricature => cfg.style_dim,
                _ => cfg.latent_dim,
            };
            mlp(store, &format!("adv.code.{}", s.name()), &[dim, 64, 64, 64, 64, 64, 1], rng)
        });
        let id_image = ConvCritic::new(store, "adv.identity.image", size, base, ID_IMAGE_BLOCKS, 1, num_identities, rng);
        let id_landmark = mlp(store, "adv.identity.landmark", &[LANDMARK_DIM, 128, 128, 64, num_identities], rng);
        Self { image, landmark, code, id_image, id_landmark, image_size: size, style_dim: cfg.style_dim, latent_dim: cfg.latent_dim, num_identities }
    }

    pub fn num_identities(&self) -> usize {
        self.num_identities
    }

    fn check_image(&self, x: Var<'_>) -> Result<()> {
        check_shape("image", x, &[0, CHANNELS, self.image_size, self.image_size])
    }

    /// Realism score `[N, 1]` of images in domain `d`.
    pub fn score_image<'g>(&self, p: &Binding<'g, '_>, x: Var<'g>, d: Domain) -> Result<Var<'g>> {
        self.check_image(x)?;
        Ok(self.image[domain_index(d)].forward(p, x))
    }

    /// Realism score `[N, 1]` of landmark sets `[N, 34]` in domain `d`.
    pub fn score_landmarks<'g>(&self, p: &Binding<'g, '_>, l: Var<'g>, d: Domain) -> Result<Var<'g>> {
        check_shape("landmarks", l, &[0, LANDMARK_DIM])?;
        Ok(self.landmark[domain_index(d)].forward(p, landmark_input(l)))
    }

    /// Gaussianity score `[N, 1]` of codes in `space`.
    pub fn score_latent<'g>(&self, p: &Binding<'g, '_>, z: Var<'g>, space: CodeSpace) -> Result<Var<'g>> {
        let dim = match space {
            CodeSpace::StylePhoto | CodeSpace::StyleCaricature => self.style_dim,
            _ => self.latent_dim,
        };
        let got = z.shape();
        if got.len() != 2 || got[1] != dim {
            return Err(Error::Shape { what: "latent code", expected: vec![0, dim], got });
        }
        Ok(self.code[space.index()].forward(p, z))
    }

    /// Log-probabilities `[N, K]` over the training identities.
    pub fn identity_log_prob_image<'g>(&self, p: &Binding<'g, '_>, x: Var<'g>) -> Result<Var<'g>> {
        self.check_image(x)?;
        Ok(self.id_image.forward(p, x).log_softmax())
    }

    pub fn identity_log_prob_landmarks<'g>(&self, p: &Binding<'g, '_>, l: Var<'g>) -> Result<Var<'g>> {
        check_shape("landmarks", l, &[0, LANDMARK_DIM])?;
        Ok(self.id_landmark.forward(p, landmark_input(l)).log_softmax())
    }
}
