//! Landmark displacement generators and landmark-pair latent encoders.

use mwgan_autograd::{Activation, Binding, Conv2d, Init, Linear, Mlp, ParamStore, Var};
use rand::Rng;

use crate::config::ExperimentConfig;
use crate::data::Domain;
use crate::error::Result;
use crate::landmarks::LANDMARK_DIM;
use crate::style::{check_shape, domain_index};

const LEAK: f64 = 0.01;
const PROJECTION: usize = 32;
const ENCODER_WIDTHS: [usize; 3] = [128, 128, 64];

/// Map normalised landmark coordinates from `[0, 1]` to roughly `[-2, 2]`
/// before they enter a fully connected stack.
pub(crate) fn landmark_input<'g>(l: Var<'g>) -> Var<'g> {
    l.add_scalar(-0.5).scale(4.0)
}

/// Translation direction of a geometric generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    PhotoToCaricature,
    CaricatureToPhoto,
}

impl Direction {
    pub fn source(self) -> Domain {
        match self {
            Direction::PhotoToCaricature => Domain::Photo,
            Direction::CaricatureToPhoto => Domain::Caricature,
        }
    }

    pub fn target(self) -> Domain {
        self.source().other()
    }

    pub fn from_source(d: Domain) -> Self {
        match d {
            Domain::Photo => Direction::PhotoToCaricature,
            Domain::Caricature => Direction::CaricatureToPhoto,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Direction::PhotoToCaricature => "p2c",
            Direction::CaricatureToPhoto => "c2p",
        }
    }
}

#[derive(Debug, Clone)]
struct DisplacementGenerator {
    convs: [Conv2d; 3],
    content_fc: Linear,
    code_fc: Linear,
    head: Linear,
}

/// Spatial size after a 3x3, stride-2, pad-1 max pool.
fn pooled(n: usize) -> usize {
    (n - 1) / 2 + 1
}

impl DisplacementGenerator {
    fn new(store: &mut ParamStore, name: &str, cfg: &ExperimentConfig, rng: &mut impl Rng) -> Self {
        let ch = cfg.content_channels;
        let mut side = pooled(cfg.image_size / 4);
        let convs = std::array::from_fn(|i| {
            side = pooled(side);
            Conv2d::new(store, &format!("{name}.conv{i}"), ch, ch, 3, 1, 1, true, rng)
        });
        let head_init = if cfg.geo_zero_init { Init::Zeros } else { Init::Normal(1e-3) };
        Self {
            convs,
            content_fc: Linear::new(store, &format!("{name}.content_fc"), ch * side * side, PROJECTION, Init::He, rng),
            code_fc: Linear::new(store, &format!("{name}.code_fc"), cfg.latent_dim, PROJECTION, Init::He, rng),
            head: Linear::new(store, &format!("{name}.head"), 2 * PROJECTION, LANDMARK_DIM, head_init, rng),
        }
    }

    fn forward<'g>(&self, p: &Binding<'g, '_>, content: Var<'g>, z: Var<'g>) -> Var<'g> {
        let mut h = content.max_pool2d(3, 2, 1);
        for c in &self.convs {
            h = c.forward(p, h).leaky_relu(LEAK).max_pool2d(3, 2, 1);
        }
        let a = self.content_fc.forward(p, h.flatten()).leaky_relu(LEAK);
        let b = self.code_fc.forward(p, z).leaky_relu(LEAK);
        self.head.forward(p, p.graph().concat(&[a, b]))
    }
}

/// Both displacement generators and both landmark-pair encoders.
#[derive(Debug, Clone)]
pub struct GeometricNetwork {
    generators: [DisplacementGenerator; 2],
    encoders: [Mlp; 2],
    clamp: Option<f64>,
    content_shape: [usize; 3],
    latent_dim: usize,
}

impl GeometricNetwork {
    pub fn new(store: &mut ParamStore, cfg: &ExperimentConfig, rng: &mut impl Rng) -> Self {
        let generators = [Direction::PhotoToCaricature, Direction::CaricatureToPhoto]
            .map(|d| DisplacementGenerator::new(store, &format!("geo.{}.generator", d.name()), cfg, rng));
        let mut widths = vec![2 * LANDMARK_DIM];
        widths.extend(ENCODER_WIDTHS);
        widths.push(cfg.latent_dim);
        let encoders = Domain::BOTH.map(|d| {
            Mlp::new(store, &format!("geo.{d}.encoder"), &widths, Activation::LeakyRelu(LEAK), Init::Normal((1.0 / 64.0f64).sqrt()), rng)
        });
        let s = cfg.image_size / 4;
        Self { generators, encoders, clamp: cfg.displacement_clamp, content_shape: [cfg.content_channels, s, s], latent_dim: cfg.latent_dim }
    }

    /// Displacements `[N, 34]` (interleaved x, y) from a content code and a
    /// landmark latent code `[N, d_l]`. With a clamp `c` configured the raw
    /// output passes through `c * tanh(x / c)`.
    pub fn generate_displacement<'g>(&self, p: &Binding<'g, '_>, content: Var<'g>, z: Var<'g>, dir: Direction) -> Result<Var<'g>> {
        let [c, h, w] = self.content_shape;
        check_shape("content code", content, &[0, c, h, w])?;
        check_shape("landmark latent code", z, &[0, self.latent_dim])?;
        let raw = self.generators[domain_index(dir.source())].forward(p, content, z);
        Ok(match self.clamp {
            Some(c) => raw.scale(1.0 / c).tanh().scale(c),
            None => raw,
        })
    }

    /// Latent code of the deformation `l_from -> l_to` with `l_to` in
    /// `target` domain; inputs are `[N, 34]`, transformed landmarks first.
    pub fn encode_landmark_latent<'g>(&self, p: &Binding<'g, '_>, l_to: Var<'g>, l_from: Var<'g>, target: Domain) -> Result<Var<'g>> {
        check_shape("landmarks", l_to, &[0, LANDMARK_DIM])?;
        check_shape("landmarks", l_from, &[0, LANDMARK_DIM])?;
        let x = p.graph().concat(&[landmark_input(l_to), landmark_input(l_from)]);
        Ok(self.encoders[domain_index(target)].forward(p, x))
    }
}
