//! Content/style autoencoders for both domains.
//!
//! Each domain has a content encoder (spatial code shared across domains),
//! a style encoder (small vector), and a decoder that injects the style
//! through adaptive instance normalisation.

use mwgan_autograd::{Activation, Binding, Conv2d, Init, Linear, Mlp, ParamStore, Var};
use rand::Rng;

use crate::config::ExperimentConfig;
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::image::CHANNELS;

const RES_BLOCKS: usize = 3;
const MAPPING_WIDTH: usize = 64;

pub(crate) fn domain_index(d: Domain) -> usize {
    match d {
        Domain::Photo => 0,
        Domain::Caricature => 1,
    }
}

pub(crate) fn check_shape(what: &'static str, v: Var<'_>, expected: &[usize]) -> Result<()> {
    let got = v.shape();
    if got.len() != expected.len() || got[1..] != expected[1..] {
        return Err(Error::Shape { what, expected: expected.to_vec(), got });
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResBlock {
    fn new(store: &mut ParamStore, name: &str, ch: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), ch, ch, 3, 1, 1, false, rng),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), ch, ch, 3, 1, 1, false, rng),
        }
    }
}

#[derive(Debug, Clone)]
struct ContentEncoder {
    stem: Conv2d,
    down: [Conv2d; 2],
    blocks: Vec<ResBlock>,
}

impl ContentEncoder {
    fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            stem: Conv2d::new(store, &format!("{name}.stem"), CHANNELS, dim, 7, 1, 3, false, rng),
            down: [
                Conv2d::new(store, &format!("{name}.down0"), dim, 2 * dim, 4, 2, 1, false, rng),
                Conv2d::new(store, &format!("{name}.down1"), 2 * dim, 4 * dim, 4, 2, 1, false, rng),
            ],
            blocks: (0..RES_BLOCKS).map(|i| ResBlock::new(store, &format!("{name}.res{i}"), 4 * dim, rng)).collect(),
        }
    }

    fn forward<'g>(&self, p: &Binding<'g, '_>, x: Var<'g>) -> Var<'g> {
        let mut h = self.stem.forward(p, x).instance_norm().relu();
        for d in &self.down {
            h = d.forward(p, h).instance_norm().relu();
        }
        for b in &self.blocks {
            let r = b.conv1.forward(p, h).instance_norm().relu();
            h = h.add(b.conv2.forward(p, r).instance_norm());
        }
        h
    }
}

#[derive(Debug, Clone)]
struct StyleEncoder {
    stem: Conv2d,
    down: [Conv2d; 2],
    head: Linear,
}

impl StyleEncoder {
    fn new(store: &mut ParamStore, name: &str, dim: usize, style_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            stem: Conv2d::new(store, &format!("{name}.stem"), CHANNELS, dim, 7, 1, 3, true, rng),
            down: [
                Conv2d::new(store, &format!("{name}.down0"), dim, 2 * dim, 4, 2, 1, true, rng),
                Conv2d::new(store, &format!("{name}.down1"), 2 * dim, 4 * dim, 4, 2, 1, true, rng),
            ],
            head: Linear::new(store, &format!("{name}.head"), 4 * dim, style_dim, Init::Normal((1.0 / (4 * dim) as f64).sqrt()), rng),
        }
    }

    fn forward<'g>(&self, p: &Binding<'g, '_>, x: Var<'g>) -> Var<'g> {
        let mut h = self.stem.forward(p, x).relu();
        for d in &self.down {
            h = d.forward(p, h).relu();
        }
        self.head.forward(p, h.global_avg_pool())
    }
}

#[derive(Debug, Clone)]
struct Decoder {
    mapping: Mlp,
    blocks: Vec<ResBlock>,
    up: [Conv2d; 2],
    out: Conv2d,
    channels: usize,
}

impl Decoder {
    fn new(store: &mut ParamStore, name: &str, dim: usize, style_dim: usize, rng: &mut impl Rng) -> Self {
        let ch = 4 * dim;
        let adain = RES_BLOCKS * 2 * 2 * ch;
        Self {
            mapping: Mlp::new(
                store,
                &format!("{name}.mapping"),
                &[style_dim, MAPPING_WIDTH, MAPPING_WIDTH, adain],
                Activation::Relu,
                Init::Normal(0.5 / (MAPPING_WIDTH as f64).sqrt()),
                rng,
            ),
            blocks: (0..RES_BLOCKS).map(|i| ResBlock::new(store, &format!("{name}.res{i}"), ch, rng)).collect(),
            up: [
                Conv2d::new(store, &format!("{name}.up0"), ch, 2 * dim, 3, 1, 1, true, rng),
                Conv2d::new(store, &format!("{name}.up1"), 2 * dim, dim, 3, 1, 1, true, rng),
            ],
            out: Conv2d::new(store, &format!("{name}.out"), dim, CHANNELS, 7, 1, 3, true, rng),
            channels: ch,
        }
    }

    fn forward<'g>(&self, p: &Binding<'g, '_>, content: Var<'g>, style: Var<'g>) -> Var<'g> {
        let params = self.mapping.forward(p, style);
        let c = self.channels;
        // Layout: for each block, for each of its two convs, `[scale | shift]`.
        let adain = |x: Var<'g>, slot: usize| {
            let base = slot * 2 * c;
            x.instance_norm().channel_affine(params.narrow(base, c).add_scalar(1.0), params.narrow(base + c, c))
        };
        let mut h = content;
        for (i, b) in self.blocks.iter().enumerate() {
            let r = adain(b.conv1.forward(p, h), 2 * i).relu();
            h = h.add(adain(b.conv2.forward(p, r), 2 * i + 1));
        }
        for u in &self.up {
            h = u.forward(p, h.upsample2x()).relu();
        }
        self.out.forward(p, h).tanh()
    }
}

/// Encoders and decoders of both domains.
#[derive(Debug, Clone)]
pub struct StyleNetwork {
    content: Vec<ContentEncoder>,
    style: [StyleEncoder; 2],
    decoders: [Decoder; 2],
    image_size: usize,
    content_channels: usize,
    style_dim: usize,
}

impl StyleNetwork {
    pub fn new(store: &mut ParamStore, cfg: &ExperimentConfig, rng: &mut impl Rng) -> Self {
        let dim = cfg.content_channels / 4;
        let content = if cfg.share_content_encoder {
            vec![ContentEncoder::new(store, "style.shared.content", dim, rng)]
        } else {
            Domain::BOTH.iter().map(|d| ContentEncoder::new(store, &format!("style.{d}.content"), dim, rng)).collect()
        };
        let style = Domain::BOTH.map(|d| StyleEncoder::new(store, &format!("style.{d}.style"), dim, cfg.style_dim, rng));
        let decoders = Domain::BOTH.map(|d| Decoder::new(store, &format!("style.{d}.decoder"), dim, cfg.style_dim, rng));
        Self { content, style, decoders, image_size: cfg.image_size, content_channels: cfg.content_channels, style_dim: cfg.style_dim }
    }

    pub fn content_shape(&self) -> [usize; 3] {
        [self.content_channels, self.image_size / 4, self.image_size / 4]
    }

    fn check_image(&self, x: Var<'_>) -> Result<()> {
        check_shape("image", x, &[0, CHANNELS, self.image_size, self.image_size])
    }

    /// `[N, 3, S, S] -> [N, C_c, S/4, S/4]`.
    pub fn encode_content<'g>(&self, p: &Binding<'g, '_>, x: Var<'g>, d: Domain) -> Result<Var<'g>> {
        self.check_image(x)?;
        let enc = &self.content[domain_index(d).min(self.content.len() - 1)];
        Ok(enc.forward(p, x))
    }

    /// `[N, 3, S, S] -> [N, d_s]`.
    pub fn encode_style<'g>(&self, p: &Binding<'g, '_>, x: Var<'g>, d: Domain) -> Result<Var<'g>> {
        self.check_image(x)?;
        Ok(self.style[domain_index(d)].forward(p, x))
    }

    /// Content `[N, C_c, S/4, S/4]` plus style `[N, d_s]` to an image in `[-1, 1]`.
    pub fn decode<'g>(&self, p: &Binding<'g, '_>, c: Var<'g>, s: Var<'g>, d: Domain) -> Result<Var<'g>> {
        let [cc, h, w] = self.content_shape();
        check_shape("content code", c, &[0, cc, h, w])?;
        check_shape("style code", s, &[0, self.style_dim])?;
        Ok(self.decoders[domain_index(d)].forward(p, c, s))
    }

    /// Image autoencoding: decode(content(x), style(x)) within one domain.
    pub fn reconstruct<'g>(&self, p: &Binding<'g, '_>, x: Var<'g>, d: Domain) -> Result<Var<'g>> {
        let c = self.encode_content(p, x, d)?;
        let s = self.encode_style(p, x, d)?;
        self.decode(p, c, s, d)
    }

    /// Re-render `x` from domain `from` in domain `to` with style `s`; the
    /// result keeps the input's geometry.
    pub fn translate<'g>(&self, p: &Binding<'g, '_>, x: Var<'g>, from: Domain, to: Domain, s: Var<'g>) -> Result<Var<'g>> {
        if from == to {
            return Err(Error::Config(format!("translation needs two different domains, got {from} twice")));
        }
        let c = self.encode_content(p, x, from)?;
        self.decode(p, c, s, to)
    }
}

#[cfg(test)]
mod tests {
    use mwgan_autograd::{Graph, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig { image_size: 16, content_channels: 16, style_dim: 4, ..ExperimentConfig::toy() }
    }

    fn setup(cfg: &ExperimentConfig) -> (ParamStore, StyleNetwork) {
        let mut store = ParamStore::new();
        let net = StyleNetwork::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(3));
        (store, net)
    }

    fn images(n: usize, s: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[n, CHANNELS, s, s], |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn shapes() {
        let cfg = small();
        let (store, net) = setup(&cfg);
        let g = Graph::new();
        let p = Binding::new(&g, &store);
        let x = g.constant(images(2, 16, 0));
        for d in Domain::BOTH {
            assert_eq!(net.encode_content(&p, x, d).unwrap().shape(), vec![2, 16, 4, 4]);
            assert_eq!(net.encode_style(&p, x, d).unwrap().shape(), vec![2, 4]);
            let y = net.reconstruct(&p, x, d).unwrap();
            assert_eq!(y.shape(), vec![2, 3, 16, 16]);
            assert!(y.value().data().iter().all(|v| v.abs() <= 1.0));
        }
        assert!(net.encode_style(&p, g.constant(images(2, 8, 0)), Domain::Photo).is_err());
        assert!(net.translate(&p, x, Domain::Photo, Domain::Photo, g.constant(Tensor::zeros(&[2, 4]))).is_err());
    }

    #[test]
    fn shared_content_encoder_has_fewer_parameters() {
        let cfg = small();
        let (separate, _) = setup(&cfg);
        let (shared, _) = setup(&ExperimentConfig { share_content_encoder: true, ..cfg });
        assert!(shared.num_elements() < separate.num_elements());
        assert!(shared.id("style.shared.content.stem.weight").is_some());
    }

    #[test]
    fn style_code_changes_output() {
        let cfg = small();
        let (store, net) = setup(&cfg);
        let g = Graph::new();
        let p = Binding::new(&g, &store);
        let x = g.constant(images(1, 16, 1));
        let a = net.translate(&p, x, Domain::Photo, Domain::Caricature, g.constant(Tensor::full(&[1, 4], 1.0))).unwrap();
        let b = net.translate(&p, x, Domain::Photo, Domain::Caricature, g.constant(Tensor::full(&[1, 4], -1.0))).unwrap();
        let diff = a.value().zip_map(&b.value(), |u, v| (u - v).abs()).mean();
        assert!(diff > 1e-3, "style has no visible effect: {diff}");
    }

    #[test]
    fn decode_gradient_wrt_style_matches_finite_differences() {
        let cfg = small();
        let (store, net) = setup(&cfg);
        let c0 = {
            let g = Graph::new();
            let p = Binding::new(&g, &store);
            net.encode_content(&p, g.constant(images(1, 16, 2)), Domain::Photo).unwrap().value().as_ref().clone()
        };
        let w = images(1, 16, 5);
        let f = |s: &Tensor| -> (f64, Option<Tensor>) {
            let g = Graph::new();
            let p = Binding::new(&g, &store);
            let sv = g.variable(s.clone());
            let y = net.decode(&p, g.constant(c0.clone()), sv, Domain::Caricature).unwrap();
            let loss = y.mul(g.constant(w.clone())).sum();
            let grads = g.backward(loss);
            (loss.item(), grads.get(sv).cloned())
        };
        let s = Tensor::new(&[1, 4], vec![0.3, -0.7, 1.1, 0.2]);
        let analytic = f(&s).1.unwrap();
        let h = 1e-5;
        for i in 0..4 {
            let mut sp = s.clone();
            sp.data_mut()[i] += h;
            let mut sm = s.clone();
            sm.data_mut()[i] -= h;
            let fd = (f(&sp).0 - f(&sm).0) / (2.0 * h);
            let a = analytic.data()[i];
            assert!((fd - a).abs() <= 1e-5 * (1.0 + a.abs()), "component {i}: fd {fd} vs analytic {a}");
        }
    }

    #[test]
    fn initialisation_is_seeded() {
        let cfg = small();
        let (a, _) = setup(&cfg);
        let (b, _) = setup(&cfg);
        for ((_, _, x), (_, _, y)) in a.iter().zip(b.iter()) {
            assert_eq!(x, y);
        }
    }
}
