//! Parameterised layers. A layer owns only [`ParamId`]s; values live in a
//! [`ParamStore`] and are placed on a graph through a [`Binding`].

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::Var;
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    He,
    /// Normal with the given std.
    Normal(f64),
    Zeros,
}

impl Init {
    fn tensor(self, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
        let std = match self {
            Init::He => (2.0 / fan_in as f64).sqrt(),
            Init::Normal(s) => s,
            Init::Zeros => return Tensor::zeros(shape),
        };
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape, |_| dist.sample(rng))
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, init: Init, rng: &mut impl Rng) -> Self {
        let weight = store.add(format!("{name}.weight"), init.tensor(&[out_dim, in_dim], in_dim, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward<'g>(&self, p: &Binding<'g, '_>, x: Var<'g>) -> Var<'g> {
        x.linear(p.var(self.weight), Some(p.var(self.bias)))
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            Init::He.tensor(&[out_ch, in_ch, kernel, kernel], fan_in, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch])));
        Self { weight, bias, stride, pad }
    }

    pub fn forward<'g>(&self, p: &Binding<'g, '_>, x: Var<'g>) -> Var<'g> {
        x.conv2d(p.var(self.weight), self.bias.map(|b| p.var(b)), self.stride, self.pad)
    }
}

/// Stack of linear layers with a shared hidden activation and a linear head.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    pub fn apply<'g>(self, x: Var<'g>) -> Var<'g> {
        match self {
            Activation::Relu => x.relu(),
            Activation::LeakyRelu(a) => x.leaky_relu(a),
        }
    }
}

impl Mlp {
    /// `widths` lists every layer size including input and output.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activation: Activation,
        head_init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(widths.len() >= 2);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let init = if i == last { head_init } else { Init::He };
                Linear::new(store, &format!("{name}.fc{i}"), w[0], w[1], init, rng)
            })
            .collect();
        Self { layers, activation }
    }

    pub fn forward<'g>(&self, p: &Binding<'g, '_>, mut x: Var<'g>) -> Var<'g> {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(p, x);
            if i != last {
                x = self.activation.apply(x);
            }
        }
        x
    }
}
