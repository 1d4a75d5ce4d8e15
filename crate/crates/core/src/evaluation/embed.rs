//! Image embedders for Fréchet distances.

use std::path::Path;

use mwgan_autograd::{Binding, Conv2d, Graph, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{ImageTensor, CHANNELS};
use crate::tensorfile::load_tensors;

/// Images embedded per forward pass.
const CHUNK: usize = 16;

/// Which embedder produced a set of features.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EmbedderKind {
    /// Seeded random convolutional features; only comparable with other
    /// numbers from the same seed and dimension.
    Proxy { seed: u64, dim: usize },
    /// Trained weights read from a tensor file.
    Weights(String),
}

/// A strided convolution stack with ReLUs and global average pooling.
#[derive(Clone)]
pub struct Embedder {
    kind: EmbedderKind,
    store: ParamStore,
    convs: Vec<Conv2d>,
    dim: usize,
}

impl Embedder {
    /// Random-weight embedder: three 4x4 stride-2 convolutions
    /// (3 → 16 → 32 → `dim`) with He-initialised weights.
    pub fn proxy(seed: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let widths = [CHANNELS, 16, 32, dim];
        let convs = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv2d::new(&mut store, &format!("conv{i}"), w[0], w[1], 4, 2, 1, true, &mut rng))
            .collect();
        Self { kind: EmbedderKind::Proxy { seed, dim }, store, convs, dim }
    }

    /// Embedder whose layers `conv0, conv1, ...` (each a `.weight`
    /// `[out, in, k, k]` and `.bias` `[out]`) come from a tensor file; every
    /// layer has stride 2 and padding `k / 2 - 1`.
    pub fn from_weights(path: &Path) -> Result<Self> {
        let tensors = load_tensors(path)?;
        let bad = |m: String| Error::Data(format!("{}: {m}", path.display()));
        let get = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t.clone());
        let mut store = ParamStore::new();
        let mut convs = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut in_ch = CHANNELS;
        while let Some(w) = get(&format!("conv{}.weight", convs.len())) {
            let i = convs.len();
            let s = w.shape().to_vec();
            if s.len() != 4 || s[1] != in_ch || s[2] != s[3] || s[2] < 2 {
                return Err(bad(format!("conv{i}.weight has unusable shape {s:?}")));
            }
            let b = get(&format!("conv{i}.bias")).ok_or_else(|| bad(format!("missing conv{i}.bias")))?;
            if b.shape() != [s[0]] {
                return Err(bad(format!("conv{i}.bias has shape {:?}", b.shape())));
            }
            let conv = Conv2d::new(&mut store, &format!("conv{i}"), s[1], s[0], s[2], 2, s[2] / 2 - 1, true, &mut rng);
            store.set(store.id(&format!("conv{i}.weight")).expect("just added"), w);
            store.set(store.id(&format!("conv{i}.bias")).expect("just added"), b);
            convs.push(conv);
            in_ch = s[0];
        }
        if convs.is_empty() {
            return Err(bad("no conv0.weight".into()));
        }
        Ok(Self { kind: EmbedderKind::Weights(path.display().to_string()), store, convs, dim: in_ch })
    }

    pub fn kind(&self) -> &EmbedderKind {
        &self.kind
    }

    /// Name recorded in evaluation reports.
    pub fn id(&self) -> String {
        match &self.kind {
            EmbedderKind::Proxy { seed, dim } => format!("proxy-random-conv(seed={seed},dim={dim})"),
            EmbedderKind::Weights(p) => format!("weights({p})"),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(CHUNK) {
            let (h, w) = (chunk[0].height(), chunk[0].width());
            if let Some(bad) = chunk.iter().find(|i| i.height() != h || i.width() != w) {
                return Err(Error::Shape { what: "embedded image", expected: vec![h, w], got: vec![bad.height(), bad.width()] });
            }
            let refs: Vec<&ImageTensor> = chunk.iter().collect();
            let g = Graph::new();
            let p = Binding::frozen(&g, &self.store);
            let mut x = g.constant(ImageTensor::batch(&refs));
            for c in &self.convs {
                x = c.forward(&p, x).relu();
            }
            let f = x.global_avg_pool().value();
            out.extend(f.data().chunks(self.dim).map(<[f64]>::to_vec));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorfile::save_tensors;

    fn image(seed: u64) -> ImageTensor {
        let mut s = seed;
        ImageTensor::from_fn(32, 32, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
    }

    #[test]
    fn proxy_is_deterministic_with_fixed_dimension() {
        let imgs: Vec<_> = (0..3).map(image).collect();
        let a = Embedder::proxy(7, 24).embed(&imgs).unwrap();
        let b = Embedder::proxy(7, 24).embed(&imgs).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|f| f.len() == 24));
        let twice = Embedder::proxy(7, 24).embed(&[imgs[0].clone(), imgs[0].clone()]).unwrap();
        assert_eq!(twice[0], twice[1]);
        assert_ne!(a[0], a[1]);
        assert_ne!(a, Embedder::proxy(8, 24).embed(&imgs).unwrap());
    }

    #[test]
    fn weights_file_reproduces_the_proxy() {
        let dir = tempfile::tempdir().unwrap();
        let proxy = Embedder::proxy(3, 8);
        let tensors: Vec<_> = proxy.store.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect();
        let path = dir.path().join("w.bin");
        save_tensors(&path, &tensors).unwrap();
        let loaded = Embedder::from_weights(&path).unwrap();
        let imgs = [image(1), image(2)];
        assert_eq!(loaded.embed(&imgs).unwrap(), proxy.embed(&imgs).unwrap());
        assert!(loaded.id().starts_with("weights("));
        assert!(Embedder::from_weights(&dir.path().join("missing.bin")).is_err());
    }
}
