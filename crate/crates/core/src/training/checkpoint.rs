//! Single-file checkpoints.
//!
//! Layout: the magic bytes, a little-endian `u64` manifest length, the JSON
//! manifest, then one named tensor blob per parameter and optimiser moment
//! in manifest order.

use std::io::{Read, Write};
use std::path::Path;

use mwgan_autograd::{Adam, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, TrainState};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::tensorfile::{write_blob, BlobReader};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MWGANCK1";

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: u32,
    step: u64,
    skipped: u64,
    config_hash: String,
    config: String,
    identities: Vec<usize>,
    rng: RngState,
    adam_steps: [u64; 2],
    blobs: Vec<String>,
}

/// Every tensor of the state, with its blob name, in file order.
fn tensors(state: &TrainState) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    for (prefix, store, opt) in [("gen", &state.model.gen, &state.opt_gen), ("disc", &state.model.disc, &state.opt_disc)] {
        for (_, name, t) in store.iter() {
            out.push((format!("{prefix}/{name}"), t));
        }
        for (kind, moments) in [("m", opt.first_moments()), ("v", opt.second_moments())] {
            for ((_, name, _), t) in store.iter().zip(moments) {
                out.push((format!("adam.{prefix}.{kind}/{name}"), t));
            }
        }
    }
    out
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let blobs = tensors(state);
    let manifest = Manifest {
        format: 1,
        step: state.step,
        skipped: state.skipped,
        config_hash: state.model.config.hash(),
        config: state.model.config.to_text(),
        identities: state.model.identities.clone(),
        rng: RngState {
            seed: hex::encode(state.rng.get_seed()),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos().to_string(),
        },
        adam_steps: [state.opt_gen.steps(), state.opt_disc.steps()],
        blobs: blobs.iter().map(|(n, _)| n.clone()).collect(),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (name, t) in blobs {
        write_blob(&mut buf, &name, t);
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn fill(store: &mut ParamStore, prefix: &str, blobs: &mut std::collections::HashMap<String, Tensor>, bad: &impl Fn(String) -> Error) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let key = format!("{prefix}/{}", store.name(id));
        let t = blobs.remove(&key).ok_or_else(|| bad(format!("missing blob {key}")))?;
        if t.shape() != store.get(id).shape() {
            return Err(bad(format!("blob {key} has shape {:?}, expected {:?}", t.shape(), store.get(id).shape())));
        }
        store.set(id, t);
    }
    Ok(())
}

fn moments(store: &ParamStore, key: &str, blobs: &mut std::collections::HashMap<String, Tensor>, bad: &impl Fn(String) -> Error) -> Result<Vec<Tensor>> {
    store
        .iter()
        .map(|(_, name, _)| {
            let k = format!("{key}/{name}");
            blobs.remove(&k).ok_or_else(|| bad(format!("missing blob {k}")))
        })
        .collect()
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Checkpoint { path: path.to_path_buf(), msg };
    let mut r = BlobReader::new(&bytes);
    if r.take(8) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let len = r.u64().ok_or_else(|| bad("truncated header".into()))? as usize;
    let json = r.take(len).ok_or_else(|| bad("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.format != 1 {
        return Err(bad(format!("unsupported format version {}", manifest.format)));
    }
    let config = ExperimentConfig::parse(&manifest.config)?;
    if config.hash() != manifest.config_hash {
        return Err(bad("config hash does not match the stored config".into()));
    }

    let mut blobs = std::collections::HashMap::new();
    for name in &manifest.blobs {
        let (got, t) = r.blob().ok_or_else(|| bad(format!("truncated or malformed blob {name}")))?;
        if &got != name {
            return Err(bad(format!("blob {got} found where manifest lists {name}")));
        }
        blobs.insert(got, t);
    }
    if !r.at_end() {
        return Err(bad("trailing bytes after the last blob".into()));
    }

    let mut model = Model::new(&config, &manifest.identities)?;
    fill(&mut model.gen, "gen", &mut blobs, &bad)?;
    fill(&mut model.disc, "disc", &mut blobs, &bad)?;
    let opt = |store: &ParamStore, prefix: &str, steps: u64, blobs: &mut std::collections::HashMap<String, Tensor>| -> Result<Adam> {
        let m = moments(store, &format!("adam.{prefix}.m"), blobs, &bad)?;
        let v = moments(store, &format!("adam.{prefix}.v"), blobs, &bad)?;
        Adam::from_state(store, config.adam_beta1, config.adam_beta2, steps, m, v).map_err(|e| bad(e.to_string()))
    };
    let opt_gen = opt(&model.gen, "gen", manifest.adam_steps[0], &mut blobs)?;
    let opt_disc = opt(&model.disc, "disc", manifest.adam_steps[1], &mut blobs)?;
    if let Some(extra) = blobs.keys().next() {
        return Err(bad(format!("unexpected blob {extra}")));
    }

    let seed: [u8; 32] = hex::decode(&manifest.rng.seed)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| bad("malformed RNG seed".into()))?;
    let word_pos: u128 = manifest.rng.word_pos.parse().map_err(|_| bad("malformed RNG position".into()))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(manifest.rng.stream);
    rng.set_word_pos(word_pos);

    Ok(TrainState { model, opt_gen, opt_disc, step: manifest.step, skipped: manifest.skipped, rng })
}
