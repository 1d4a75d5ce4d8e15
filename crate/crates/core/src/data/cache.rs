//! On-disk cache of preprocessed samples: one directory per split holding
//! 8-bit PNGs, normalised landmark sidecars (`.lm`) and an `index.tsv`.

use std::fmt::Write as _;
use std::path::Path;

use super::preprocess::{format_landmarks, load_normalized_landmarks};
use super::PreprocessedSample;
use crate::error::{Error, Result};
use crate::image::ImageTensor;

const INDEX: &str = "index.tsv";

pub fn write_cache(dir: &Path, samples: &[PreprocessedSample]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::from("# file\tidentity\tdomain\n");
    for (k, s) in samples.iter().enumerate() {
        let stem = format!("{}_{:05}_{k:06}", s.domain, s.identity);
        s.image.save_png(&dir.join(format!("{stem}.png")))?;
        let lm = dir.join(format!("{stem}.lm"));
        std::fs::write(&lm, format_landmarks(&s.landmarks)).map_err(|e| Error::io(&lm, e))?;
        writeln!(index, "{stem}\t{}\t{}", s.identity, s.domain).unwrap();
    }
    let p = dir.join(INDEX);
    std::fs::write(&p, index).map_err(|e| Error::io(&p, e))
}

/// An aligned image and its `.lm` sidecar (same stem), as written to the cache.
pub fn load_aligned(png: &Path) -> Result<(ImageTensor, crate::landmarks::LandmarkSet)> {
    let lm = png.with_extension("lm");
    if !lm.is_file() {
        return Err(Error::Data(format!("missing landmarks for {} (expected {})", png.display(), lm.display())));
    }
    Ok((ImageTensor::load_png(png)?, load_normalized_landmarks(&lm)?))
}

pub fn read_cache(dir: &Path) -> Result<Vec<PreprocessedSample>> {
    let p = dir.join(INDEX);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { path: p.clone(), line: i + 1, msg };
        let fields: Vec<&str> = line.split('\t').collect();
        let [stem, id, dom] = fields[..] else {
            return Err(err("expected 3 tab-separated fields".into()));
        };
        out.push(PreprocessedSample {
            image: ImageTensor::load_png(&dir.join(format!("{stem}.png")))?,
            landmarks: load_normalized_landmarks(&dir.join(format!("{stem}.lm")))?,
            identity: id.parse().map_err(|_| err(format!("bad identity `{id}`")))?,
            domain: dom.parse().map_err(|e: Error| err(e.to_string()))?,
        });
    }
    Ok(out)
}
