//! Corpus loading, alignment, identity splits and the procedural toy corpus.

mod cache;
mod manifest;
pub mod preprocess;
mod split;
pub mod toy;

use std::fmt;
use std::str::FromStr;

pub use cache::{load_aligned, read_cache, write_cache};
pub use manifest::{load_raw_sample, read_manifest, RawSample};
pub use preprocess::{compute_crop_box, crop_and_resize, load_landmark_file, preprocess, rotate_to_horizontal_eyes, CropBox};
pub use split::{make_split, DatasetSplit};
pub use toy::synth_toy_dataset;

use crate::error::Error;
use crate::image::ImageTensor;
use crate::landmarks::LandmarkSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Photo,
    Caricature,
}

impl Domain {
    pub const BOTH: [Domain; 2] = [Domain::Photo, Domain::Caricature];

    pub fn other(self) -> Domain {
        match self {
            Domain::Photo => Domain::Caricature,
            Domain::Caricature => Domain::Photo,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Photo => "photo",
            Domain::Caricature => "caricature",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "photo" => Ok(Domain::Photo),
            "caricature" => Ok(Domain::Caricature),
            _ => Err(Error::Data(format!("unknown domain `{s}` (expected photo or caricature)"))),
        }
    }
}

/// An aligned, cropped sample ready for training.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedSample {
    pub image: ImageTensor,
    pub landmarks: LandmarkSet,
    pub identity: usize,
    pub domain: Domain,
}

/// Both domains of a corpus, in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub photos: Vec<PreprocessedSample>,
    pub caricatures: Vec<PreprocessedSample>,
}

impl Corpus {
    pub fn from_samples(samples: impl IntoIterator<Item = PreprocessedSample>) -> Self {
        let mut c = Corpus::default();
        for s in samples {
            c.domain_mut(s.domain).push(s);
        }
        c
    }

    pub fn domain(&self, d: Domain) -> &[PreprocessedSample] {
        match d {
            Domain::Photo => &self.photos,
            Domain::Caricature => &self.caricatures,
        }
    }

    fn domain_mut(&mut self, d: Domain) -> &mut Vec<PreprocessedSample> {
        match d {
            Domain::Photo => &mut self.photos,
            Domain::Caricature => &mut self.caricatures,
        }
    }

    /// Sorted, de-duplicated identities present in either domain.
    pub fn identities(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.photos.iter().chain(&self.caricatures).map(|s| s.identity).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// The samples whose identity is in `ids`.
    pub fn restrict(&self, ids: &[usize]) -> Corpus {
        let keep = |s: &&PreprocessedSample| ids.contains(&s.identity);
        Corpus {
            photos: self.photos.iter().filter(keep).cloned().collect(),
            caricatures: self.caricatures.iter().filter(keep).cloned().collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &PreprocessedSample> {
        self.photos.iter().chain(&self.caricatures)
    }
}

/// Train and test partitions of a corpus by identity.
#[derive(Clone, Debug)]
pub struct SplitCorpus {
    pub train: Corpus,
    pub test: Corpus,
    pub split: DatasetSplit,
}

/// Load (or synthesise) the corpus named by the config and split it by identity.
pub fn load_dataset(cfg: &crate::config::ExperimentConfig) -> crate::error::Result<SplitCorpus> {
    let corpus = match &cfg.data {
        crate::config::DataSource::Toy { identities, per_identity, seed } => Corpus::from_samples(
            synth_toy_dataset(*identities, *per_identity, cfg.image_size, *seed).into_iter().flat_map(|p| [p.photo, p.caricature]),
        ),
        crate::config::DataSource::Cache(dir) => {
            let samples = read_cache(std::path::Path::new(dir))?;
            if let Some(s) = samples.iter().find(|s| s.image.height() != cfg.image_size || s.image.width() != cfg.image_size) {
                return Err(Error::Data(format!(
                    "cached sample is {}x{}, config expects {}",
                    s.image.width(),
                    s.image.height(),
                    cfg.image_size
                )));
            }
            Corpus::from_samples(samples)
        }
    };
    let split = make_split(&corpus.identities(), cfg.split_seed, cfg.train_identities)?;
    let ids = |s: &std::collections::BTreeSet<usize>| s.iter().copied().collect::<Vec<_>>();
    Ok(SplitCorpus {
        train: corpus.restrict(&ids(&split.train_identities)),
        test: corpus.restrict(&ids(&split.test_identities)),
        split,
    })
}
