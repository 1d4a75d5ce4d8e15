use std::path::{Path, PathBuf};

use super::preprocess::{load_landmark_file, preprocess};
use super::{Domain, PreprocessedSample};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// One manifest record: an image, its landmark file, and who it depicts.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSample {
    pub image_path: PathBuf,
    pub landmark_path: PathBuf,
    pub identity: usize,
    pub domain: Domain,
}

/// Read a tab-separated manifest (`image  landmarks  identity  domain`).
/// Relative paths resolve against the manifest's directory; blank lines and
/// `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<RawSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [img, lm, id, dom] = fields[..] else {
            return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
        };
        out.push(RawSample {
            image_path: base.join(img),
            landmark_path: base.join(lm),
            identity: id.trim().parse().map_err(|_| err(format!("identity `{id}` is not a non-negative integer")))?,
            domain: dom.trim().parse().map_err(|e: Error| err(e.to_string()))?,
        });
    }
    Ok(out)
}

/// Load, align and crop one raw sample to `size x size`.
pub fn load_raw_sample(raw: &RawSample, size: usize) -> Result<PreprocessedSample> {
    let image = ImageTensor::load_png(&raw.image_path)?;
    let landmarks = load_landmark_file(&raw.landmark_path, image.width(), image.height())?;
    let (image, landmarks) = preprocess(&image, &landmarks, size)?;
    Ok(PreprocessedSample { image, landmarks, identity: raw.identity, domain: raw.domain })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_parses_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        std::fs::write(&p, "# header\na.png\ta.txt\t3\tphoto\n\nb.png\tb.txt\t3\tcaricature\n").unwrap();
        let m = read_manifest(&p).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].image_path, dir.path().join("a.png"));
        assert_eq!((m[1].identity, m[1].domain), (3, Domain::Caricature));

        std::fs::write(&p, "a.png\ta.txt\t3\tsketch\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Parse { line: 1, .. })));
        std::fs::write(&p, "a.png a.txt 3 photo\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Parse { line: 1, .. })));
    }
}
