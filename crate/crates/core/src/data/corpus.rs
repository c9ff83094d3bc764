use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Error, Result};

/// One line of a JSON-lines manifest.
///
/// A line carrying `classes` is the header and must come first; every other
/// line describes one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifestLine {
    Header { classes: Vec<String> },
    Image(ManifestRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

#[derive(Debug, Clone)]
enum Source {
    File(PathBuf),
    Memory(Array3<f64>),
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub id: String,
    pub label: Option<usize>,
    source: Source,
}

/// An ordered, labeled image collection. Images on disk are decoded lazily.
#[derive(Debug, Clone)]
pub struct Corpus {
    manifest_path: Option<PathBuf>,
    class_names: Vec<String>,
    entries: Vec<CorpusEntry>,
}

impl Corpus {
    /// Reads a JSON-lines manifest. Relative paths resolve against the
    /// manifest's directory.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let file =
            std::fs::File::open(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut class_names = Vec::new();
        let mut entries = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(manifest_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestLine = serde_json::from_str(&line).map_err(|e| {
                Error::Corpus(format!(
                    "{}:{}: {e}",
                    manifest_path.display(),
                    lineno + 1
                ))
            })?;
            match parsed {
                ManifestLine::Header { classes } => {
                    if !entries.is_empty() || !class_names.is_empty() {
                        return Err(Error::Corpus(format!(
                            "{}:{}: class header must be the first line",
                            manifest_path.display(),
                            lineno + 1
                        )));
                    }
                    class_names = classes;
                }
                ManifestLine::Image(rec) => {
                    let path = base.join(&rec.path);
                    if !path.exists() {
                        return Err(Error::MissingFile(path));
                    }
                    entries.push(CorpusEntry {
                        id: rec.id,
                        label: rec.label,
                        source: Source::File(path),
                    });
                }
            }
        }
        let corpus = Corpus {
            manifest_path: Some(manifest_path.to_path_buf()),
            class_names,
            entries,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Builds an in-memory corpus; labels are taken from the images.
    pub fn from_images(class_names: Vec<String>, images: Vec<Image>) -> Result<Self> {
        let entries = images
            .into_iter()
            .map(|img| CorpusEntry {
                id: img.id,
                label: img.label,
                source: Source::Memory(img.pixels),
            })
            .collect();
        let corpus = Corpus {
            manifest_path: None,
            class_names,
            entries,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Corpus("corpus is empty".into()));
        }
        let mut names = HashSet::new();
        for name in &self.class_names {
            if !names.insert(name.as_str()) {
                return Err(Error::Corpus(format!("duplicate class name {name:?}")));
            }
        }
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::Corpus(format!("duplicate image id {:?}", e.id)));
            }
            if let Some(label) = e.label {
                if label >= self.class_names.len() {
                    return Err(Error::Corpus(format!(
                        "label {label} of image {:?} out of range for {} classes",
                        e.id,
                        self.class_names.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> Option<&Path> {
        self.manifest_path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    pub fn is_labeled(&self) -> bool {
        self.entries.iter().any(|e| e.label.is_some())
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    /// Decodes image `index`. Pixels are finite and in `[0, 1]`.
    pub fn image(&self, index: usize) -> Result<Image> {
        let entry = self
            .entries
            .get(index)
            .ok_or_else(|| Error::Corpus(format!("image index {index} out of range")))?;
        let mut img = match &entry.source {
            Source::File(path) => Image::load(entry.id.clone(), path)?,
            Source::Memory(pixels) => Image::new(entry.id.clone(), pixels.clone()),
        };
        if !img.is_finite() {
            return Err(Error::Corpus(format!("image {:?} has non-finite pixels", entry.id)));
        }
        img.label = entry.label;
        Ok(img)
    }

    /// Iterates images in manifest order.
    pub fn images(&self) -> impl Iterator<Item = Result<Image>> + '_ {
        (0..self.len()).map(move |i| self.image(i))
    }

    pub fn load_all(&self) -> Result<Vec<Image>> {
        self.images().collect()
    }

    /// Stable identifier of the corpus contents for cache keys: the ordered
    /// id list plus labels.
    pub fn content_id(&self) -> String {
        let ids: Vec<(&str, Option<usize>)> = self
            .entries
            .iter()
            .map(|e| (e.id.as_str(), e.label))
            .collect();
        crate::fsutil::hash_json(&(&self.class_names, ids))
    }

    /// Per-channel mean over every pixel of every image.
    pub fn mean_pixel(&self) -> Result<Vec<f64>> {
        let mut sums: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for img in self.images() {
            let img = img?;
            let (h, w, c) = img.shape();
            if sums.is_empty() {
                sums = vec![0.0; c];
            }
            for ch in 0..c.min(sums.len()) {
                sums[ch] += img.pixels.index_axis(ndarray::Axis(2), ch).sum();
            }
            count += h * w;
        }
        Ok(sums.into_iter().map(|s| s / count.max(1) as f64).collect())
    }

    /// Writes PNGs and a manifest (header line first) into `dir`.
    pub fn write_manifest(dir: &Path, class_names: &[String], images: &[Image]) -> Result<PathBuf> {
        let img_dir = dir.join("images");
        std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&ManifestLine::Header {
            classes: class_names.to_vec(),
        })?);
        out.push('\n');
        for img in images {
            let rel = format!("images/{}.png", img.id);
            img.save_png(&dir.join(&rel))?;
            out.push_str(&serde_json::to_string(&ManifestLine::Image(ManifestRecord {
                id: img.id.clone(),
                path: rel,
                label: img.label,
            }))?);
            out.push('\n');
        }
        let manifest = dir.join("manifest.jsonl");
        crate::fsutil::write_atomic(&manifest, out.as_bytes())?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(id: &str, v: f64) -> Image {
        Image::new(id, Array3::from_elem((2, 2, 3), v))
    }

    #[test]
    fn manifest_of_three_files_keeps_order() {
        let dir = tempfile::tempdir().unwrap();
        let classes = vec!["a".to_string(), "b".to_string()];
        let images = vec![
            img("z", 0.0).with_label(1),
            img("a", 1.0).with_label(0),
            img("m", 0.0),
        ];
        let manifest = Corpus::write_manifest(dir.path(), &classes, &images).unwrap();
        let corpus = Corpus::load(&manifest).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.ids(), vec!["z", "a", "m"]);
        let loaded = corpus.load_all().unwrap();
        assert_eq!(loaded[0].label, Some(1));
        assert_eq!(loaded[2].label, None);
        assert_eq!(loaded[1].pixels, images[1].pixels);
    }

    #[test]
    fn missing_file_error_names_it() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.jsonl");
        std::fs::write(
            &manifest,
            "{\"classes\":[\"a\"]}\n{\"id\":\"x\",\"path\":\"gone.png\"}\n",
        )
        .unwrap();
        let err = Corpus::load(&manifest).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
        assert!(err.to_string().contains("gone.png"));
    }

    #[test]
    fn label_out_of_range_and_duplicates_rejected() {
        let classes = vec!["a".to_string()];
        let err = Corpus::from_images(classes.clone(), vec![img("x", 0.0).with_label(1)]).unwrap_err();
        assert!(err.to_string().contains("out of range"));
        let err = Corpus::from_images(classes, vec![img("x", 0.0), img("x", 0.0)]).unwrap_err();
        assert!(err.to_string().contains("duplicate image id"));
        let err =
            Corpus::from_images(vec!["a".into(), "a".into()], vec![img("x", 0.0)]).unwrap_err();
        assert!(err.to_string().contains("duplicate class"));
    }

    #[test]
    fn mean_pixel_averages_all_images() {
        let corpus = Corpus::from_images(vec![], vec![img("a", 0.0), img("b", 1.0)]).unwrap();
        assert_eq!(corpus.mean_pixel().unwrap(), vec![0.5, 0.5, 0.5]);
    }
}
