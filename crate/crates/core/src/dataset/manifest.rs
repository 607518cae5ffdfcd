use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Image-level category tags, as indices into the manifest's category table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryTagSet {
    pub image_id: String,
    pub tags: BTreeSet<usize>,
    pub num_categories: usize,
}

impl CategoryTagSet {
    /// Multi-hot indicator vector of length `num_categories`.
    pub fn indicator(&self) -> Vec<f64> {
        (0..self.num_categories)
            .map(|c| if self.tags.contains(&c) { 1.0 } else { 0.0 })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub image: PathBuf,
    pub scribble: Option<PathBuf>,
    pub tags: Option<CategoryTagSet>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub root: PathBuf,
    pub categories: Vec<String>,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn train(&self) -> impl Iterator<Item = &SampleRecord> {
        self.split(Split::Train)
    }

    /// Serialisable form with paths made relative to `root` where possible.
    pub fn to_file(&self) -> ManifestFile {
        let rel = |p: &Path| {
            p.strip_prefix(&self.root)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        ManifestFile {
            name: self.name.clone(),
            root: self.root.to_string_lossy().into_owned(),
            categories: self.categories.clone(),
            samples: self
                .samples
                .iter()
                .map(|s| SampleEntry {
                    id: s.id.clone(),
                    image: rel(&s.image),
                    scribble: s.scribble.as_deref().map(rel),
                    tags: s.tags.as_ref().map(|t| {
                        t.tags.iter().map(|&i| self.categories[i].clone()).collect()
                    }),
                    split: s.split,
                })
                .collect(),
        }
    }
}

/// On-disk manifest document (JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    #[serde(default)]
    pub name: String,
    /// Directory that sample paths are relative to; itself relative to the
    /// manifest file when not absolute.
    #[serde(default = "default_root")]
    pub root: String,
    #[serde(default)]
    pub categories: Vec<String>,
    pub samples: Vec<SampleEntry>,
}

fn default_root() -> String {
    ".".to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scribble: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
    pub split: Split,
}

impl ManifestFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    /// Resolves paths against `base_dir` and validates every record.
    pub fn resolve(self, base_dir: &Path) -> Result<DatasetManifest> {
        if self.samples.is_empty() {
            return Err(Error::validation("manifest lists no samples"));
        }
        let root = {
            let r = PathBuf::from(&self.root);
            if r.is_absolute() {
                r
            } else {
                base_dir.join(r)
            }
        };
        let mut seen = HashSet::new();
        let mut samples = Vec::with_capacity(self.samples.len());
        for (i, entry) in self.samples.into_iter().enumerate() {
            let record_name = format!("record {i} (id `{}`)", entry.id);
            if entry.id.is_empty() {
                return Err(Error::validation(format!("{record_name}: empty id")));
            }
            if !seen.insert(entry.id.clone()) {
                return Err(Error::validation(format!("duplicate sample id `{}`", entry.id)));
            }
            let image = root.join(&entry.image);
            if !image.is_file() {
                return Err(Error::Load {
                    path: image,
                    reason: format!("image for {record_name} not found"),
                });
            }
            let scribble = match entry.scribble {
                Some(s) => {
                    let p = root.join(s);
                    if !p.is_file() {
                        return Err(Error::Load {
                            path: p,
                            reason: format!("scribble for {record_name} not found"),
                        });
                    }
                    Some(p)
                }
                None if entry.split == Split::Train => {
                    return Err(Error::validation(format!("train {record_name} has no scribble")));
                }
                None => None,
            };
            let tags = match entry.tags {
                Some(names) => {
                    let mut set = BTreeSet::new();
                    for name in names {
                        let idx = self.categories.iter().position(|c| *c == name).ok_or_else(|| {
                            Error::Parse {
                                location: record_name.clone(),
                                reason: format!("unknown category `{name}`"),
                            }
                        })?;
                        set.insert(idx);
                    }
                    Some(CategoryTagSet {
                        image_id: entry.id.clone(),
                        tags: set,
                        num_categories: self.categories.len(),
                    })
                }
                None => None,
            };
            samples.push(SampleRecord {
                id: entry.id,
                image,
                scribble,
                tags,
                split: entry.split,
            });
        }
        Ok(DatasetManifest {
            name: self.name,
            root,
            categories: self.categories,
            samples,
        })
    }
}

/// Reads, parses and validates a JSON manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if text.trim().is_empty() {
        return Err(Error::validation(format!("manifest {} is empty", path.display())));
    }
    let file: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        location: format!("{}:{}:{}", path.display(), e.line(), e.column()),
        reason: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    file.resolve(base)
}
