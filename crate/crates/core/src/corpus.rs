//! Class lists, descriptor files and dataset manifests.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Category {
    pub name: String,
    pub index: usize,
}

/// Ordered classnames of one benchmark.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategorySet {
    categories: Vec<Category>,
    pub concept: Option<String>,
}

impl CategorySet {
    /// Builds a set from names in canonical order. Names are trimmed; blank
    /// names are skipped.
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let mut categories = Vec::new();
        for name in names {
            let name = name.as_ref().trim();
            if name.is_empty() {
                continue;
            }
            if !seen.insert(name.to_owned()) {
                return Err(Error::DuplicateClass(name.to_owned()));
            }
            categories.push(Category {
                name: name.to_owned(),
                index: categories.len(),
            });
        }
        Ok(Self {
            categories,
            concept: None,
        })
    }

    pub fn with_concept(mut self, concept: Option<String>) -> Self {
        self.concept = concept;
        self
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Category> {
        self.categories.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(|c| c.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.name == name)
    }

    pub fn get(&self, index: usize) -> Option<&Category> {
        self.categories.get(index)
    }
}

pub fn load_category_set(path: impl AsRef<Path>) -> Result<CategorySet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let set = CategorySet::from_names(text.lines())?;
    if set.is_empty() {
        return Err(Error::EmptyClassList(path.to_owned()));
    }
    Ok(set)
}

pub fn save_category_set(path: impl AsRef<Path>, set: &CategorySet) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for name in set.names() {
        text.push_str(name);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDescriptors {
    pub class: String,
    pub descriptors: Vec<String>,
}

/// Per-class descriptor lists, kept in the bound category order.
///
/// Duplicate descriptors within a class are preserved as loaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescriptorSet {
    entries: Vec<ClassDescriptors>,
}

impl DescriptorSet {
    /// Validates `entries` against `categories` and sorts them into category
    /// order.
    pub fn new(entries: Vec<ClassDescriptors>, categories: &CategorySet) -> Result<Self> {
        let mut indexed = Vec::with_capacity(entries.len());
        let mut seen = HashSet::new();
        for entry in entries {
            let index = categories
                .index_of(&entry.class)
                .ok_or_else(|| Error::UnknownClass(entry.class.clone()))?;
            if !seen.insert(index) {
                return Err(Error::DuplicateClass(entry.class));
            }
            if entry.descriptors.is_empty() {
                return Err(Error::EmptyDescriptorList(entry.class));
            }
            if entry.descriptors.iter().any(|d| d.trim().is_empty()) {
                return Err(Error::EmptyDescriptor(entry.class));
            }
            indexed.push((index, entry));
        }
        indexed.sort_by_key(|(i, _)| *i);
        Ok(Self {
            entries: indexed.into_iter().map(|(_, e)| e).collect(),
        })
    }

    pub(crate) fn from_ordered_unchecked(entries: Vec<ClassDescriptors>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[ClassDescriptors] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, class: &str) -> Option<&[String]> {
        self.entries
            .iter()
            .find(|e| e.class == class)
            .map(|e| e.descriptors.as_slice())
    }

    /// Every descriptor of every class in order, duplicates included.
    pub fn pool(&self) -> Vec<&str> {
        self.entries
            .iter()
            .flat_map(|e| e.descriptors.iter().map(String::as_str))
            .collect()
    }

    /// The DCLIP-style JSON object, keys in category order.
    pub fn to_json(&self) -> serde_json::Value {
        let map = self
            .entries
            .iter()
            .map(|e| (e.class.clone(), serde_json::json!(e.descriptors)))
            .collect::<serde_json::Map<_, _>>();
        serde_json::Value::Object(map)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_json()).expect("json of strings");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn load_descriptor_set(path: impl AsRef<Path>, categories: &CategorySet) -> Result<DescriptorSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_descriptor_set(&text, categories).map_err(|e| match e {
        Error::Malformed { message, .. } => Error::Malformed {
            path: path.to_owned(),
            message,
        },
        other => other,
    })
}

pub fn parse_descriptor_set(text: &str, categories: &CategorySet) -> Result<DescriptorSet> {
    let malformed = |message: String| Error::Malformed {
        path: PathBuf::from("<descriptors>"),
        message,
    };
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let object = value
        .as_object()
        .ok_or_else(|| malformed("top level must be an object".into()))?;
    let mut entries = Vec::with_capacity(object.len());
    for (class, list) in object {
        let list = list
            .as_array()
            .ok_or_else(|| malformed(format!("value for {class:?} must be an array")))?;
        let descriptors = list
            .iter()
            .map(|d| {
                d.as_str()
                    .map(str::to_owned)
                    .ok_or_else(|| malformed(format!("non-string descriptor for {class:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        entries.push(ClassDescriptors {
            class: class.clone(),
            descriptors,
        });
    }
    DescriptorSet::new(entries, categories)
}

/// `round(num / den)` with halves rounded up, floored at 1.
pub(crate) fn round_half_up_min1(num: usize, den: usize) -> usize {
    debug_assert!(den > 0);
    ((2 * num + den) / (2 * den)).max(1)
}

/// Mean number of descriptors per class, rounded half up, at least 1.
pub fn mean_descriptor_count(set: &DescriptorSet) -> usize {
    let total: usize = set.entries.iter().map(|e| e.descriptors.len()).sum();
    round_half_up_min1(total, set.entries.len().max(1))
}

/// Binds rows of an image embedding file to ground-truth class indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub image_embedding_path: PathBuf,
    pub labels: Vec<usize>,
}

impl DatasetManifest {
    /// Loads a manifest; a relative `image_embedding_path` is resolved
    /// against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Malformed {
                path: path.to_owned(),
                message: e.to_string(),
            })?;
        if manifest.image_embedding_path.is_relative() {
            if let Some(dir) = path.parent() {
                manifest.image_embedding_path = dir.join(&manifest.image_embedding_path);
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self, categories: &CategorySet, rows: usize) -> Result<()> {
        if self.labels.len() != rows {
            return Err(Error::LabelCountMismatch {
                name: self.name.clone(),
                labels: self.labels.len(),
                rows,
            });
        }
        if let Some((row, &label)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= categories.len())
        {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                classes: categories.len(),
            });
        }
        Ok(())
    }
}
