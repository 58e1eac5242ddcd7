//! Labeled image catalog.
//!
//! The catalog is loaded once from a JSON array of records and is immutable
//! afterwards: there is no insert or upload path. Everything downstream
//! (scoring, profiling, content-based recommendation) resolves image ids and
//! tags through it.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type ImageId = String;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog is not valid JSON: {0}")]
    Json(#[source] serde_json::Error),
    #[error("catalog must be a JSON array of records")]
    NotAnArray,
    #[error("record {index}: {message}")]
    Record { index: usize, message: String },
    #[error("catalog must be non-empty")]
    Empty,
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("record {index} ({id:?}) has an empty tag set")]
    EmptyTags { index: usize, id: String },
    #[error("tag {tag:?} of image {image:?} is not in the vocabulary")]
    Inconsistent { image: String, tag: String },
    #[error("i/o error reading catalog: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    uri: String,
    tags: Vec<String>,
    creator: String,
    #[serde(default)]
    title: Option<String>,
}

/// One curated image with its topic labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ImageRecord {
    pub id: ImageId,
    pub uri: String,
    pub tags: BTreeSet<String>,
    pub creator: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
}

impl ImageRecord {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }
}

#[derive(Debug, Clone)]
pub struct Catalog {
    images: Vec<ImageRecord>,
    index: HashMap<ImageId, usize>,
    vocabulary: Vec<String>,
    creators: BTreeSet<String>,
    /// Document the catalog was parsed from.
    source: Vec<u8>,
}

fn normalize_tag(tag: &str) -> String {
    tag.trim().to_lowercase()
}

impl Catalog {
    /// Parses and validates a catalog document.
    ///
    /// Records keep their file order; the tag vocabulary is the sorted union
    /// of all tags, so identical input bytes always give the same vocabulary.
    pub fn load<R: Read>(mut source: R) -> Result<Self, CatalogError> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        Self::from_slice(&bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CatalogError> {
        let doc: serde_json::Value = serde_json::from_slice(bytes).map_err(CatalogError::Json)?;
        let serde_json::Value::Array(items) = doc else {
            return Err(CatalogError::NotAnArray);
        };
        let mut records = Vec::with_capacity(items.len());
        for (index, item) in items.into_iter().enumerate() {
            let raw: RawRecord = serde_json::from_value(item).map_err(|e| CatalogError::Record {
                index,
                message: e.to_string(),
            })?;
            let mut tags = BTreeSet::new();
            for tag in &raw.tags {
                let tag = normalize_tag(tag);
                if tag.is_empty() {
                    return Err(CatalogError::Record {
                        index,
                        message: "tags must be non-empty strings".into(),
                    });
                }
                tags.insert(tag);
            }
            if tags.is_empty() {
                return Err(CatalogError::EmptyTags { index, id: raw.id });
            }
            if raw.id.is_empty() {
                return Err(CatalogError::Record {
                    index,
                    message: "id must be non-empty".into(),
                });
            }
            records.push(ImageRecord {
                id: raw.id,
                uri: raw.uri,
                tags,
                creator: raw.creator,
                title: raw.title,
            });
        }
        let mut catalog = Self::from_records(records)?;
        catalog.source = bytes.to_vec();
        Ok(catalog)
    }

    pub fn from_records(images: Vec<ImageRecord>) -> Result<Self, CatalogError> {
        if images.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut index = HashMap::with_capacity(images.len());
        let mut vocab = BTreeSet::new();
        let mut creators = BTreeSet::new();
        for (i, image) in images.iter().enumerate() {
            if image.tags.is_empty() {
                return Err(CatalogError::EmptyTags {
                    index: i,
                    id: image.id.clone(),
                });
            }
            if index.insert(image.id.clone(), i).is_some() {
                return Err(CatalogError::DuplicateId(image.id.clone()));
            }
            vocab.extend(image.tags.iter().cloned());
            creators.insert(image.creator.clone());
        }
        let source = serde_json::to_vec(&images).expect("records serialize");
        Ok(Self {
            images,
            index,
            vocabulary: vocab.into_iter().collect(),
            creators,
            source,
        })
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.index.get(id).map(|&i| &self.images[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Lexicographically ordered union of all tags.
    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn creators(&self) -> &BTreeSet<String> {
        &self.creators
    }

    /// The catalog document bytes; records built in code serialize to JSON.
    pub fn source_bytes(&self) -> &[u8] {
        &self.source
    }

    /// Lowercase hex SHA-256 of [`source_bytes`](Self::source_bytes).
    pub fn digest(&self) -> String {
        Sha256::digest(&self.source).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn tag_vector(&self, image: &ImageRecord) -> Result<Vec<f64>, CatalogError> {
        tag_vector(image, &self.vocabulary)
    }
}

/// Binary indicator of `image`'s tags over `vocabulary`.
pub fn tag_vector(image: &ImageRecord, vocabulary: &[String]) -> Result<Vec<f64>, CatalogError> {
    let mut v = vec![0.0; vocabulary.len()];
    for tag in &image.tags {
        let pos = vocabulary
            .iter()
            .position(|t| t == tag)
            .ok_or_else(|| CatalogError::Inconsistent {
                image: image.id.clone(),
                tag: tag.clone(),
            })?;
        v[pos] = 1.0;
    }
    Ok(v)
}

/// The catalog document shipped with the crate (30 images, 8 tags).
pub const FIXTURE_CATALOG: &str = include_str!("../fixtures/catalog.json");

pub fn fixture_catalog() -> Catalog {
    Catalog::from_slice(FIXTURE_CATALOG.as_bytes()).expect("shipped fixture catalog is valid")
}
