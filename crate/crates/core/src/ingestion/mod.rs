//! Dataset manifests, lazy image reads, Base64 encoding and Street View acquisition.

pub mod gsv;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Acquisition, GpsPoint, ImageRecord, ImageSource, Rating};
use gsv::GsvQuery;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("manifest schema error in '{field}': {reason}")]
    Schema { field: String, reason: String },
    #[error("duplicate image_id '{0}'")]
    DuplicateImageId(String),
    #[error("cannot encode an empty byte sequence")]
    EmptyInput,
}

impl IngestError {
    fn io(path: &Path, err: impl fmt::Display) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }

    fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        IngestError::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// On-disk manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageEntry {
    image_id: String,
    source: ImageSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gsv: Option<GsvQuery>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gps: Option<GpsPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    byte_size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    dataset_id: String,
    images: Vec<ImageEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference_ratings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub images: Vec<ImageRecord>,
    /// Ratings CSV, relative to `base_dir`.
    pub reference_ratings: Option<PathBuf>,
    /// Directory that relative paths resolve against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    /// Validates an in-memory manifest.
    pub fn new(
        dataset_id: impl Into<String>,
        images: Vec<ImageRecord>,
        base_dir: impl Into<PathBuf>,
    ) -> Result<Self, IngestError> {
        let manifest = Self {
            dataset_id: dataset_id.into(),
            images,
            reference_ratings: None,
            base_dir: base_dir.into(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    fn validate(&self) -> Result<(), IngestError> {
        if self.dataset_id.trim().is_empty() {
            return Err(IngestError::schema("dataset_id", "must not be empty"));
        }
        let mut seen = HashSet::new();
        for (i, rec) in self.images.iter().enumerate() {
            if rec.image_id.trim().is_empty() {
                return Err(IngestError::schema(
                    format!("images[{i}].image_id"),
                    "must not be empty",
                ));
            }
            if !seen.insert(rec.image_id.as_str()) {
                return Err(IngestError::DuplicateImageId(rec.image_id.clone()));
            }
            match (&rec.acquisition, rec.source) {
                (Acquisition::Gsv { query, .. }, ImageSource::Gsv) => {
                    query.validate().map_err(|e| {
                        IngestError::schema(format!("images[{i}].gsv"), e.to_string())
                    })?;
                }
                (Acquisition::Local { .. }, ImageSource::Gsv) => {
                    return Err(IngestError::schema(
                        format!("images[{i}].gsv"),
                        "gsv source requires street view query parameters",
                    ));
                }
                (Acquisition::Gsv { .. }, _) => {
                    return Err(IngestError::schema(
                        format!("images[{i}].path"),
                        "local sources require a path",
                    ));
                }
                (Acquisition::Local { .. }, _) => {}
            }
        }
        Ok(())
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|r| r.image_id == image_id)
    }

    pub fn image_ids(&self) -> Vec<String> {
        self.images.iter().map(|r| r.image_id.clone()).collect()
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    pub fn reference_ratings_path(&self) -> Option<PathBuf> {
        self.reference_ratings.as_deref().map(|p| self.resolve(p))
    }

    fn to_file(&self) -> ManifestFile {
        let images = self
            .images
            .iter()
            .map(|rec| {
                let (path, gsv, gps) = match &rec.acquisition {
                    Acquisition::Local { path } => (Some(path.clone()), None, rec.gps),
                    Acquisition::Gsv { query, cached_path } => (cached_path.clone(), Some(*query), None),
                };
                ImageEntry {
                    image_id: rec.image_id.clone(),
                    source: rec.source,
                    path,
                    gsv,
                    gps,
                    byte_size: rec.byte_size,
                    ground_truth: rec.ground_truth.map(i64::from),
                }
            })
            .collect();
        ManifestFile {
            dataset_id: self.dataset_id.clone(),
            images,
            reference_ratings: self.reference_ratings.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), IngestError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| IngestError::io(path, e))
    }

    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, IngestError> {
        let file: ManifestFile = serde_json::from_str(text).map_err(|e| {
            IngestError::schema("manifest", e.to_string())
        })?;
        let mut images = Vec::with_capacity(file.images.len());
        for (i, entry) in file.images.into_iter().enumerate() {
            let ground_truth = entry
                .ground_truth
                .map(Rating::new)
                .transpose()
                .map_err(|e| IngestError::schema(format!("images[{i}].ground_truth"), e.to_string()))?;
            let (acquisition, gps) = match (entry.source, entry.gsv, entry.path) {
                (ImageSource::Gsv, Some(query), cached_path) => (
                    Acquisition::Gsv { query, cached_path },
                    Some(GpsPoint {
                        lat: query.lat,
                        lon: query.lon,
                    }),
                ),
                (ImageSource::Gsv, None, _) => {
                    return Err(IngestError::schema(
                        format!("images[{i}].gsv"),
                        "gsv source requires street view query parameters",
                    ))
                }
                (_, Some(_), _) => {
                    return Err(IngestError::schema(
                        format!("images[{i}].gsv"),
                        "only gsv sources may carry street view parameters",
                    ))
                }
                (_, None, Some(path)) => (Acquisition::Local { path }, entry.gps),
                (_, None, None) => {
                    return Err(IngestError::schema(
                        format!("images[{i}].path"),
                        "local sources require a path",
                    ))
                }
            };
            images.push(ImageRecord {
                image_id: entry.image_id,
                source: entry.source,
                acquisition,
                byte_size: entry.byte_size,
                gps,
                ground_truth,
            });
        }
        let manifest = DatasetManifest {
            dataset_id: file.dataset_id,
            images,
            reference_ratings: file.reference_ratings,
            base_dir: base_dir.into(),
        };
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Loads and validates a manifest. Image files are not touched.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    DatasetManifest::from_json(&text, base_dir)
}

/// Standard alphabet, padded, single line.
pub fn encode_base64(bytes: &[u8]) -> Result<String, IngestError> {
    if bytes.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    Ok(base64::engine::general_purpose::STANDARD.encode(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageMime {
    Jpeg,
    Png,
}

impl ImageMime {
    pub fn as_str(self) -> &'static str {
        match self {
            ImageMime::Jpeg => "image/jpeg",
            ImageMime::Png => "image/png",
        }
    }

    /// PNG by signature, otherwise JPEG.
    pub fn sniff(bytes: &[u8]) -> Self {
        if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
            ImageMime::Png
        } else {
            ImageMime::Jpeg
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedImage {
    pub image_id: String,
    pub mime: ImageMime,
    pub base64_payload: String,
    pub byte_size: u64,
}

impl EncodedImage {
    pub fn from_bytes(image_id: impl Into<String>, bytes: &[u8]) -> Result<Self, IngestError> {
        Ok(Self {
            image_id: image_id.into(),
            mime: ImageMime::sniff(bytes),
            base64_payload: encode_base64(bytes)?,
            byte_size: bytes.len() as u64,
        })
    }

    pub fn data_url(&self) -> String {
        format!("data:{};base64,{}", self.mime.as_str(), self.base64_payload)
    }
}

/// Reads the bytes behind a record. Fails for Street View records not yet fetched.
pub fn read_image_bytes(
    manifest: &DatasetManifest,
    record: &ImageRecord,
) -> Result<Vec<u8>, IngestError> {
    let rel = record.local_path().ok_or_else(|| {
        IngestError::schema(
            format!("image '{}'", record.image_id),
            "street view image has not been fetched",
        )
    })?;
    let path = manifest.resolve(rel);
    std::fs::read(&path).map_err(|e| IngestError::io(&path, e))
}

pub fn encode_image(
    manifest: &DatasetManifest,
    record: &ImageRecord,
) -> Result<EncodedImage, IngestError> {
    let bytes = read_image_bytes(manifest, record)?;
    EncodedImage::from_bytes(record.image_id.clone(), &bytes)
}

/// Size ranges in bytes (1 KB = 1000 bytes).
pub const GSV_SIZE_RANGE: (u64, u64) = (400_000, 800_000);
pub const DOCUMENT_SIZE_RANGE: (u64, u64) = (30_000, 800_000);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeIssue {
    Undersize,
    Oversize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizeWarning {
    pub image_id: String,
    pub issue: SizeIssue,
    pub byte_size: u64,
    pub expected: (u64, u64),
}

impl fmt::Display for SizeWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.issue {
            SizeIssue::Undersize => "smaller",
            SizeIssue::Oversize => "larger",
        };
        write!(
            f,
            "image '{}' is {} bytes, {what} than the expected {}..{} bytes",
            self.image_id, self.byte_size, self.expected.0, self.expected.1
        )
    }
}

/// Warns when a record's size falls outside the range expected for its source.
/// Records with unknown size produce no warnings.
pub fn check_size(record: &ImageRecord) -> Vec<SizeWarning> {
    let Some(size) = record.byte_size else {
        return Vec::new();
    };
    let expected = match record.source {
        ImageSource::Gsv => GSV_SIZE_RANGE,
        _ => DOCUMENT_SIZE_RANGE,
    };
    let issue = if size < expected.0 {
        Some(SizeIssue::Undersize)
    } else if size > expected.1 {
        Some(SizeIssue::Oversize)
    } else {
        None
    };
    issue
        .map(|issue| SizeWarning {
            image_id: record.image_id.clone(),
            issue,
            byte_size: size,
            expected,
        })
        .into_iter()
        .collect()
}
