//! Google Street View Static API: query validation, URL construction, fetch and disk cache.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::{redact, HttpRequest, HttpTransport, Method, TransportError};
use crate::secret::ApiKey;

pub const GSV_ENDPOINT: &str = "https://maps.googleapis.com/maps/api/streetview";
pub const GSV_KEY_ENV: &str = "GSV_API_KEY";

const FETCH_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GsvError {
    #[error("invalid street view query: {0}")]
    InvalidQuery(&'static str),
    #[error("street view request failed with HTTP {0}")]
    Http(u16),
    #[error("street view quota exceeded or key rejected (HTTP {0})")]
    QuotaExceeded(u16),
    #[error("street view returned non-image content type '{0}'")]
    NotAnImage(String),
    #[error("street view transport error: {0}")]
    Transport(String),
    #[error("street view cache error: {0}")]
    Cache(String),
}

fn default_fov() -> f64 {
    90.0
}

fn default_size() -> u32 {
    640
}

/// Camera parameters for one Street View frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GsvQuery {
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub heading: f64,
    #[serde(default)]
    pub pitch: f64,
    #[serde(default = "default_fov")]
    pub fov: f64,
    #[serde(default = "default_size")]
    pub width: u32,
    #[serde(default = "default_size")]
    pub height: u32,
}

impl GsvQuery {
    /// Query at the given location with the default camera (640x640, heading 0, pitch 0, fov 90).
    pub fn at(lat: f64, lon: f64) -> Self {
        Self {
            lat,
            lon,
            heading: 0.0,
            pitch: 0.0,
            fov: default_fov(),
            width: default_size(),
            height: default_size(),
        }
    }

    pub fn validate(&self) -> Result<(), GsvError> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(GsvError::InvalidQuery("latitude"));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(GsvError::InvalidQuery("longitude"));
        }
        if !(0.0..360.0).contains(&self.heading) {
            return Err(GsvError::InvalidQuery("heading"));
        }
        if !(-90.0..=90.0).contains(&self.pitch) {
            return Err(GsvError::InvalidQuery("pitch"));
        }
        if !(self.fov > 10.0 && self.fov <= 120.0) {
            return Err(GsvError::InvalidQuery("fov"));
        }
        if !(1..=640).contains(&self.width) {
            return Err(GsvError::InvalidQuery("width"));
        }
        if !(1..=640).contains(&self.height) {
            return Err(GsvError::InvalidQuery("height"));
        }
        Ok(())
    }

    /// Query string without the key, in the fixed order
    /// `size, location, heading, pitch, fov`.
    fn canonical_params(&self) -> String {
        format!(
            "size={}x{}&location={},{}&heading={}&pitch={}&fov={}",
            self.width, self.height, self.lat, self.lon, self.heading, self.pitch, self.fov
        )
    }

    /// Hex SHA-256 of the keyless query; names the cache file.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_params().as_bytes()))
    }
}

/// Builds the request URL. Parameter order is fixed:
/// `size, location, heading, pitch, fov, key`.
pub fn build_gsv_url(query: &GsvQuery, key: &ApiKey) -> Result<String, GsvError> {
    query.validate()?;
    let key: String = url::form_urlencoded::byte_serialize(key.expose().as_bytes()).collect();
    Ok(format!("{GSV_ENDPOINT}?{}&key={key}", query.canonical_params()))
}

/// Fetches one frame. 403 and 429 map to [`GsvError::QuotaExceeded`].
pub fn fetch_gsv_image(
    query: &GsvQuery,
    key: &ApiKey,
    http: &dyn HttpTransport,
) -> Result<Vec<u8>, GsvError> {
    let url = build_gsv_url(query, key)?;
    let request = HttpRequest {
        method: Method::Get,
        url,
        headers: Vec::new(),
        body: None,
        timeout: FETCH_TIMEOUT,
    };
    let response = http.execute(&request).map_err(|e| match e {
        TransportError::Timeout => GsvError::Transport("timeout".into()),
        TransportError::Io(msg) => GsvError::Transport(redact(&msg, key.expose())),
    })?;
    match response.status {
        200 => {
            let ct = response.content_type.unwrap_or_default();
            if ct.trim().to_ascii_lowercase().starts_with("image/") {
                Ok(response.body)
            } else {
                Err(GsvError::NotAnImage(ct))
            }
        }
        403 | 429 => Err(GsvError::QuotaExceeded(response.status)),
        status => Err(GsvError::Http(status)),
    }
}

/// Disk cache laid out as `<root>/gsv/<digest>.jpg`.
#[derive(Debug, Clone)]
pub struct GsvCache {
    root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CachedImage {
    pub path: PathBuf,
    pub byte_size: u64,
    pub cache_hit: bool,
}

impl GsvCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path_for(&self, query: &GsvQuery) -> PathBuf {
        self.root.join("gsv").join(format!("{}.jpg", query.digest()))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Returns the cached frame, fetching and storing it on a miss.
    /// Writes go to a temp file in the cache directory and are renamed into place.
    pub fn fetch(
        &self,
        query: &GsvQuery,
        key: &ApiKey,
        http: &dyn HttpTransport,
    ) -> Result<CachedImage, GsvError> {
        query.validate()?;
        let path = self.path_for(query);
        if let Ok(meta) = std::fs::metadata(&path) {
            if meta.is_file() && meta.len() > 0 {
                return Ok(CachedImage {
                    path,
                    byte_size: meta.len(),
                    cache_hit: true,
                });
            }
        }
        let bytes = fetch_gsv_image(query, key, http)?;
        let dir = path.parent().expect("cache path has a parent");
        let cache_err = |e: std::io::Error| GsvError::Cache(e.to_string());
        std::fs::create_dir_all(dir).map_err(cache_err)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(cache_err)?;
        tmp.write_all(&bytes).map_err(cache_err)?;
        tmp.as_file().sync_all().map_err(cache_err)?;
        tmp.persist(&path).map_err(|e| cache_err(e.error))?;
        Ok(CachedImage {
            path,
            byte_size: bytes.len() as u64,
            cache_hit: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::{HttpResponse, ScriptedTransport};

    fn key() -> ApiKey {
        ApiKey::new("SECRET-KEY-123")
    }

    fn cork() -> GsvQuery {
        GsvQuery::at(51.8969, -8.4863)
    }

    #[test]
    fn url_contains_size_and_location() {
        let url = build_gsv_url(&cork(), &key()).unwrap();
        assert!(url.starts_with("https://maps.googleapis.com/maps/api/streetview?"));
        assert!(url.contains("size=640x640"));
        assert!(url.contains("location=51.8969,-8.4863"));
        assert_eq!(
            url,
            "https://maps.googleapis.com/maps/api/streetview?size=640x640&location=51.8969,-8.4863&heading=0&pitch=0&fov=90&key=SECRET-KEY-123"
        );
        assert_eq!(url, build_gsv_url(&cork(), &key()).unwrap());
    }

    #[test]
    fn invalid_width_is_rejected_without_leaking_key() {
        let q = GsvQuery {
            width: 9999,
            ..cork()
        };
        let err = build_gsv_url(&q, &key()).unwrap_err();
        assert_eq!(err, GsvError::InvalidQuery("width"));
        assert!(!err.to_string().contains("SECRET-KEY-123"));
    }

    #[test]
    fn range_checks() {
        for (q, field) in [
            (GsvQuery { lat: 91.0, ..cork() }, "latitude"),
            (GsvQuery { lon: -181.0, ..cork() }, "longitude"),
            (GsvQuery { heading: 360.0, ..cork() }, "heading"),
            (GsvQuery { pitch: -91.0, ..cork() }, "pitch"),
            (GsvQuery { fov: 10.0, ..cork() }, "fov"),
            (GsvQuery { fov: 121.0, ..cork() }, "fov"),
            (GsvQuery { height: 0, ..cork() }, "height"),
        ] {
            assert_eq!(q.validate(), Err(GsvError::InvalidQuery(field)));
        }
        assert!(GsvQuery { fov: 120.0, ..cork() }.validate().is_ok());
    }

    #[test]
    fn fetch_maps_statuses() {
        let jpeg = vec![0xFF, 0xD8, 0xFF, 0xE0];
        let ok = ScriptedTransport::new(vec![Ok(HttpResponse::new(200, Some("image/jpeg"), jpeg.clone()))]);
        assert_eq!(fetch_gsv_image(&cork(), &key(), &ok).unwrap(), jpeg);

        let quota = ScriptedTransport::new(vec![Ok(HttpResponse::new(403, Some("text/plain"), "denied"))]);
        assert_eq!(
            fetch_gsv_image(&cork(), &key(), &quota),
            Err(GsvError::QuotaExceeded(403))
        );

        let html = ScriptedTransport::new(vec![Ok(HttpResponse::new(200, Some("text/html"), "<html>"))]);
        assert!(matches!(
            fetch_gsv_image(&cork(), &key(), &html),
            Err(GsvError::NotAnImage(_))
        ));

        let missing = ScriptedTransport::new(vec![Ok(HttpResponse::new(404, None, ""))]);
        assert_eq!(fetch_gsv_image(&cork(), &key(), &missing), Err(GsvError::Http(404)));
    }

    #[test]
    fn transport_errors_are_redacted() {
        let t = ScriptedTransport::new(vec![Err(TransportError::Io(
            "connect failed for ...&key=SECRET-KEY-123".into(),
        ))]);
        let err = fetch_gsv_image(&cork(), &key(), &t).unwrap_err();
        assert!(!err.to_string().contains("SECRET-KEY-123"));
    }

    #[test]
    fn cache_hits_skip_the_network() {
        let dir = tempfile::tempdir().unwrap();
        let cache = GsvCache::new(dir.path().join("cache"));
        let t = ScriptedTransport::new(vec![Ok(HttpResponse::new(200, Some("image/jpeg"), vec![1u8; 10]))]);
        let first = cache.fetch(&cork(), &key(), &t).unwrap();
        assert!(!first.cache_hit);
        assert_eq!(first.byte_size, 10);
        assert!(first.path.ends_with(format!("gsv/{}.jpg", cork().digest())));
        let second = cache.fetch(&cork(), &key(), &t).unwrap();
        assert!(second.cache_hit);
        assert_eq!(t.calls(), 1);
    }

    #[test]
    fn digest_ignores_key() {
        assert_eq!(cork().digest(), cork().digest());
        assert_ne!(cork().digest(), GsvQuery { heading: 90.0, ..cork() }.digest());
    }
}
