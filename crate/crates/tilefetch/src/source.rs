use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use urbanform_core::tilemath::TileCoord;

use crate::FetchError;

fn default_parallel() -> usize {
    4
}

fn default_format() -> String {
    "png".into()
}

fn default_timeout() -> u64 {
    30_000
}

fn default_max_zoom() -> u8 {
    urbanform_core::tilemath::MAX_ZOOM
}

fn default_min_zoom() -> u8 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles for each one after.
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 500,
        }
    }
}

/// An XYZ or quadkey tile endpoint.
///
/// `url_template` may use `{x}`, `{y}`, `{z}`, `{quadkey}` and `{s}` (a
/// subdomain picked deterministically per tile).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileSource {
    /// Cache namespace.
    pub id: String,
    pub url_template: String,
    #[serde(default)]
    pub subdomains: Vec<String>,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    /// Minimum spacing between consecutive requests, across all workers.
    #[serde(default)]
    pub min_delay_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    /// File extension used for cached tiles.
    #[serde(default = "default_format")]
    pub format: String,
    #[serde(default = "default_min_zoom")]
    pub min_zoom: u8,
    #[serde(default = "default_max_zoom")]
    pub max_zoom: u8,
}

impl TileSource {
    pub fn new(id: impl Into<String>, url_template: impl Into<String>) -> Result<Self, FetchError> {
        let s = Self {
            id: id.into(),
            url_template: url_template.into(),
            subdomains: Vec::new(),
            headers: BTreeMap::new(),
            max_parallel: default_parallel(),
            min_delay_ms: 0,
            retry: RetryPolicy::default(),
            timeout_ms: default_timeout(),
            format: default_format(),
            min_zoom: default_min_zoom(),
            max_zoom: default_max_zoom(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), FetchError> {
        let t = &self.url_template;
        let xyz = ["{x}", "{y}", "{z}"].iter().all(|p| t.contains(p));
        if !xyz && !t.contains("{quadkey}") {
            return Err(FetchError::Config(format!(
                "url template {t:?} needs {{x}}/{{y}}/{{z}} or {{quadkey}} placeholders"
            )));
        }
        if t.contains("{s}") && self.subdomains.is_empty() {
            return Err(FetchError::Config("template uses {s} but no subdomains are configured".into()));
        }
        if self.id.is_empty() || self.id.contains(['/', '\\']) || self.id == ".." {
            return Err(FetchError::Config(format!("source id {:?} is not a valid directory name", self.id)));
        }
        if self.max_parallel == 0 {
            return Err(FetchError::Config("max_parallel must be positive".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(FetchError::Config("retry.max_attempts must be positive".into()));
        }
        Ok(())
    }

    /// Loads a TOML or JSON description, chosen by extension.
    pub fn load(path: &Path) -> Result<Self, FetchError> {
        let text = std::fs::read_to_string(path).map_err(|e| FetchError::Config(format!("{}: {e}", path.display())))?;
        let src: TileSource = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| FetchError::Config(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text).map_err(|e| FetchError::Config(format!("{}: {e}", path.display())))?,
        };
        src.validate()?;
        Ok(src)
    }

    pub fn check_zoom(&self, coord: TileCoord) -> Result<(), FetchError> {
        if coord.zoom < self.min_zoom || coord.zoom > self.max_zoom {
            return Err(FetchError::Config(format!(
                "zoom {} outside the source's range {}..={}",
                coord.zoom, self.min_zoom, self.max_zoom
            )));
        }
        Ok(())
    }

    pub fn url(&self, coord: TileCoord) -> String {
        let mut url = self
            .url_template
            .replace("{x}", &coord.x.to_string())
            .replace("{y}", &coord.y.to_string())
            .replace("{z}", &coord.zoom.to_string())
            .replace("{quadkey}", &coord.quadkey());
        if !self.subdomains.is_empty() {
            let i = (coord.x as usize + coord.y as usize) % self.subdomains.len();
            url = url.replace("{s}", &self.subdomains[i]);
        }
        url
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates() {
        let t = TileCoord::new(3, 5, 3).unwrap();
        let s = TileSource::new("osm", "http://h/{z}/{x}/{y}.png").unwrap();
        assert_eq!(s.url(t), "http://h/3/3/5.png");
        let mut q = TileSource::new("bing", "http://t.h/a{quadkey}.jpeg?g=1").unwrap();
        q.url_template = "http://{s}.h/a{quadkey}.jpeg?g=1".into();
        q.subdomains = vec!["t0".into(), "t1".into()];
        q.validate().unwrap();
        assert_eq!(q.url(t), "http://t0.h/a213.jpeg?g=1");
        assert!(TileSource::new("x", "http://h/tile.png").is_err());
        assert!(TileSource::new("x", "http://{s}/{quadkey}").is_err());
        assert!(TileSource::new("a/b", "http://h/{quadkey}").is_err());
    }

    #[test]
    fn loads_toml_and_json() {
        let dir = std::env::temp_dir().join(format!("urbanform-src-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let toml_path = dir.join("s.toml");
        std::fs::write(
            &toml_path,
            "id = \"bing\"\nurl_template = \"http://{s}.x/{quadkey}\"\nsubdomains = [\"t0\"]\nmax_parallel = 2\n[retry]\nmax_attempts = 5\nbackoff_base_ms = 10\n",
        )
        .unwrap();
        let s = TileSource::load(&toml_path).unwrap();
        assert_eq!((s.max_parallel, s.retry.max_attempts, s.format.as_str()), (2, 5, "png"));
        let json_path = dir.join("s.json");
        std::fs::write(&json_path, serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(TileSource::load(&json_path).unwrap(), s);
        std::fs::remove_dir_all(dir).ok();
    }
}
