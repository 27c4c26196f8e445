//! Download-and-cache of OpenML CSV exports.

use crate::error::{io_err, Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Duration;

pub const DEFAULT_BASE_URL: &str = "https://www.openml.org";
pub const CACHE_ENV: &str = "T2I_CACHE_DIR";
const MAX_BODY: u64 = 512 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub id: u64,
    pub url: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone)]
pub struct OpenMlFetcher {
    pub base_url: String,
    pub cache_dir: PathBuf,
    /// Never touch the network; only cache hits succeed.
    pub offline: bool,
    pub timeout: Duration,
}

impl OpenMlFetcher {
    pub fn new(cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.to_string(),
            cache_dir: cache_dir.into(),
            offline: false,
            timeout: Duration::from_secs(60),
        }
    }

    /// Cache directory from the environment, falling back to `./.t2i-cache`.
    pub fn from_env() -> Self {
        let dir = std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".t2i-cache"));
        Self::new(dir)
    }

    pub fn entry_dir(&self, id: u64) -> PathBuf {
        self.cache_dir.join(id.to_string())
    }

    /// Path of a verified cached copy, if one exists.
    pub fn cached(&self, id: u64) -> Result<Option<PathBuf>> {
        let dir = self.entry_dir(id);
        let (csv, meta) = (dir.join("data.csv"), dir.join("meta.json"));
        if !csv.exists() || !meta.exists() {
            return Ok(None);
        }
        let meta_text = std::fs::read_to_string(&meta).map_err(io_err(&meta))?;
        let meta: CacheMeta = serde_json::from_str(&meta_text)
            .map_err(|e| Error::Fetch(format!("corrupt cache metadata for {id}: {e}")))?;
        let bytes = std::fs::read(&csv).map_err(io_err(&csv))?;
        let digest = sha256_hex(&bytes);
        if digest != meta.sha256 {
            return Err(Error::Fetch(format!(
                "checksum mismatch for cached dataset {id}: expected {}, found {digest}",
                meta.sha256
            )));
        }
        Ok(Some(csv))
    }

    /// Returns the local CSV for dataset `id`, downloading it on a cache miss.
    pub fn fetch(&self, id: u64) -> Result<PathBuf> {
        if let Some(path) = self.cached(id)? {
            return Ok(path);
        }
        if self.offline {
            return Err(Error::Offline(id.to_string()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(self.timeout)).build().into();
        let base = self.base_url.trim_end_matches('/');
        let desc_url = format!("{base}/api/v1/json/data/{id}");
        let desc = self.get(&agent, &desc_url, id)?;
        let desc: serde_json::Value = serde_json::from_slice(&desc)
            .map_err(|e| Error::Fetch(format!("dataset {id} description is not JSON: {e}")))?;
        let file_id = match &desc["data_set_description"]["file_id"] {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            _ => return Err(Error::Fetch(format!("dataset {id} description lacks a file_id"))),
        };
        let csv_url = format!("{base}/data/get_csv/{file_id}");
        let body = self.get(&agent, &csv_url, id)?;
        self.store(id, &csv_url, &body)
    }

    fn get(&self, agent: &ureq::Agent, url: &str, id: u64) -> Result<Vec<u8>> {
        let mut resp = agent.get(url).call().map_err(|e| match e {
            ureq::Error::StatusCode(code) => Error::Fetch(format!("GET {url}: HTTP {code}")),
            ureq::Error::HostNotFound | ureq::Error::ConnectionFailed | ureq::Error::Io(_) => {
                log::warn!("GET {url} failed: {e}");
                Error::Offline(id.to_string())
            }
            other => Error::Fetch(format!("GET {url}: {other}")),
        })?;
        resp.body_mut()
            .with_config()
            .limit(MAX_BODY)
            .read_to_vec()
            .map_err(|e| Error::Fetch(format!("reading {url}: {e}")))
    }

    fn store(&self, id: u64, url: &str, body: &[u8]) -> Result<PathBuf> {
        let dir = self.entry_dir(id);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let meta = CacheMeta { id, url: url.to_string(), sha256: sha256_hex(body), bytes: body.len() as u64 };
        let csv = dir.join("data.csv");
        write_atomic(&csv, body)?;
        let meta_json = serde_json::to_vec_pretty(&meta).expect("meta serialises");
        write_atomic(&dir.join("meta.json"), &meta_json)?;
        Ok(csv)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Convenience wrapper around [`OpenMlFetcher::fetch`].
pub fn fetch_openml(dataset_id: u64, cache_dir: &Path) -> Result<PathBuf> {
    OpenMlFetcher::new(cache_dir).fetch(dataset_id)
}
