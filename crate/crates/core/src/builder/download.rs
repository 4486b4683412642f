use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BuildError, SourceRef};
use crate::store::StoreError;

pub const USER_AGENT: &str = concat!("dataforge/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownloadRecord {
    pub url: String,
    pub path: PathBuf,
    pub sha256: String,
    pub size: u64,
    /// Seconds since the Unix epoch.
    pub fetched_at: u64,
}

/// Fetches sources into a content-verified download cache.
///
/// Counters record how many times a source was actually read (file opened
/// or HTTP request issued) so callers can assert cache hits.
#[derive(Debug)]
pub struct Downloader {
    pub retries: u32,
    pub backoff: Duration,
    source_reads: AtomicU64,
}

impl Default for Downloader {
    fn default() -> Self {
        Downloader {
            retries: 3,
            backoff: Duration::from_secs(1),
            source_reads: AtomicU64::new(0),
        }
    }
}

/// Resolves a source reference to an absolute URL. Bare paths become
/// `file://` URLs, relative ones against `base`.
pub fn resolve_url(url: &str, base: Option<&Path>) -> Result<String, BuildError> {
    if url.starts_with("http://") || url.starts_with("https://") || url.starts_with("file://") {
        return Ok(url.to_owned());
    }
    if url.contains("://") {
        return Err(BuildError::Download {
            url: url.to_owned(),
            reason: "unsupported url scheme".into(),
        });
    }
    let p = Path::new(url);
    let abs = match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    };
    Ok(format!("file://{}", abs.display()))
}

pub(crate) fn sha256_file(path: &Path) -> io::Result<(String, u64)> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut size = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
        size += n as u64;
    }
    Ok((hex::encode(h.finalize()), size))
}

impl Downloader {
    pub fn new() -> Self {
        Self::default()
    }

    /// Shorter backoff for tests and local use.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn source_reads(&self) -> u64 {
        self.source_reads.load(Ordering::Relaxed)
    }

    /// Downloads `src` into `<cache>/downloads/<sha256(url)>`, verifying the
    /// declared checksum. Re-downloads are skipped when a good copy exists.
    pub fn download_and_verify(
        &self,
        src: &SourceRef,
        base: Option<&Path>,
        cache_dir: &Path,
    ) -> Result<DownloadRecord, BuildError> {
        let url = resolve_url(&src.url, base)?;
        let key = hex::encode(Sha256::digest(url.as_bytes()));
        let dir = cache_dir.join("downloads");
        fs::create_dir_all(&dir).map_err(io_err)?;
        let dest = dir.join(&key);
        let meta_path = dir.join(format!("{key}.json"));
        let expected = src.sha256.as_deref().map(str::to_ascii_lowercase);

        if dest.exists() {
            let (sha, size) = sha256_file(&dest).map_err(io_err)?;
            if expected.as_deref().is_none_or(|e| e == sha) {
                let fetched_at = fs::read(&meta_path)
                    .ok()
                    .and_then(|b| serde_json::from_slice::<DownloadRecord>(&b).ok())
                    .filter(|r| r.sha256 == sha)
                    .map_or_else(now, |r| r.fetched_at);
                return Ok(DownloadRecord {
                    url,
                    path: dest,
                    sha256: sha,
                    size,
                    fetched_at,
                });
            }
            let _ = fs::remove_file(&dest);
        }

        let tmp = crate::store::temp_file_path(&dest);
        let fetched = self.fetch_with_retries(&url, &tmp);
        let (sha, size) = match fetched {
            Ok(r) => r,
            Err(e) => {
                let _ = fs::remove_file(&tmp);
                return Err(e);
            }
        };
        if let Some(exp) = expected {
            if exp != sha {
                let _ = fs::remove_file(&tmp);
                return Err(BuildError::ChecksumMismatch {
                    url,
                    expected: exp,
                    actual: sha,
                });
            }
        }
        fs::rename(&tmp, &dest).map_err(io_err)?;
        let record = DownloadRecord {
            url,
            path: dest,
            sha256: sha,
            size,
            fetched_at: now(),
        };
        let meta = serde_json::to_vec(&record).expect("record serializes");
        fs::write(&meta_path, meta).map_err(io_err)?;
        Ok(record)
    }

    fn fetch_with_retries(&self, url: &str, tmp: &Path) -> Result<(String, u64), BuildError> {
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            match self.fetch_once(url, tmp) {
                Ok(r) => return Ok(r),
                Err(e) if attempt < self.retries && e.retryable => {
                    log::warn!("download of {url} failed ({}), retrying in {delay:?}", e.reason);
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => {
                    return Err(BuildError::Download {
                        url: url.to_owned(),
                        reason: e.reason,
                    })
                }
            }
        }
    }

    fn fetch_once(&self, url: &str, tmp: &Path) -> Result<(String, u64), FetchError> {
        self.source_reads.fetch_add(1, Ordering::Relaxed);
        let reader = open_url(url)?;
        copy_hashing(reader, tmp).map_err(|e| FetchError::retry(e.to_string()))
    }
}

pub(crate) struct FetchError {
    pub(crate) reason: String,
    pub(crate) retryable: bool,
}

impl FetchError {
    fn retry(reason: String) -> Self {
        FetchError {
            reason,
            retryable: true,
        }
    }
}

/// Opens a reader over the body of an http(s) or file URL.
pub(crate) fn open_url(url: &str) -> Result<Box<dyn Read + Send>, FetchError> {
    if let Some(path) = url.strip_prefix("file://") {
        // a missing local file will not appear on retry
        return File::open(path)
            .map(|f| Box::new(f) as Box<dyn Read + Send>)
            .map_err(|e| FetchError {
                reason: format!("{path}: {e}"),
                retryable: false,
            });
    }
    let agent = ureq::AgentBuilder::new()
        .user_agent(USER_AGENT)
        .timeout_connect(Duration::from_secs(30))
        .build();
    match agent.get(url).call() {
        Ok(resp) => Ok(Box::new(resp.into_reader())),
        Err(ureq::Error::Status(code, _)) => Err(FetchError {
            reason: format!("http status {code}"),
            retryable: code >= 500 || code == 408 || code == 429,
        }),
        Err(e) => Err(FetchError::retry(e.to_string())),
    }
}

fn copy_hashing(mut reader: Box<dyn Read + Send>, tmp: &Path) -> io::Result<(String, u64)> {
    let mut out = io::BufWriter::new(File::create(tmp)?);
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut size = 0u64;
    loop {
        let n = match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        h.update(&buf[..n]);
        out.write_all(&buf[..n])?;
        size += n as u64;
    }
    out.flush()?;
    Ok((hex::encode(h.finalize()), size))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn io_err(e: io::Error) -> BuildError {
    BuildError::Store(StoreError::from_io(e))
}
