//! HTTP transports: live, recording and replaying.
//!
//! Exchanges are stored as golden files: one JSON object per line holding the
//! URL, the exact request body, the status and the exact response body.
//! Replay matches on a SHA-256 fingerprint of URL and request body. Headers are
//! never recorded, so credentials stay out of fixtures.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ProviderError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

pub trait Transport: Send + Sync {
    fn post(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
    ) -> Result<HttpResponse, ProviderError>;
}

/// Blocking HTTP client.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn post(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
    ) -> Result<HttpResponse, ProviderError> {
        let mut req = self
            .client
            .post(url)
            .header("content-type", "application/json")
            .body(body.to_string());
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let resp = req
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedExchange {
    pub url: String,
    pub request: String,
    pub status: u16,
    pub response: String,
}

impl RecordedExchange {
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.url, &self.request)
    }
}

pub fn fingerprint(url: &str, body: &str) -> String {
    let mut h = Sha256::new();
    h.update(url.as_bytes());
    h.update(b"\n");
    h.update(body.as_bytes());
    hex::encode(h.finalize())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ProviderError {
    ProviderError::Config(format!("{}: {e}", path.display()))
}

/// Reads a golden file of recorded exchanges.
pub fn load_exchanges(path: &Path) -> Result<Vec<RecordedExchange>, ProviderError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| io_err(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Serves responses from recorded exchanges; unknown requests fail.
#[derive(Debug, Default)]
pub struct ReplayTransport {
    exchanges: HashMap<String, RecordedExchange>,
}

impl ReplayTransport {
    pub fn new(exchanges: impl IntoIterator<Item = RecordedExchange>) -> Self {
        Self {
            exchanges: exchanges
                .into_iter()
                .map(|x| (x.fingerprint(), x))
                .collect(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        Ok(Self::new(load_exchanges(path)?))
    }

    pub fn len(&self) -> usize {
        self.exchanges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exchanges.is_empty()
    }
}

impl Transport for ReplayTransport {
    fn post(
        &self,
        url: &str,
        _headers: &[(String, String)],
        body: &str,
    ) -> Result<HttpResponse, ProviderError> {
        let key = fingerprint(url, body);
        self.exchanges
            .get(&key)
            .map(|x| HttpResponse {
                status: x.status,
                body: x.response.clone(),
            })
            .ok_or_else(|| ProviderError::CassetteMiss(format!("{url} ({})", &key[..12])))
    }
}

/// Forwards to an inner transport and appends every exchange to a golden file.
pub struct RecordingTransport<T> {
    inner: T,
    path: PathBuf,
    lock: Mutex<()>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, path: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            path: path.into(),
            lock: Mutex::new(()),
        }
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn post(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
    ) -> Result<HttpResponse, ProviderError> {
        let resp = self.inner.post(url, headers, body)?;
        let line = serde_json::to_string(&RecordedExchange {
            url: url.to_string(),
            request: body.to_string(),
            status: resp.status,
            response: resp.body.clone(),
        })
        .map_err(|e| ProviderError::Protocol(e.to_string()))?;
        let _g = self.lock.lock().unwrap();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| io_err(&self.path, e))?;
        writeln!(f, "{line}").map_err(|e| io_err(&self.path, e))?;
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;

    impl Transport for Echo {
        fn post(&self, _: &str, _: &[(String, String)], body: &str) -> Result<HttpResponse, ProviderError> {
            Ok(HttpResponse {
                status: 200,
                body: format!("echo:{body}"),
            })
        }
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("golden.jsonl");
        let rec = RecordingTransport::new(Echo, &path);
        let secret = [("authorization".to_string(), "Bearer s3cret".to_string())];
        let live = rec.post("http://x/v1/a", &secret, "{\"q\":1}").unwrap();

        let text = fs::read_to_string(&path).unwrap();
        assert!(!text.contains("s3cret"));

        let replay = ReplayTransport::from_file(&path).unwrap();
        assert_eq!(replay.post("http://x/v1/a", &[], "{\"q\":1}").unwrap(), live);
        assert!(matches!(
            replay.post("http://x/v1/a", &[], "{\"q\":2}"),
            Err(ProviderError::CassetteMiss(_))
        ));
    }
}
