//! Append-only profile cache.
//!
//! One directory per dataset; inside it one `{method}-{hash}.jsonl` file per
//! configuration, holding one profile per line. Each key is written once:
//! later puts for a present key are ignored. Lines that fail to parse, or that
//! belong to another key, are moved to `{file}.quarantine` and reported in
//! `audit.log`.
//!
//! Writes are serialized within one process. Separate processes must not
//! write the same directory concurrently.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use super::{default_timestamp, CompressedProfile, Method};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("profile for {user_id} does not match key {key}")]
    KeyMismatch { user_id: String, key: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CacheError {
    CacheError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CacheKey {
    pub user_id: String,
    pub method: Method,
    pub config_hash: String,
}

impl CacheKey {
    pub fn file_name(&self) -> String {
        format!("{}-{}.jsonl", self.method, &self.config_hash[..16.min(self.config_hash.len())])
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.user_id, self.method, self.config_hash)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Written,
    /// The key was already present; the stored profile was kept.
    Kept,
}

type Shard = BTreeMap<String, CompressedProfile>;

#[derive(Debug)]
pub struct ProfileCache {
    dir: PathBuf,
    shards: Mutex<HashMap<String, Shard>>,
}

impl ProfileCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self {
            dir,
            shards: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CompressedProfile>, CacheError> {
        let mut shards = self.shards.lock().unwrap();
        let shard = self.shard(&mut shards, key)?;
        Ok(shard.get(&key.user_id).cloned())
    }

    pub fn contains(&self, key: &CacheKey) -> Result<bool, CacheError> {
        Ok(self.get(key)?.is_some())
    }

    pub fn put(&self, key: &CacheKey, profile: &CompressedProfile) -> Result<PutOutcome, CacheError> {
        if profile.user_id != key.user_id || profile.method != key.method {
            return Err(CacheError::KeyMismatch {
                user_id: profile.user_id.clone(),
                key: key.to_string(),
            });
        }
        let mut shards = self.shards.lock().unwrap();
        let path = self.dir.join(key.file_name());
        let shard = self.shard(&mut shards, key)?;
        if shard.contains_key(&key.user_id) {
            return Ok(PutOutcome::Kept);
        }
        let line = serde_json::to_string(profile).expect("profile serializes");
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        writeln!(f, "{line}").map_err(|e| io_err(&path, e))?;
        shard.insert(key.user_id.clone(), profile.clone());
        Ok(PutOutcome::Written)
    }

    /// Stores `profile` even when the key is present, rewriting its line in
    /// place. Other lines keep their order.
    pub fn replace(&self, key: &CacheKey, profile: &CompressedProfile) -> Result<(), CacheError> {
        if profile.user_id != key.user_id || profile.method != key.method {
            return Err(CacheError::KeyMismatch {
                user_id: profile.user_id.clone(),
                key: key.to_string(),
            });
        }
        let mut shards = self.shards.lock().unwrap();
        let path = self.dir.join(key.file_name());
        let shard = self.shard(&mut shards, key)?;
        let line = serde_json::to_string(profile).expect("profile serializes");
        let old = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io_err(&path, e)),
        };
        let mut found = false;
        let mut body = String::with_capacity(old.len() + line.len() + 1);
        for l in old.lines().filter(|l| !l.trim().is_empty()) {
            let same = serde_json::from_str::<CompressedProfile>(l).is_ok_and(|p| p.user_id == key.user_id);
            body.push_str(if same && !found { &line } else { l });
            body.push('\n');
            found |= same;
        }
        if !found {
            body.push_str(&line);
            body.push('\n');
        }
        let tmp = path.with_extension("jsonl.tmp");
        fs::write(&tmp, body).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))?;
        shard.insert(key.user_id.clone(), profile.clone());
        Ok(())
    }

    /// Every stored profile, by file name then user id.
    pub fn entries(&self) -> Result<Vec<CompressedProfile>, CacheError> {
        let mut names: Vec<String> = fs::read_dir(&self.dir)
            .map_err(|e| io_err(&self.dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".jsonl"))
            .collect();
        names.sort();
        let mut out = Vec::new();
        let mut shards = self.shards.lock().unwrap();
        for name in names {
            if !shards.contains_key(&name) {
                let loaded = self.load(&name, None)?;
                shards.insert(name.clone(), loaded);
            }
            out.extend(shards[&name].values().cloned());
        }
        Ok(out)
    }

    fn shard<'s>(&self, shards: &'s mut HashMap<String, Shard>, key: &CacheKey) -> Result<&'s mut Shard, CacheError> {
        let name = key.file_name();
        if !shards.contains_key(&name) {
            let loaded = self.load(&name, Some(key.method))?;
            shards.insert(name.clone(), loaded);
        }
        Ok(shards.get_mut(&name).unwrap())
    }

    fn load(&self, name: &str, method: Option<Method>) -> Result<Shard, CacheError> {
        let path = self.dir.join(name);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Shard::new()),
            Err(e) => return Err(io_err(&path, e)),
        };
        let mut shard = Shard::new();
        let mut kept = Vec::new();
        let mut bad = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<CompressedProfile>(line) {
                Ok(p) if method.is_none_or(|m| m == p.method) => {
                    if !shard.contains_key(&p.user_id) {
                        shard.insert(p.user_id.clone(), p);
                        kept.push(line);
                    }
                }
                Ok(p) => bad.push((i + 1, line, format!("method {} in wrong file", p.method))),
                Err(e) => bad.push((i + 1, line, e.to_string())),
            }
        }
        if !bad.is_empty() {
            self.quarantine(&path, &kept, &bad)?;
        }
        Ok(shard)
    }

    fn quarantine(&self, path: &Path, kept: &[&str], bad: &[(usize, &str, String)]) -> Result<(), CacheError> {
        let qpath = path.with_extension("jsonl.quarantine");
        let mut q = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&qpath)
            .map_err(|e| io_err(&qpath, e))?;
        let log_path = self.dir.join("audit.log");
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| io_err(&log_path, e))?;
        let ts = default_timestamp();
        let file = path.file_name().unwrap().to_string_lossy();
        for (line_no, line, err) in bad {
            writeln!(q, "{line}").map_err(|e| io_err(&qpath, e))?;
            writeln!(log, "{ts} quarantined {file}:{line_no}: {err}").map_err(|e| io_err(&log_path, e))?;
            log::warn!("cache: quarantined {file}:{line_no}: {err}");
        }
        let tmp = path.with_extension("jsonl.tmp");
        let mut body = kept.join("\n");
        if !body.is_empty() {
            body.push('\n');
        }
        fs::write(&tmp, body).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| io_err(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{ModelLabels, ProfileConfig};
    use std::collections::BTreeSet;

    fn profile(user: &str, alpha: f64) -> (CacheKey, CompressedProfile) {
        let config = ProfileConfig {
            alpha: Some(alpha),
            layer: Some(6),
            max_tokens: 50,
            seed: None,
            template_id: Some("selection/marked".into()),
            models: ModelLabels::default(),
            temperature: Some(0.0),
        };
        let key = CacheKey {
            user_id: user.into(),
            method: Method::AttnGs,
            config_hash: config.hash(crate::context::DatasetKind::Selection, Method::AttnGs),
        };
        let p = CompressedProfile {
            user_id: user.into(),
            method: Method::AttnGs,
            config,
            text: format!("profile of {user}"),
            token_count: 3,
            audit: vec![0, 2],
            flags: BTreeSet::new(),
            created_at: "2025-01-01T00:00:00Z".into(),
        };
        (key, p)
    }

    #[test]
    fn round_trip_and_first_write_wins() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ProfileCache::open(dir.path()).unwrap();
        let (k, p) = profile("u1", 0.2);
        assert_eq!(cache.get(&k).unwrap(), None);
        assert_eq!(cache.put(&k, &p).unwrap(), PutOutcome::Written);
        let mut other = p.clone();
        other.text = "changed".into();
        assert_eq!(cache.put(&k, &other).unwrap(), PutOutcome::Kept);
        assert_eq!(cache.get(&k).unwrap(), Some(p.clone()));

        let reopened = ProfileCache::open(dir.path()).unwrap();
        assert_eq!(reopened.get(&k).unwrap(), Some(p));
    }

    #[test]
    fn replace_rewrites_in_place() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ProfileCache::open(dir.path()).unwrap();
        let (k1, p1) = profile("u1", 0.2);
        let (k2, p2) = profile("u2", 0.2);
        cache.put(&k1, &p1).unwrap();
        cache.put(&k2, &p2).unwrap();
        let mut newer = p1.clone();
        newer.text = "forced".into();
        cache.replace(&k1, &newer).unwrap();
        assert_eq!(cache.get(&k1).unwrap(), Some(newer.clone()));
        let reopened = ProfileCache::open(dir.path()).unwrap();
        let users: Vec<String> = reopened.entries().unwrap().into_iter().map(|p| p.text).collect();
        assert_eq!(users, ["forced", "profile of u2"]);
        let lines = fs::read_to_string(dir.path().join(k1.file_name())).unwrap();
        assert!(lines.lines().next().unwrap().contains("forced"));
    }

    #[test]
    fn differing_alpha_keeps_both() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ProfileCache::open(dir.path()).unwrap();
        let (k1, p1) = profile("u1", 0.2);
        let (k2, p2) = profile("u1", 0.4);
        assert_ne!(k1, k2);
        cache.put(&k1, &p1).unwrap();
        cache.put(&k2, &p2).unwrap();
        assert_eq!(cache.get(&k1).unwrap().unwrap().config.alpha, Some(0.2));
        assert_eq!(cache.get(&k2).unwrap().unwrap().config.alpha, Some(0.4));
        assert_eq!(cache.entries().unwrap().len(), 2);
    }

    #[test]
    fn corrupt_lines_are_quarantined() {
        let dir = tempfile::tempdir().unwrap();
        let (k, p) = profile("u1", 0.2);
        {
            let cache = ProfileCache::open(dir.path()).unwrap();
            cache.put(&k, &p).unwrap();
        }
        let file = dir.path().join(k.file_name());
        let mut f = OpenOptions::new().append(true).open(&file).unwrap();
        writeln!(f, "{{not json").unwrap();
        drop(f);

        let cache = ProfileCache::open(dir.path()).unwrap();
        assert_eq!(cache.get(&k).unwrap(), Some(p));
        let q = fs::read_to_string(file.with_extension("jsonl.quarantine")).unwrap();
        assert_eq!(q, "{not json\n");
        let log = fs::read_to_string(dir.path().join("audit.log")).unwrap();
        assert!(log.contains("quarantined") && log.contains(":2:"));
        assert_eq!(fs::read_to_string(&file).unwrap().lines().count(), 1);
    }

    #[test]
    fn rejects_mismatched_profile() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ProfileCache::open(dir.path()).unwrap();
        let (k, _) = profile("u1", 0.2);
        let (_, p) = profile("u2", 0.2);
        assert!(matches!(cache.put(&k, &p), Err(CacheError::KeyMismatch { .. })));
    }
}
