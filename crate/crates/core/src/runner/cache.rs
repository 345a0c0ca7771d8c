//! Content-addressed score cache and atomic file writes.
//!
//! Layout: `<root>/<detector_id>/<image_sha256>/<chain_id>.json`, with
//! `+<preprocess>` appended to the file stem when a preprocessing override
//! is active. Writers go through a temp file in the target directory and a
//! rename, so concurrent readers never observe partial entries.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub detector_id: String,
    /// Hex SHA-256 of the original image file bytes.
    pub image_digest: String,
    pub chain_id: String,
    pub preprocess_tag: String,
}

impl CacheKey {
    /// File stem shared by cache entries and scratch images.
    pub fn variant_stem(chain_id: &str, preprocess_tag: &str) -> String {
        if preprocess_tag == "none" {
            chain_id.to_string()
        } else {
            format!("{chain_id}+{}", fs_component(preprocess_tag))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    detector: String,
    digest: String,
    chain: String,
    preprocess: String,
    score: f64,
}

#[derive(Debug, Clone)]
pub struct ScoreCache {
    root: PathBuf,
}

impl ScoreCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.root
            .join(fs_component(&key.detector_id))
            .join(&key.image_digest)
            .join(format!("{}.json", CacheKey::variant_stem(&key.chain_id, &key.preprocess_tag)))
    }

    /// A cached score, if present and consistent with `key`.
    pub fn get(&self, key: &CacheKey) -> Option<f64> {
        let bytes = fs::read(self.path_for(key)).ok()?;
        let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
        let matches = entry.detector == key.detector_id
            && entry.digest == key.image_digest
            && entry.chain == key.chain_id
            && entry.preprocess == key.preprocess_tag;
        (matches && entry.score.is_finite()).then_some(entry.score)
    }

    pub fn put(&self, key: &CacheKey, score: f64) -> std::io::Result<()> {
        let path = self.path_for(key);
        if path.exists() {
            return Ok(());
        }
        let entry = CacheEntry {
            detector: key.detector_id.clone(),
            digest: key.image_digest.clone(),
            chain: key.chain_id.clone(),
            preprocess: key.preprocess_tag.clone(),
            score,
        };
        let json = serde_json::to_vec(&entry).map_err(std::io::Error::other)?;
        write_atomic(&path, &json)
    }
}

/// Writes via a sibling temp file and rename. Parent directories are
/// created as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

/// Maps an arbitrary label onto a single safe path component.
pub fn fs_component(s: &str) -> String {
    let mapped: String = s
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._,:=@+|-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    match mapped.as_str() {
        "" | "." | ".." => "_".to_string(),
        _ => mapped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(chain: &str, tag: &str) -> CacheKey {
        CacheKey {
            detector_id: "random:seed=42@1".into(),
            image_digest: "ab".repeat(32),
            chain_id: chain.into(),
            preprocess_tag: tag.into(),
        }
    }

    #[test]
    fn layout_follows_key() {
        let cache = ScoreCache::new("/c");
        assert_eq!(
            cache.path_for(&key("jpeg:q=50", "none")),
            PathBuf::from(format!("/c/random:seed=42@1/{}/jpeg:q=50.json", "ab".repeat(32)))
        );
        assert!(cache
            .path_for(&key("identity", "resize:224"))
            .ends_with("identity+resize:224.json"));
    }

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ScoreCache::new(dir.path());
        let k = key("blur:sigma=2", "none");
        assert_eq!(cache.get(&k), None);
        cache.put(&k, 0.125).unwrap();
        assert_eq!(cache.get(&k), Some(0.125));
        // Entries are immutable once written.
        cache.put(&k, 0.9).unwrap();
        assert_eq!(cache.get(&k), Some(0.125));
        assert_eq!(cache.get(&key("blur:sigma=2", "crop:224")), None);
    }

    #[test]
    fn corrupt_entries_are_misses() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ScoreCache::new(dir.path());
        let k = key("identity", "none");
        write_atomic(&cache.path_for(&k), b"{\"score\":").unwrap();
        assert_eq!(cache.get(&k), None);
    }

    #[test]
    fn components_are_sanitized() {
        assert_eq!(fs_component("a/b c"), "a_b_c");
        assert_eq!(fs_component(".."), "_");
        assert_eq!(fs_component("blur:sigma=2|jpeg:q=50"), "blur:sigma=2|jpeg:q=50");
    }

    #[test]
    fn file_digest_matches_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        fs::write(&p, b"abc").unwrap();
        let want = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";
        assert_eq!(sha256_file(&p).unwrap(), want);
        assert_eq!(sha256_hex(b"abc"), want);
    }
}
