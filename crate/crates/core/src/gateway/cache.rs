use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Content-addressed directory of JSON files, one per cache key.
///
/// Entries live at `<dir>/<key[0..2]>/<key>.json`. Writes go to a temporary
/// file in the same directory and are renamed into place, so readers only
/// ever observe complete entries.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        let shard = key.get(..2).unwrap_or("xx");
        self.dir.join(shard).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        let bytes = fs::read(self.path_for(key)).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {key}: {e}");
                None
            }
        }
    }

    pub fn put(&self, key: &str, value: &Value) -> Result<()> {
        let path = self.path_for(key);
        let parent = path.parent().expect("cache path has a shard dir");
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| Error::io(parent, e))?;
        let body = serde_json::to_vec_pretty(value).expect("json value serializes");
        tmp.write_all(&body).map_err(|e| Error::io(&path, e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }

    pub fn get_text(&self, key: &str) -> Option<String> {
        self.get(key)?.get("text")?.as_str().map(str::to_owned)
    }

    pub fn put_text(&self, key: &str, backend_id: &str, text: &str) -> Result<()> {
        self.put(key, &json!({ "key": key, "backend_id": backend_id, "text": text }))
    }

    pub fn get_vector(&self, key: &str) -> Option<Vec<f32>> {
        let v = self.get(key)?;
        v.get("embedding")?
            .as_array()?
            .iter()
            .map(|x| x.as_f64().map(|f| f as f32))
            .collect()
    }

    pub fn put_vector(&self, key: &str, backend_id: &str, vector: &[f32]) -> Result<()> {
        self.put(key, &json!({ "key": key, "backend_id": backend_id, "embedding": vector }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path()).unwrap();
        let text = "line one\n  {\"query\": \"é ü\"}\t";
        cache.put_text("abcdef", "mock", text).unwrap();
        assert_eq!(cache.get_text("abcdef").as_deref(), Some(text));
        assert!(dir.path().join("ab").join("abcdef.json").exists());
        assert!(cache.get_text("zzzz").is_none());
    }

    #[test]
    fn vector_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path()).unwrap();
        let v = vec![0.25f32, -1.5, 3.0e-7];
        cache.put_vector("k1", "e", &v).unwrap();
        assert_eq!(cache.get_vector("k1").unwrap(), v);
    }
}
