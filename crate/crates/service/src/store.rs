//! JSON record store: one file per entity under `<root>/<kind>/<id>.json`,
//! replaced atomically on every write.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

/// Ids are ASCII letters, digits, `-`, `_` and `.`, not starting with `.`.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) && !id.starts_with('.')
}

impl Store {
    pub fn open(root: impl AsRef<Path>) -> std::io::Result<Self> {
        std::fs::create_dir_all(root.as_ref())?;
        Ok(Store {
            root: root.as_ref().to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, kind: &str, id: &str) -> Option<PathBuf> {
        valid_id(id).then(|| self.root.join(kind).join(format!("{id}.json")))
    }

    pub fn put<T: Serialize>(&self, kind: &str, id: &str, value: &T) -> std::io::Result<()> {
        let path = self
            .path(kind, id)
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("invalid id {id:?}")))?;
        let dir = path.parent().expect("record path has a parent");
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&serde_json::to_vec(value).map_err(std::io::Error::other)?)?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn get<T: DeserializeOwned>(&self, kind: &str, id: &str) -> Option<T> {
        let bytes = std::fs::read(self.path(kind, id)?).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    /// Every readable record of `kind`; unreadable files are logged and
    /// skipped.
    pub fn list<T: DeserializeOwned>(&self, kind: &str) -> Vec<T> {
        let Ok(entries) = std::fs::read_dir(self.root.join(kind)) else {
            return Vec::new();
        };
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths
            .into_iter()
            .filter_map(|p| {
                let parsed = std::fs::read(&p).ok().and_then(|b| serde_json::from_slice(&b).ok());
                if parsed.is_none() {
                    tracing::warn!(path = %p.display(), "skipping unreadable record");
                }
                parsed
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_listing() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store.put("things", "a", &vec![1, 2]).unwrap();
        store.put("things", "b", &vec![3]).unwrap();
        store.put("things", "a", &vec![4]).unwrap();
        assert_eq!(store.get::<Vec<i32>>("things", "a"), Some(vec![4]));
        assert_eq!(store.list::<Vec<i32>>("things"), vec![vec![4], vec![3]]);
        assert_eq!(store.get::<Vec<i32>>("things", "missing"), None);
    }

    #[test]
    fn path_traversal_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert!(store.put("things", "../escape", &1).is_err());
        assert!(store.put("things", "", &1).is_err());
        assert_eq!(store.get::<i32>("things", "../../etc/passwd"), None);
    }
}
