use std::collections::BTreeMap;

use super::Hash;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("refusing to store an empty blob")]
    EmptyBlob,
}

/// Local content-addressed blob store. Only the returned hash goes on the
/// ledger.
#[derive(Clone, Debug, Default)]
pub struct ContentStore {
    entries: BTreeMap<Hash, Vec<u8>>,
    total_bytes: u64,
}

impl ContentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `blob` under its SHA-256. Idempotent.
    pub fn store_blob(&mut self, blob: &[u8]) -> Result<Hash, StoreError> {
        if blob.is_empty() {
            return Err(StoreError::EmptyBlob);
        }
        let key = Hash::digest(blob);
        if !self.entries.contains_key(&key) {
            self.total_bytes += blob.len() as u64;
            self.entries.insert(key, blob.to_vec());
        }
        Ok(key)
    }

    pub fn retrieve(&self, key: &Hash) -> Option<&[u8]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bytes
    }

    /// Every key equals the hash of its value.
    pub fn is_consistent(&self) -> bool {
        self.entries.iter().all(|(k, v)| Hash::digest(v) == *k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn storing_twice_is_idempotent() {
        let mut store = ContentStore::new();
        let a = store.store_blob(b"abc").unwrap();
        let b = store.store_blob(b"abc").unwrap();
        assert_eq!(a, b);
        assert_eq!(store.len(), 1);
        assert_eq!(store.total_bytes(), 3);
    }

    #[test]
    fn distinct_blobs_get_distinct_keys() {
        let mut store = ContentStore::new();
        let a = store.store_blob(b"abc").unwrap();
        let b = store.store_blob(b"abd").unwrap();
        assert_ne!(a, b);
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn empty_blob_is_rejected() {
        assert_eq!(ContentStore::new().store_blob(b""), Err(StoreError::EmptyBlob));
    }
}
