use std::collections::HashMap;
use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use super::{check_content, ContentId, ContentStore, StoreError};

/// In-process content store.
#[derive(Debug, Default)]
pub struct MemoryCas {
    objects: RwLock<HashMap<ContentId, Arc<Vec<u8>>>>,
}

impl MemoryCas {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.objects.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fault injection: replaces the bytes behind `cid` without rehashing.
    pub fn overwrite_unchecked(&self, cid: ContentId, bytes: Vec<u8>) {
        self.objects.write().unwrap().insert(cid, Arc::new(bytes));
    }

    /// Fault injection: drops an object.
    pub fn remove(&self, cid: &ContentId) -> bool {
        self.objects.write().unwrap().remove(cid).is_some()
    }
}

impl ContentStore for MemoryCas {
    fn put(&self, content: &[u8]) -> Result<ContentId, StoreError> {
        let cid = ContentId::for_content(content);
        self.objects
            .write()
            .unwrap()
            .entry(cid)
            .or_insert_with(|| Arc::new(content.to_vec()));
        Ok(cid)
    }

    fn get(&self, cid: &ContentId) -> Result<Vec<u8>, StoreError> {
        let bytes = self
            .objects
            .read()
            .unwrap()
            .get(cid)
            .cloned()
            .ok_or(StoreError::NotFound(*cid))?;
        check_content(cid, &bytes)?;
        Ok(bytes.as_ref().clone())
    }

    fn contains(&self, cid: &ContentId) -> Result<bool, StoreError> {
        Ok(self.objects.read().unwrap().contains_key(cid))
    }
}

/// Content store persisted as one file per object under
/// `<root>/<first two hex chars>/<cid>`.
#[derive(Debug, Clone)]
pub struct DirCas {
    root: PathBuf,
}

impl DirCas {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn path_for(&self, cid: &ContentId) -> PathBuf {
        let hex = cid.to_string();
        self.root.join(&hex[..2]).join(hex)
    }
}

impl ContentStore for DirCas {
    fn put(&self, content: &[u8]) -> Result<ContentId, StoreError> {
        let cid = ContentId::for_content(content);
        let path = self.path_for(&cid);
        if path.exists() {
            return Ok(cid);
        }
        let dir = path.parent().expect("object path has a parent");
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile_in(dir)?;
        tmp.1.write_all(content)?;
        tmp.1.sync_data()?;
        drop(tmp.1);
        fs::rename(&tmp.0, &path)?;
        Ok(cid)
    }

    fn get(&self, cid: &ContentId) -> Result<Vec<u8>, StoreError> {
        let bytes = match fs::read(self.path_for(cid)) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Err(StoreError::NotFound(*cid)),
            Err(e) => return Err(e.into()),
        };
        check_content(cid, &bytes)?;
        Ok(bytes)
    }

    fn contains(&self, cid: &ContentId) -> Result<bool, StoreError> {
        Ok(self.path_for(cid).exists())
    }
}

fn tempfile_in(dir: &Path) -> std::io::Result<(PathBuf, fs::File)> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    loop {
        let n = COUNTER.fetch_add(1, Ordering::Relaxed);
        let path = dir.join(format!(".tmp-{}-{n}", std::process::id()));
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => return Ok((path, f)),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
}
