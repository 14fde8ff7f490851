//! Backing-store contract and the two stock implementations.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use crate::error::StoreError;
use crate::DeviceId;

/// The slow storage behind the cache.
///
/// `buf`/`data` are `None` when the engine runs without a data area and only
/// the traffic matters; `len` is authoritative either way.
pub trait BackingStore {
    fn read(&mut self, dev: DeviceId, offset: u64, len: u64, buf: Option<&mut [u8]>) -> Result<(), StoreError>;
    fn write(&mut self, dev: DeviceId, offset: u64, len: u64, data: Option<&[u8]>) -> Result<(), StoreError>;
}

impl<S: BackingStore + ?Sized> BackingStore for Box<S> {
    fn read(&mut self, dev: DeviceId, offset: u64, len: u64, buf: Option<&mut [u8]>) -> Result<(), StoreError> {
        (**self).read(dev, offset, len, buf)
    }

    fn write(&mut self, dev: DeviceId, offset: u64, len: u64, data: Option<&[u8]>) -> Result<(), StoreError> {
        (**self).write(dev, offset, len, data)
    }
}

/// Counts traffic and returns zeros.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct NullStore {
    pub read_ops: u64,
    pub read_bytes: u64,
    pub write_ops: u64,
    pub write_bytes: u64,
}

impl NullStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl BackingStore for NullStore {
    fn read(&mut self, _dev: DeviceId, _offset: u64, len: u64, buf: Option<&mut [u8]>) -> Result<(), StoreError> {
        self.read_ops += 1;
        self.read_bytes += len;
        if let Some(buf) = buf {
            buf.fill(0);
        }
        Ok(())
    }

    fn write(&mut self, _dev: DeviceId, _offset: u64, len: u64, _data: Option<&[u8]>) -> Result<(), StoreError> {
        self.write_ops += 1;
        self.write_bytes += len;
        Ok(())
    }
}

/// One sparse file per device under a directory (`dev-<id>.img`). Reads past
/// the end of a file return zeros.
#[derive(Debug)]
pub struct FileStore {
    dir: PathBuf,
    files: HashMap<DeviceId, File>,
}

impl FileStore {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(FileStore { dir, files: HashMap::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn device_path(&self, dev: DeviceId) -> PathBuf {
        self.dir.join(format!("dev-{}.img", dev.0))
    }

    fn file(&mut self, dev: DeviceId) -> std::io::Result<&File> {
        if !self.files.contains_key(&dev) {
            let f = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(self.device_path(dev))?;
            self.files.insert(dev, f);
        }
        Ok(&self.files[&dev])
    }
}

impl BackingStore for FileStore {
    fn read(&mut self, dev: DeviceId, offset: u64, len: u64, buf: Option<&mut [u8]>) -> Result<(), StoreError> {
        let Some(buf) = buf else { return Ok(()) };
        debug_assert_eq!(buf.len() as u64, len);
        let io = |source| StoreError::Io { dev, offset, source };
        let f = self.file(dev).map_err(io)?;
        let mut done = 0;
        while done < buf.len() {
            let n = f.read_at(&mut buf[done..], offset + done as u64).map_err(io)?;
            if n == 0 {
                buf[done..].fill(0);
                break;
            }
            done += n;
        }
        Ok(())
    }

    fn write(&mut self, dev: DeviceId, offset: u64, len: u64, data: Option<&[u8]>) -> Result<(), StoreError> {
        let data = data.ok_or(StoreError::MissingPayload { dev, offset })?;
        debug_assert_eq!(data.len() as u64, len);
        let io = |source| StoreError::Io { dev, offset, source };
        self.file(dev).map_err(io)?.write_all_at(data, offset).map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_store_counts() {
        let mut s = NullStore::new();
        let mut buf = vec![7u8; 16];
        s.read(DeviceId(0), 0, 16, Some(&mut buf)).unwrap();
        assert!(buf.iter().all(|b| *b == 0));
        s.read(DeviceId(0), 0, 100, None).unwrap();
        s.write(DeviceId(1), 0, 8, None).unwrap();
        assert_eq!((s.read_ops, s.read_bytes, s.write_ops, s.write_bytes), (2, 116, 1, 8));
    }

    #[test]
    fn file_store_sparse_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = FileStore::new(dir.path()).unwrap();
        s.write(DeviceId(3), 1 << 20, 4, Some(b"abcd")).unwrap();
        let mut buf = vec![1u8; 8];
        s.read(DeviceId(3), (1 << 20) - 2, 8, Some(&mut buf)).unwrap();
        assert_eq!(&buf, &[0, 0, b'a', b'b', b'c', b'd', 0, 0]);
        assert!(matches!(s.write(DeviceId(3), 0, 4, None), Err(StoreError::MissingPayload { .. })));
        assert!(s.device_path(DeviceId(3)).exists());
    }
}
