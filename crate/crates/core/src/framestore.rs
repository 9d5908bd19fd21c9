//! Named single-writer/multi-reader frame buffers.
//!
//! A store holds exactly one frame. The writer replaces it in place and bumps
//! a sequence number; readers block until the sequence passes the last one
//! they saw and then copy the newest frame out. Frames in between may be
//! skipped. Readers never see a partially written frame and never slow the
//! writer down by more than the duration of one copy.
//!
//! Two realizations share the contract: [`FrameStores::in_process`] for
//! threads of one process and [`FrameStores::directory`] for separate
//! processes, backed by a file in a tmpfs directory guarded by a seqlock.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::clock::Micros;
use crate::messages::PixelFormat;

pub const DEFAULT_WAIT: Duration = Duration::from_millis(500);

#[derive(Debug, Error)]
pub enum FrameStoreError {
    #[error("invalid store name `{0}`: use [A-Za-z0-9_.-]+")]
    InvalidName(String),
    #[error("frame store `{0}` already exists")]
    NameInUse(String),
    #[error("frame store `{0}` not found")]
    NotFound(String),
    #[error("frame has {got} bytes, store expects {expected}")]
    WrongSize { expected: usize, got: usize },
    #[error("no new frame within {0:?}")]
    Timeout(Duration),
    #[error("invalid frame geometry: {0}")]
    InvalidGeometry(String),
    #[error("frame store `{0}` is corrupt")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameGeometry {
    pub width: u32,
    pub height: u32,
    pub format: PixelFormat,
}

impl FrameGeometry {
    pub fn new(width: u32, height: u32, format: PixelFormat) -> Self {
        Self { width, height, format }
    }

    pub fn frame_len(&self) -> usize {
        self.width as usize * self.height as usize * self.format.bytes_per_pixel()
    }
}

/// A private copy of one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub pixels: Vec<u8>,
    pub sequence: u64,
    pub sample_ts: Micros,
}

pub fn is_valid_store_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
        && name != "."
        && name != ".."
}

/// A namespace in which stores are created and attached to by name.
#[derive(Clone)]
pub enum FrameStores {
    InProcess(Arc<Mutex<HashMap<String, Weak<MemStore>>>>),
    Directory(PathBuf),
}

impl FrameStores {
    pub fn in_process() -> Self {
        FrameStores::InProcess(Arc::default())
    }

    pub fn directory(dir: impl Into<PathBuf>) -> Self {
        FrameStores::Directory(dir.into())
    }

    /// Per-host shared realization: `/dev/shm` when present, else the temp dir.
    pub fn host_shared() -> Self {
        let shm = Path::new("/dev/shm");
        if shm.is_dir() {
            Self::directory(shm)
        } else {
            Self::directory(std::env::temp_dir())
        }
    }

    pub fn create(
        &self,
        name: &str,
        width: u32,
        height: u32,
        format: PixelFormat,
    ) -> Result<FrameWriter, FrameStoreError> {
        if !is_valid_store_name(name) {
            return Err(FrameStoreError::InvalidName(name.into()));
        }
        if width == 0 || height == 0 {
            return Err(FrameStoreError::InvalidGeometry(format!("{width}x{height}")));
        }
        let geometry = FrameGeometry::new(width, height, format);
        let inner = match self {
            FrameStores::InProcess(registry) => {
                let mut reg = registry.lock().unwrap();
                if reg.get(name).and_then(Weak::upgrade).is_some() {
                    return Err(FrameStoreError::NameInUse(name.into()));
                }
                let store = Arc::new(MemStore::new(geometry));
                reg.insert(name.to_string(), Arc::downgrade(&store));
                WriterInner::Memory(store)
            }
            FrameStores::Directory(dir) => WriterInner::File(FileStore::create(dir, name, geometry)?),
        };
        Ok(FrameWriter {
            name: name.to_string(),
            geometry,
            inner,
        })
    }

    pub fn attach(&self, name: &str) -> Result<FrameReader, FrameStoreError> {
        if !is_valid_store_name(name) {
            return Err(FrameStoreError::InvalidName(name.into()));
        }
        let (geometry, inner) = match self {
            FrameStores::InProcess(registry) => {
                let store = registry
                    .lock()
                    .unwrap()
                    .get(name)
                    .and_then(Weak::upgrade)
                    .ok_or_else(|| FrameStoreError::NotFound(name.into()))?;
                (store.geometry, ReaderInner::Memory(store))
            }
            FrameStores::Directory(dir) => {
                let file = FileStore::open(dir, name)?;
                (file.geometry, ReaderInner::File(file))
            }
        };
        Ok(FrameReader {
            name: name.to_string(),
            geometry,
            inner,
        })
    }
}

pub struct FrameWriter {
    name: String,
    geometry: FrameGeometry,
    inner: WriterInner,
}

enum WriterInner {
    Memory(Arc<MemStore>),
    File(FileStore),
}

impl FrameWriter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn geometry(&self) -> FrameGeometry {
        self.geometry
    }

    /// Replace the stored frame. Returns the new sequence number.
    pub fn write_frame(&mut self, pixels: &[u8], sample_ts: Micros) -> Result<u64, FrameStoreError> {
        let expected = self.geometry.frame_len();
        if pixels.len() != expected {
            return Err(FrameStoreError::WrongSize {
                expected,
                got: pixels.len(),
            });
        }
        match &mut self.inner {
            WriterInner::Memory(store) => Ok(store.write(pixels, sample_ts)),
            WriterInner::File(file) => file.write(pixels, sample_ts),
        }
    }
}

impl Drop for FrameWriter {
    fn drop(&mut self) {
        if let WriterInner::File(file) = &self.inner {
            let _ = fs::remove_file(&file.path);
        }
    }
}

pub struct FrameReader {
    name: String,
    geometry: FrameGeometry,
    inner: ReaderInner,
}

enum ReaderInner {
    Memory(Arc<MemStore>),
    File(FileStore),
}

impl FrameReader {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn geometry(&self) -> FrameGeometry {
        self.geometry
    }

    /// Block until a frame newer than `last_seen` exists, then copy it out.
    pub fn wait_and_copy(&self, last_seen: u64, timeout: Duration) -> Result<Frame, FrameStoreError> {
        match &self.inner {
            ReaderInner::Memory(store) => store.wait_and_copy(last_seen, timeout),
            ReaderInner::File(file) => file.wait_and_copy(last_seen, timeout),
        }
    }

    /// Sequence of the frame currently held, 0 before the first write.
    pub fn sequence(&self) -> Result<u64, FrameStoreError> {
        match &self.inner {
            ReaderInner::Memory(store) => Ok(store.sequence()),
            ReaderInner::File(file) => Ok(file.read_generation()? / 2),
        }
    }
}

struct Slot {
    pixels: Arc<Vec<u8>>,
    sequence: u64,
    sample_ts: Micros,
}

/// In-process store. The lock only guards a pointer swap; pixel copies on
/// both sides happen outside it, so slow readers never hold up the writer.
pub struct MemStore {
    geometry: FrameGeometry,
    slot: Mutex<Slot>,
    fresh: Condvar,
    /// Retired buffers, reused once no reader holds them.
    retired: Mutex<Vec<Arc<Vec<u8>>>>,
}

impl MemStore {
    fn new(geometry: FrameGeometry) -> Self {
        Self {
            geometry,
            slot: Mutex::new(Slot {
                pixels: Arc::new(vec![0; geometry.frame_len()]),
                sequence: 0,
                sample_ts: 0,
            }),
            fresh: Condvar::new(),
            retired: Mutex::new(Vec::new()),
        }
    }

    fn write(&self, pixels: &[u8], sample_ts: Micros) -> u64 {
        const KEEP: usize = 4;
        let mut retired = self.retired.lock().unwrap();
        let mut buf = match retired.iter().position(|b| Arc::strong_count(b) == 1) {
            Some(i) => retired.swap_remove(i),
            None => Arc::new(vec![0; pixels.len()]),
        };
        Arc::get_mut(&mut buf).expect("unshared buffer").copy_from_slice(pixels);
        let (seq, old) = {
            let mut slot = self.slot.lock().unwrap();
            let old = std::mem::replace(&mut slot.pixels, buf);
            slot.sequence += 1;
            slot.sample_ts = sample_ts;
            (slot.sequence, old)
        };
        self.fresh.notify_all();
        retired.push(old);
        if retired.len() > KEEP {
            retired.remove(0);
        }
        seq
    }

    fn sequence(&self) -> u64 {
        self.slot.lock().unwrap().sequence
    }

    fn wait_and_copy(&self, last_seen: u64, timeout: Duration) -> Result<Frame, FrameStoreError> {
        let (pixels, sequence, sample_ts) = {
            let slot = self.slot.lock().unwrap();
            let (slot, _) = self
                .fresh
                .wait_timeout_while(slot, timeout, |s| s.sequence <= last_seen)
                .unwrap();
            if slot.sequence <= last_seen {
                return Err(FrameStoreError::Timeout(timeout));
            }
            (Arc::clone(&slot.pixels), slot.sequence, slot.sample_ts)
        };
        Ok(Frame {
            pixels: pixels.to_vec(),
            sequence,
            sample_ts,
        })
    }
}

const FILE_MAGIC: &[u8; 4] = b"LPFS";
const FILE_VERSION: u32 = 1;
const OFF_GENERATION: u64 = 24;
const OFF_SAMPLE_TS: u64 = 32;
const HEADER_LEN: u64 = 40;
const POLL_INTERVAL: Duration = Duration::from_micros(500);

/// File-backed store. The generation counter is `2 * sequence` while the
/// frame is stable and odd while a write is in progress.
struct FileStore {
    path: PathBuf,
    file: File,
    geometry: FrameGeometry,
    generation: u64,
}

impl FileStore {
    fn path_for(dir: &Path, name: &str) -> PathBuf {
        dir.join(format!("lanepipe-{name}.frame"))
    }

    fn create(dir: &Path, name: &str, geometry: FrameGeometry) -> Result<Self, FrameStoreError> {
        let path = Self::path_for(dir, name);
        let file = match OpenOptions::new().read(true).write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                if owner_alive(&path) {
                    return Err(FrameStoreError::NameInUse(name.into()));
                }
                // left behind by a writer that no longer exists
                fs::remove_file(&path)?;
                OpenOptions::new()
                    .read(true)
                    .write(true)
                    .create_new(true)
                    .open(&path)
                    .map_err(|e| match e.kind() {
                        io::ErrorKind::AlreadyExists => FrameStoreError::NameInUse(name.into()),
                        _ => e.into(),
                    })?
            }
            Err(e) => return Err(e.into()),
        };
        let mut header = Vec::with_capacity(HEADER_LEN as usize);
        header.extend_from_slice(FILE_MAGIC);
        header.extend_from_slice(&FILE_VERSION.to_le_bytes());
        header.extend_from_slice(&geometry.width.to_le_bytes());
        header.extend_from_slice(&geometry.height.to_le_bytes());
        header.extend_from_slice(&(geometry.format.bytes_per_pixel() as u32).to_le_bytes());
        header.extend_from_slice(&std::process::id().to_le_bytes());
        header.extend_from_slice(&0u64.to_le_bytes());
        header.extend_from_slice(&0u64.to_le_bytes());
        file.set_len(HEADER_LEN + geometry.frame_len() as u64)?;
        file.write_all_at(&header, 0)?;
        Ok(Self {
            path,
            file,
            geometry,
            generation: 0,
        })
    }

    fn open(dir: &Path, name: &str) -> Result<Self, FrameStoreError> {
        let path = Self::path_for(dir, name);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(FrameStoreError::NotFound(name.into())),
            Err(e) => return Err(e.into()),
        };
        let mut header = [0u8; HEADER_LEN as usize];
        file.read_exact_at(&mut header, 0)
            .map_err(|_| FrameStoreError::Corrupt(name.into()))?;
        if &header[0..4] != FILE_MAGIC || le_u32(&header, 4) != FILE_VERSION {
            return Err(FrameStoreError::Corrupt(name.into()));
        }
        let format = match le_u32(&header, 16) {
            1 => PixelFormat::Gray8,
            3 => PixelFormat::Rgb8,
            _ => return Err(FrameStoreError::Corrupt(name.into())),
        };
        let geometry = FrameGeometry::new(le_u32(&header, 8), le_u32(&header, 12), format);
        Ok(Self {
            path,
            file,
            geometry,
            generation: 0,
        })
    }

    fn write(&mut self, pixels: &[u8], sample_ts: Micros) -> Result<u64, FrameStoreError> {
        let writing = self.generation + 1;
        self.file.write_all_at(&writing.to_le_bytes(), OFF_GENERATION)?;
        self.file.write_all_at(&sample_ts.to_le_bytes(), OFF_SAMPLE_TS)?;
        self.file.write_all_at(pixels, HEADER_LEN)?;
        self.generation += 2;
        self.file.write_all_at(&self.generation.to_le_bytes(), OFF_GENERATION)?;
        Ok(self.generation / 2)
    }

    fn read_generation(&self) -> io::Result<u64> {
        let mut b = [0u8; 8];
        self.file.read_exact_at(&mut b, OFF_GENERATION)?;
        Ok(u64::from_le_bytes(b))
    }

    fn wait_and_copy(&self, last_seen: u64, timeout: Duration) -> Result<Frame, FrameStoreError> {
        let deadline = Instant::now() + timeout;
        let mut pixels = vec![0u8; self.geometry.frame_len()];
        loop {
            let before = self.read_generation()?;
            if before % 2 == 0 && before / 2 > last_seen {
                let mut ts = [0u8; 8];
                self.file.read_exact_at(&mut ts, OFF_SAMPLE_TS)?;
                self.file.read_exact_at(&mut pixels, HEADER_LEN)?;
                if self.read_generation()? == before {
                    return Ok(Frame {
                        pixels,
                        sequence: before / 2,
                        sample_ts: u64::from_le_bytes(ts),
                    });
                }
                continue;
            }
            if Instant::now() >= deadline {
                return Err(FrameStoreError::Timeout(timeout));
            }
            std::thread::sleep(POLL_INTERVAL);
        }
    }
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn owner_alive(path: &Path) -> bool {
    let Ok(file) = File::open(path) else {
        return false;
    };
    let mut b = [0u8; 4];
    if file.read_exact_at(&mut b, 20).is_err() {
        return false;
    }
    let pid = u32::from_le_bytes(b);
    pid != 0 && Path::new(&format!("/proc/{pid}")).exists()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    fn realizations() -> Vec<(FrameStores, Option<tempfile::TempDir>)> {
        let dir = tempfile::tempdir().unwrap();
        vec![
            (FrameStores::in_process(), None),
            (FrameStores::directory(dir.path()), Some(dir)),
        ]
    }

    #[test]
    fn create_and_attach() {
        for (stores, _guard) in realizations() {
            let _w = stores.create("cam0", 640, 480, PixelFormat::Rgb8).unwrap();
            let r = stores.attach("cam0").unwrap();
            assert_eq!(r.geometry().width, 640);
            assert_eq!(r.geometry().height, 480);
            assert_eq!(r.geometry().format, PixelFormat::Rgb8);
            assert!(matches!(stores.attach("nope"), Err(FrameStoreError::NotFound(_))));
            assert!(matches!(
                stores.create("cam0", 1, 1, PixelFormat::Gray8),
                Err(FrameStoreError::NameInUse(_))
            ));
            assert!(matches!(
                stores.create("../x", 1, 1, PixelFormat::Gray8),
                Err(FrameStoreError::InvalidName(_))
            ));
        }
    }

    #[test]
    fn sequence_counts_writes() {
        for (stores, _guard) in realizations() {
            let mut w = stores.create("s", 2, 2, PixelFormat::Gray8).unwrap();
            let r = stores.attach("s").unwrap();
            assert_eq!(r.sequence().unwrap(), 0);
            assert_eq!(w.write_frame(&[1; 4], 10).unwrap(), 1);
            for n in 2..=5 {
                assert_eq!(w.write_frame(&[n as u8; 4], 10 * n).unwrap(), n);
            }
            assert!(matches!(
                w.write_frame(&[0; 3], 0),
                Err(FrameStoreError::WrongSize { expected: 4, got: 3 })
            ));
            assert_eq!(r.sequence().unwrap(), 5);
            let f = r.wait_and_copy(0, Duration::from_millis(10)).unwrap();
            assert_eq!(f.sequence, 5);
            assert_eq!(f.sample_ts, 50);
            assert_eq!(f.pixels, vec![5; 4]);
        }
    }

    #[test]
    fn reader_skips_to_latest() {
        for (stores, _guard) in realizations() {
            let mut w = stores.create("skip", 3, 1, PixelFormat::Gray8).unwrap();
            let r = stores.attach("skip").unwrap();
            // both writes land while the reader is busy elsewhere
            w.write_frame(&[1; 3], 100).unwrap();
            w.write_frame(&[2; 3], 200).unwrap();
            let f = r.wait_and_copy(0, Duration::from_millis(50)).unwrap();
            assert_eq!((f.sequence, f.sample_ts, f.pixels), (2, 200, vec![2; 3]));
        }
    }

    #[test]
    fn timeout_without_new_frame() {
        for (stores, _guard) in realizations() {
            let mut w = stores.create("idle", 1, 1, PixelFormat::Gray8).unwrap();
            w.write_frame(&[0], 0).unwrap();
            let r = stores.attach("idle").unwrap();
            let t0 = Instant::now();
            let res = r.wait_and_copy(1, Duration::from_millis(30));
            assert!(matches!(res, Err(FrameStoreError::Timeout(_))));
            assert!(t0.elapsed() >= Duration::from_millis(30));
        }
    }

    #[test]
    fn blocked_reader_is_woken() {
        for (stores, _guard) in realizations() {
            let mut w = stores.create("wake", 1, 1, PixelFormat::Gray8).unwrap();
            let r = stores.attach("wake").unwrap();
            let h = thread::spawn(move || r.wait_and_copy(0, Duration::from_secs(2)).unwrap());
            thread::sleep(Duration::from_millis(20));
            w.write_frame(&[9], 1).unwrap();
            let f = h.join().unwrap();
            assert_eq!(f.pixels, vec![9]);
        }
    }

    #[test]
    fn name_is_released_when_writer_drops() {
        for (stores, _guard) in realizations() {
            let w = stores.create("again", 1, 1, PixelFormat::Gray8).unwrap();
            drop(w);
            assert!(stores.create("again", 1, 1, PixelFormat::Gray8).is_ok());
        }
    }

    #[test]
    fn stale_file_from_dead_owner_is_replaced() {
        let dir = tempfile::tempdir().unwrap();
        let stores = FrameStores::directory(dir.path());
        let w = stores.create("stale", 1, 1, PixelFormat::Gray8).unwrap();
        let path = FileStore::path_for(dir.path(), "stale");
        std::mem::forget(w);
        // pid 0 never names a live owner
        let f = OpenOptions::new().write(true).open(&path).unwrap();
        f.write_all_at(&0u32.to_le_bytes(), 20).unwrap();
        assert!(stores.create("stale", 1, 1, PixelFormat::Gray8).is_ok());
    }

    #[test]
    fn store_name_rules() {
        assert!(is_valid_store_name("cam0"));
        assert!(is_valid_store_name("front.left-1_a"));
        assert!(!is_valid_store_name(""));
        assert!(!is_valid_store_name("a/b"));
        assert!(!is_valid_store_name(".."));
        assert!(!is_valid_store_name("cam 0"));
    }
}
