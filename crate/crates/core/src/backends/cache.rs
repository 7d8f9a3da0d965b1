//! Append-only transcript store.
//!
//! Layout of a cache directory:
//!
//! ```text
//! <dir>/transcripts.jsonl        one OracleTranscript per line
//! <dir>/images/<aa>/<sha256>.png content-addressed image files
//! ```
//!
//! `(request_hash, sample_index)` is unique within a file. Re-recording an
//! existing key rewrites the file with the new transcript in place.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::request::{sha256_hex, BackendKind, BackendRequest};
use super::BackendError;

pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Response {
    Text(String),
    Vector(Vec<f64>),
    /// SHA-256 of the PNG bytes stored under `images/`.
    Image(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTranscript {
    pub request_hash: String,
    pub sample_index: u32,
    pub backend_kind: BackendKind,
    pub payload: Value,
    pub response: Response,
    /// Seconds since the Unix epoch at record time.
    pub timestamp: u64,
    /// Model name/version of the answering backend.
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl OracleTranscript {
    pub fn new(request: &BackendRequest, response: Response, backend: impl Into<String>) -> Self {
        Self {
            request_hash: request.hash(),
            sample_index: request.sample_index,
            backend_kind: request.kind,
            payload: request.payload.clone(),
            response,
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            backend: backend.into(),
            warning: None,
        }
    }

    fn key(&self) -> (String, u32) {
        (self.request_hash.clone(), self.sample_index)
    }
}

#[derive(Default)]
struct Store {
    entries: Vec<OracleTranscript>,
    index: HashMap<(String, u32), usize>,
}

pub struct Cache {
    dir: PathBuf,
    read_only: bool,
    store: RwLock<Store>,
    writer: Mutex<Option<BufWriter<File>>>,
}

impl Cache {
    /// Opens (creating if needed) a writable cache directory.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, BackendError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join(IMAGES_DIR)).map_err(|e| io_err(&dir, e))?;
        Self::load(dir, false)
    }

    /// Opens an existing cache for replay; writes are rejected.
    pub fn open_read_only(dir: impl AsRef<Path>) -> Result<Self, BackendError> {
        let dir = dir.as_ref().to_path_buf();
        if !dir.join(TRANSCRIPTS_FILE).exists() {
            return Err(BackendError::Config(format!("no cache at {}", dir.display())));
        }
        Self::load(dir, true)
    }

    fn load(dir: PathBuf, read_only: bool) -> Result<Self, BackendError> {
        let path = dir.join(TRANSCRIPTS_FILE);
        let mut store = Store::default();
        if path.exists() {
            let file = File::open(&path).map_err(|e| io_err(&path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| io_err(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let t: OracleTranscript = serde_json::from_str(&line).map_err(|e| BackendError::Parse {
                    source_name: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                match store.index.get(&t.key()) {
                    Some(&slot) => store.entries[slot] = t,
                    None => {
                        let slot = store.entries.len();
                        store.index.insert(t.key(), slot);
                        store.entries.push(t);
                    }
                }
            }
        }
        Ok(Self { dir, read_only, store: RwLock::new(store), writer: Mutex::new(None) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn is_read_only(&self) -> bool {
        self.read_only
    }

    pub fn len(&self) -> usize {
        self.store.read().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, request: &BackendRequest) -> Option<OracleTranscript> {
        self.get_by_key(&request.hash(), request.sample_index)
    }

    pub fn get_by_key(&self, hash: &str, sample_index: u32) -> Option<OracleTranscript> {
        let store = self.store.read().unwrap();
        store.index.get(&(hash.to_string(), sample_index)).map(|i| store.entries[*i].clone())
    }

    pub fn put(&self, transcript: OracleTranscript) -> Result<(), BackendError> {
        if self.read_only {
            return Err(BackendError::Config("cache opened read-only (replay mode)".into()));
        }
        let mut store = self.store.write().unwrap();
        let key = transcript.key();
        if let Some(&slot) = store.index.get(&key) {
            if store.entries[slot] == transcript {
                return Ok(());
            }
            store.entries[slot] = transcript;
            return self.rewrite(&store);
        }
        let line = serde_json::to_string(&transcript).expect("transcript serializes");
        let slot = store.entries.len();
        store.index.insert(key, slot);
        store.entries.push(transcript);
        let mut writer = self.writer.lock().unwrap();
        if writer.is_none() {
            let path = self.dir.join(TRANSCRIPTS_FILE);
            let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| io_err(&path, e))?;
            *writer = Some(BufWriter::new(file));
        }
        let w = writer.as_mut().unwrap();
        writeln!(w, "{line}").map_err(|e| io_err(&self.dir, e))
    }

    fn rewrite(&self, store: &Store) -> Result<(), BackendError> {
        let mut writer = self.writer.lock().unwrap();
        if let Some(w) = writer.as_mut() {
            w.flush().map_err(|e| io_err(&self.dir, e))?;
        }
        *writer = None;
        let path = self.dir.join(TRANSCRIPTS_FILE);
        let tmp = self.dir.join(format!("{TRANSCRIPTS_FILE}.tmp"));
        {
            let mut w = BufWriter::new(File::create(&tmp).map_err(|e| io_err(&tmp, e))?);
            for t in &store.entries {
                writeln!(w, "{}", serde_json::to_string(t).unwrap()).map_err(|e| io_err(&tmp, e))?;
            }
            w.flush().map_err(|e| io_err(&tmp, e))?;
        }
        fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
    }

    pub fn flush(&self) -> Result<(), BackendError> {
        if let Some(w) = self.writer.lock().unwrap().as_mut() {
            w.flush().map_err(|e| io_err(&self.dir, e))?;
        }
        Ok(())
    }

    pub fn image_path(&self, hash: &str) -> PathBuf {
        let fan = hash.get(..2).unwrap_or("xx");
        self.dir.join(IMAGES_DIR).join(fan).join(format!("{hash}.png"))
    }

    /// Stores PNG bytes by content hash and returns the hash.
    pub fn put_image(&self, png: &[u8]) -> Result<String, BackendError> {
        if self.read_only {
            return Err(BackendError::Config("cache opened read-only (replay mode)".into()));
        }
        let hash = sha256_hex(png);
        let path = self.image_path(&hash);
        if !path.exists() {
            fs::create_dir_all(path.parent().unwrap()).map_err(|e| io_err(&path, e))?;
            fs::write(&path, png).map_err(|e| io_err(&path, e))?;
        }
        Ok(hash)
    }

    pub fn image_bytes(&self, hash: &str) -> Result<Vec<u8>, BackendError> {
        let path = self.image_path(hash);
        fs::read(&path).map_err(|_| BackendError::MissingImage(hash.to_string()))
    }

    pub fn has_image(&self, hash: &str) -> bool {
        self.image_path(hash).exists()
    }

    /// SHA-256 of the transcript file contents; identifies the cache in reports.
    pub fn identity(&self) -> Result<String, BackendError> {
        self.flush()?;
        let path = self.dir.join(TRANSCRIPTS_FILE);
        match fs::read(&path) {
            Ok(bytes) => Ok(sha256_hex(&bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(sha256_hex(b"")),
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl Drop for Cache {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

fn io_err(path: &Path, e: std::io::Error) -> BackendError {
    BackendError::Io(format!("{}: {e}", path.display()))
}
