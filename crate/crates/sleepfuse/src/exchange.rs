//! SFEB embedding exchange files.
//!
//! Little-endian throughout:
//!
//! ```text
//! "SFEB"  u32 version (1)  u32 dim  u32 modality  u64 count
//! count x { u16 id_len, id bytes, u32 epoch_index, dim x f32 }
//! ```
//!
//! Values are stored as f32. A store read from a file writes back to the
//! same bytes because every f32 widens to f64 exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use sleepfuse_core::encoders::{EncoderError, ExternalEmbeddingStore, Modality};
use thiserror::Error;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SFEB";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum ExchangeError {
    #[error("bad magic {0:?}, expected \"SFEB\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("unknown modality code {0}")]
    Modality(u32),
    #[error("file truncated at byte {at}: {what}")]
    Truncated { at: usize, what: &'static str },
    #[error("{0} bytes after the last record")]
    TrailingBytes(usize),
    #[error("record {0}: patient id is not UTF-8")]
    Utf8(u64),
    #[error("patient id {0:?} is longer than 65535 bytes")]
    IdTooLong(String),
    #[error("record {record}: {source}")]
    Record {
        record: u64,
        #[source]
        source: EncoderError,
    },
    #[error(transparent)]
    Store(#[from] EncoderError),
}

/// Cursor over a byte slice that reports where it ran out.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// `None` when fewer than `n` bytes are left; the cursor does not move.
    pub(crate) fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N).map(|s| s.try_into().unwrap())
    }

    pub(crate) fn u16(&mut self) -> Option<u16> {
        self.array().map(u16::from_le_bytes)
    }

    pub(crate) fn u32(&mut self) -> Option<u32> {
        self.array().map(u32::from_le_bytes)
    }

    pub(crate) fn u64(&mut self) -> Option<u64> {
        self.array().map(u64::from_le_bytes)
    }
}

pub fn encode(store: &ExternalEmbeddingStore) -> Result<Vec<u8>, ExchangeError> {
    let per_record = 2 + 4 + 4 * store.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + store.len() * (per_record + 8));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    out.extend_from_slice(&store.modality().code().to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (id, epoch, v) in store.iter() {
        let len = u16::try_from(id.len()).map_err(|_| ExchangeError::IdTooLong(id.into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        out.extend_from_slice(&epoch.to_le_bytes());
        for &x in &v.values {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<ExternalEmbeddingStore, ExchangeError> {
    let mut r = Reader::new(bytes);
    let short = |r: &Reader, what| ExchangeError::Truncated { at: r.pos(), what };
    let magic: [u8; 4] = r.array().ok_or_else(|| short(&r, "magic"))?;
    if &magic != MAGIC {
        return Err(ExchangeError::BadMagic(magic));
    }
    let version = r.u32().ok_or_else(|| short(&r, "version"))?;
    if version != VERSION {
        return Err(ExchangeError::Version(version));
    }
    let dim = r.u32().ok_or_else(|| short(&r, "dim"))? as usize;
    let code = r.u32().ok_or_else(|| short(&r, "modality"))?;
    let modality = Modality::from_code(code).ok_or(ExchangeError::Modality(code))?;
    let count = r.u64().ok_or_else(|| short(&r, "record count"))?;
    let mut store = ExternalEmbeddingStore::new(modality, dim)?;
    for record in 0..count {
        let len = r.u16().ok_or_else(|| short(&r, "patient id length"))? as usize;
        let id = r.take(len).ok_or_else(|| short(&r, "patient id"))?;
        let id = std::str::from_utf8(id).map_err(|_| ExchangeError::Utf8(record))?;
        let epoch = r.u32().ok_or_else(|| short(&r, "epoch index"))?;
        let raw = r.take(4 * dim).ok_or_else(|| short(&r, "embedding values"))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        store
            .insert(id, epoch, values)
            .map_err(|source| ExchangeError::Record { record, source })?;
    }
    if r.remaining() != 0 {
        return Err(ExchangeError::TrailingBytes(r.remaining()));
    }
    Ok(store)
}

/// Writes to a temporary file next to `path`, then renames it over `path`,
/// so readers never see a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(Error::io(&tmp))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io(path))
}

pub fn read_store(path: &Path) -> Result<ExternalEmbeddingStore> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode(&bytes).map_err(|source| Error::Exchange {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_store(path: &Path, store: &ExternalEmbeddingStore) -> Result<()> {
    let bytes = encode(store).map_err(|source| Error::Exchange {
        path: path.to_path_buf(),
        source,
    })?;
    write_atomic(path, &bytes)
}
