//! On-disk formats and scene loading.
//!
//! Binary files share one layout: a four-byte magic, a little-endian `u32`
//! version, then a format-specific little-endian payload. Readers reject any
//! other magic or version.

use std::path::{Path, PathBuf};

use thiserror::Error;

mod archives;
mod manifest;
mod objmap;
mod raster;
mod tables;

pub use archives::{
    read_embeddings, read_masks, write_embeddings, write_masks, EmbeddingArchive,
    EmbeddingRecord, MaskArchive, MaskRecord, EMBEDDING_MAGIC, MASK_MAGIC,
};
pub use manifest::{load_scene, FrameEntry, Scene, SceneManifest};
pub use objmap::{read_object_map, write_object_map, ObjectMap, OBJECT_MAP_MAGIC};
pub use raster::{
    read_depth, read_gt_points, read_labels, read_pose, write_depth, write_gt_points,
    write_labels, write_pose, GtPoint, LabelMap, DEPTH_MAGIC, GT_POINTS_MAGIC, LABEL_MAGIC,
};
pub use tables::{
    read_gt_table, read_queries, write_gt_table, write_queries, write_results, GtObject,
    QueryRecord, ResultRecord,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: byte {offset}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        offset: usize,
        msg: String,
    },
    #[error("{}: line {line}: {msg}", path.display())]
    Syntax {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{}: bad magic {found:?}, expected {expected:?}", path.display())]
    Magic {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{}: unsupported format version {found}", path.display())]
    Version { path: PathBuf, found: u32 },
    #[error("{what}: {a_count} in {} but {b_count} in {}", a_path.display(), b_path.display())]
    CountMismatch {
        what: String,
        a_path: PathBuf,
        a_count: usize,
        b_path: PathBuf,
        b_count: usize,
    },
    #[error("{}: {msg}", path.display())]
    Invalid { path: PathBuf, msg: String },
}

impl IoError {
    pub(crate) fn invalid(path: &Path, msg: impl Into<String>) -> Self {
        Self::Invalid {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    pub(crate) fn syntax(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Self::Syntax {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `bytes`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let wrap = |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(wrap)?;
    }
    std::fs::write(path, bytes).map_err(wrap)
}

/// Cursor over a binary file that reports truncation with the byte offset.
pub(crate) struct ByteReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    /// Checks magic and version and leaves the cursor after them.
    pub fn open(path: &'a Path, bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self, IoError> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            let n = bytes.len().min(4);
            return Err(IoError::Magic {
                path: path.to_path_buf(),
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(&bytes[..n]).into_owned(),
            });
        }
        let mut r = Self {
            path,
            bytes,
            pos: 4,
        };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(IoError::Version {
                path: path.to_path_buf(),
                found: version,
            });
        }
        Ok(r)
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub fn error(&self, offset: usize, msg: impl Into<String>) -> IoError {
        IoError::Parse {
            path: self.path.to_path_buf(),
            offset,
            msg: msg.into(),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(
                self.pos,
                format!(
                    "truncated: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, IoError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32, IoError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Fails unless every byte was consumed.
    pub fn finish(&self) -> Result<(), IoError> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.error(
                self.pos,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ))
        }
    }
}

/// Little-endian writer with the shared header.
pub(crate) struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new(magic: &[u8; 4]) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        Self { buf }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}
