//! `REMB` binary embedding files and their JSON-lines metadata sidecar.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   b"REMB"
//! version u32 = 1
//! dim     u32
//! count   u64
//! count × { frame_id u64, dim × f32 }
//! ```
//!
//! The sidecar holds one JSON object per line:
//! `{"frame_id": .., "scene": .., "pose": [x, y]?, "category_scores": {..}?}`.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedstore::{EmbeddingRecord, Store, StoreError};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"REMB";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 20;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u32),
    #[error("vector of length {got} in a file of dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("truncated file: header promises {expected} records, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("sidecar line {line}: {error}")]
    Sidecar { line: usize, error: serde_json::Error },
    #[error("frame {0} has no sidecar entry")]
    MissingMeta(u64),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub frame_id: u64,
    pub scene: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_scores: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RembRecord {
    pub frame_id: u64,
    pub vector: Vec<f32>,
}

fn write_header(w: &mut impl Write, dim: u32, count: u64) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())
}

fn write_body(w: &mut impl Write, frame_id: u64, vector: &[f32]) -> io::Result<()> {
    w.write_all(&frame_id.to_le_bytes())?;
    for x in vector {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Serialize records to any writer.
pub fn write_remb<W: Write>(w: W, dim: usize, records: &[RembRecord]) -> Result<(), FormatError> {
    let mut w = BufWriter::new(w);
    write_header(&mut w, dim as u32, records.len() as u64)?;
    for r in records {
        if r.vector.len() != dim {
            return Err(FormatError::Dimension {
                expected: dim,
                got: r.vector.len(),
            });
        }
        write_body(&mut w, r.frame_id, &r.vector)?;
    }
    w.flush()?;
    Ok(())
}

fn read_header(r: &mut impl Read) -> Result<(usize, u64), FormatError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(FormatError::BadVersion(version));
    }
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    Ok((dim, u64::from_le_bytes(b8)))
}

/// Read `count` records after the header. Bytes beyond the promised count
/// are ignored (an append may have been interrupted before the header
/// update).
fn read_body(r: &mut impl Read, dim: usize, count: u64) -> Result<Vec<RembRecord>, FormatError> {
    let mut out = Vec::with_capacity(count.min(1 << 20) as usize);
    let mut buf = vec![0u8; 8 + 4 * dim];
    for i in 0..count {
        if let Err(e) = r.read_exact(&mut buf) {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                return Err(FormatError::Truncated {
                    expected: count,
                    found: i,
                });
            }
            return Err(e.into());
        }
        let frame_id = u64::from_le_bytes(buf[..8].try_into().unwrap());
        let vector = buf[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(RembRecord { frame_id, vector });
    }
    Ok(out)
}

/// Parse records from any reader. Returns `(dimension, records)`.
pub fn read_remb<R: Read>(r: R) -> Result<(usize, Vec<RembRecord>), FormatError> {
    let mut r = BufReader::new(r);
    let (dim, count) = read_header(&mut r)?;
    let records = read_body(&mut r, dim, count)?;
    Ok((dim, records))
}

pub fn write_sidecar<W: Write>(w: W, entries: &[SidecarEntry]) -> Result<(), FormatError> {
    let mut w = BufWriter::new(w);
    for e in entries {
        serde_json::to_writer(&mut w, e).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sidecar<R: Read>(r: R) -> Result<Vec<SidecarEntry>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|error| FormatError::Sidecar { line: i + 1, error })?;
        out.push(e);
    }
    Ok(out)
}

/// Split store contents into file records and sidecar entries.
pub fn export_store<T: Scalar>(store: &Store<T>) -> (Vec<RembRecord>, Vec<SidecarEntry>) {
    (0..store.len())
        .map(|i| {
            let m = store.meta(i);
            (
                RembRecord {
                    frame_id: m.frame_id,
                    vector: store.vector(i).iter().map(|x| x.to_f32().unwrap()).collect(),
                },
                SidecarEntry {
                    frame_id: m.frame_id,
                    scene: m.scene_id.clone(),
                    pose: m.eval_pose(),
                    category_scores: m.category_scores.clone(),
                },
            )
        })
        .unzip()
}

/// Join file records with sidecar metadata into store-ready records.
pub fn join_records<T: Scalar>(
    records: Vec<RembRecord>,
    sidecar: Vec<SidecarEntry>,
) -> Result<Vec<EmbeddingRecord<T>>, FormatError> {
    let mut meta: std::collections::HashMap<u64, SidecarEntry> = sidecar.into_iter().map(|e| (e.frame_id, e)).collect();
    records
        .into_iter()
        .map(|r| {
            let m = meta.remove(&r.frame_id).ok_or(FormatError::MissingMeta(r.frame_id))?;
            Ok(EmbeddingRecord {
                frame_id: r.frame_id,
                vector: r.vector.into_iter().map(|x| T::of(x as f64)).collect(),
                scene_id: m.scene,
                pose: m.pose,
                category_scores: m.category_scores,
            })
        })
        .collect()
}

pub fn save_store<T: Scalar>(store: &Store<T>, remb: &Path, sidecar: &Path) -> Result<(), FormatError> {
    let (recs, meta) = export_store(store);
    write_remb(File::create(remb)?, store.dimension(), &recs)?;
    write_sidecar(File::create(sidecar)?, &meta)?;
    Ok(())
}

pub fn load_store<T: Scalar>(remb: &Path, sidecar: &Path) -> Result<Store<T>, FormatError> {
    let (dim, recs) = read_remb(File::open(remb)?)?;
    let meta = read_sidecar(File::open(sidecar)?)?;
    let mut store = Store::new(dim)?;
    for r in join_records(recs, meta)? {
        store.add_record(r)?;
    }
    Ok(store)
}

/// Durable append log: a `REMB` file plus sidecar, opened for appending.
///
/// Each [`AppendLog::append`] writes the records and sidecar lines, then
/// rewrites the header count and syncs. A crash between the two leaves
/// trailing bytes that readers ignore.
#[derive(Debug)]
pub struct AppendLog {
    remb: File,
    sidecar: File,
    dim: usize,
    count: u64,
    sync: bool,
}

impl AppendLog {
    /// Open an existing log or create an empty one. Returns the log and
    /// every record already in it.
    pub fn open(
        remb_path: &Path,
        sidecar_path: &Path,
        dim: usize,
        sync: bool,
    ) -> Result<(Self, Vec<RembRecord>, Vec<SidecarEntry>), FormatError> {
        let exists = remb_path.exists() && std::fs::metadata(remb_path)?.len() > 0;
        let mut remb = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(remb_path)?;
        let sidecar = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(sidecar_path)?;
        let (records, entries) = if exists {
            let (file_dim, count) = read_header(&mut remb)?;
            if file_dim != dim {
                return Err(FormatError::Dimension {
                    expected: dim,
                    got: file_dim,
                });
            }
            let records = read_body(&mut remb, dim, count)?;
            let entries = read_sidecar(File::open(sidecar_path)?)?;
            // Drop any trailing bytes from an interrupted append.
            remb.set_len(HEADER_LEN + count * (8 + 4 * dim as u64))?;
            let keep: std::collections::HashSet<u64> = records.iter().map(|r| r.frame_id).collect();
            let entries: Vec<SidecarEntry> = entries.into_iter().filter(|e| keep.contains(&e.frame_id)).collect();
            (records, entries)
        } else {
            let mut w = BufWriter::new(&mut remb);
            write_header(&mut w, dim as u32, 0)?;
            w.flush()?;
            (Vec::new(), Vec::new())
        };
        let count = records.len() as u64;
        Ok((
            Self {
                remb,
                sidecar,
                dim,
                count,
                sync,
            },
            records,
            entries,
        ))
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn append(&mut self, records: &[RembRecord], entries: &[SidecarEntry]) -> Result<(), FormatError> {
        if records.is_empty() {
            return Ok(());
        }
        let end = HEADER_LEN + self.count * (8 + 4 * self.dim as u64);
        self.remb.seek(SeekFrom::Start(end))?;
        {
            let mut w = BufWriter::new(&mut self.remb);
            for r in records {
                if r.vector.len() != self.dim {
                    return Err(FormatError::Dimension {
                        expected: self.dim,
                        got: r.vector.len(),
                    });
                }
                write_body(&mut w, r.frame_id, &r.vector)?;
            }
            w.flush()?;
        }
        {
            let mut w = BufWriter::new(&mut self.sidecar);
            for e in entries {
                serde_json::to_writer(&mut w, e).map_err(io::Error::from)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        if self.sync {
            self.remb.sync_data()?;
            self.sidecar.sync_data()?;
        }
        let count = self.count + records.len() as u64;
        self.remb.seek(SeekFrom::Start(12))?;
        self.remb.write_all(&count.to_le_bytes())?;
        if self.sync {
            self.remb.sync_data()?;
        }
        self.count = count;
        Ok(())
    }
}
