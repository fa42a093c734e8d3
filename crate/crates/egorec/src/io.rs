//! On-disk formats and atomic file writes.
//!
//! Two binary formats are used throughout:
//!
//! * `MMFT` matrices: 16-byte header (magic `MMFT`, u32 rows, u32 cols,
//!   u32 dtype code) followed by a row-major payload. Dtype 0 is
//!   little-endian f32 (the interchange default for feature files and
//!   embedding exports); dtype 1 is little-endian f64 and is what
//!   checkpoints use so reloaded parameters are bit-identical.
//!   A matrix may carry a `<path>.tokens` sidecar listing row tokens.
//! * `CSRG` graphs: 16-byte header (magic `CSRG`, u32 rows, u32 cols,
//!   u32 nnz), then row_ptr as u64[rows+1], col_idx as u32[nnz], values as
//!   f32[nnz]. A `<path>.sha256` sidecar records the file hash.
//!
//! Every writer goes through [`atomic_write`] (temp file + rename) so an
//! interrupted run never leaves a half-written artifact behind.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Element type codes for `MMFT` payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmftDtype {
    F32 = 0,
    F64 = 1,
}

const MMFT_MAGIC: &[u8; 4] = b"MMFT";
const CSRG_MAGIC: &[u8; 4] = b"CSRG";

/// Write `bytes` to `path` atomically: write a temp file in the same
/// directory, then rename over the target.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = tmp_path(path);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Serialize a matrix into `MMFT` bytes.
pub fn mmft_bytes(m: &Mat, dtype: MmftDtype) -> Vec<u8> {
    let elem = match dtype {
        MmftDtype::F32 => 4,
        MmftDtype::F64 => 8,
    };
    let mut out = Vec::with_capacity(16 + m.rows() * m.cols() * elem);
    out.extend_from_slice(MMFT_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    out.extend_from_slice(&(dtype as u32).to_le_bytes());
    match dtype {
        MmftDtype::F32 => {
            for &v in m.as_slice() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        MmftDtype::F64 => {
            for &v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Write a matrix as an `MMFT` file.
pub fn write_mmft(path: &Path, m: &Mat, dtype: MmftDtype) -> Result<()> {
    atomic_write(path, &mmft_bytes(m, dtype))
}

/// Read an `MMFT` file into a matrix (widened to f64 for dtype 0).
pub fn read_mmft(path: &Path) -> Result<Mat> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_mmft(&bytes).map_err(|reason| Error::BadFormat {
        path: path.to_path_buf(),
        reason,
    })
}

fn parse_mmft(bytes: &[u8]) -> std::result::Result<Mat, String> {
    if bytes.len() < 16 {
        return Err("file shorter than the 16-byte header".into());
    }
    if &bytes[0..4] != MMFT_MAGIC {
        return Err("bad magic, expected MMFT".into());
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dtype = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let n = rows * cols;
    let payload = &bytes[16..];
    let data = match dtype {
        0 => {
            if payload.len() != n * 4 {
                return Err(format!(
                    "payload is {} bytes, expected {} for {rows}x{cols} f32",
                    payload.len(),
                    n * 4
                ));
            }
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()
        }
        1 => {
            if payload.len() != n * 8 {
                return Err(format!(
                    "payload is {} bytes, expected {} for {rows}x{cols} f64",
                    payload.len(),
                    n * 8
                ));
            }
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        }
        other => return Err(format!("unknown dtype code {other}")),
    };
    Ok(Mat::from_vec(rows, cols, data))
}

/// Path of the token sidecar that accompanies an `MMFT` file.
pub fn tokens_sidecar_path(mmft_path: &Path) -> PathBuf {
    let mut name = mmft_path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tokens");
    mmft_path.with_file_name(name)
}

/// Write the row-token sidecar next to an `MMFT` file.
pub fn write_tokens_sidecar(mmft_path: &Path, tokens: &[String]) -> Result<()> {
    let mut body = String::new();
    for t in tokens {
        body.push_str(t);
        body.push('\n');
    }
    atomic_write(&tokens_sidecar_path(mmft_path), body.as_bytes())
}

/// Read the row-token sidecar for an `MMFT` file.
pub fn read_tokens_sidecar(mmft_path: &Path) -> Result<Vec<String>> {
    let path = tokens_sidecar_path(mmft_path);
    let body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(body.lines().map(|l| l.to_string()).collect())
}

/// Raw CSR pieces as stored in a `CSRG` file. The graph module owns the
/// validated [`crate::graphs::SparseGraph`] type; this is just the wire form.
pub struct CsrgParts {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<u64>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f32>,
}

/// Serialize CSR pieces into `CSRG` bytes.
pub fn csrg_bytes(p: &CsrgParts) -> Vec<u8> {
    let nnz = p.col_idx.len();
    let mut out = Vec::with_capacity(16 + (p.row_ptr.len() * 8) + nnz * 8);
    out.extend_from_slice(CSRG_MAGIC);
    out.extend_from_slice(&(p.rows as u32).to_le_bytes());
    out.extend_from_slice(&(p.cols as u32).to_le_bytes());
    out.extend_from_slice(&(nnz as u32).to_le_bytes());
    for &v in &p.row_ptr {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &p.col_idx {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &p.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Write `CSRG` bytes plus a `<path>.sha256` sidecar; returns the hex hash.
pub fn write_csrg(path: &Path, parts: &CsrgParts) -> Result<String> {
    let bytes = csrg_bytes(parts);
    let hash = sha256_hex(&bytes);
    atomic_write(path, &bytes)?;
    atomic_write(
        &path.with_extension("csrg.sha256"),
        format!("{hash}\n").as_bytes(),
    )?;
    Ok(hash)
}

/// Read a `CSRG` file back into its raw pieces.
pub fn read_csrg(path: &Path) -> Result<CsrgParts> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_csrg(&bytes).map_err(|reason| Error::BadFormat {
        path: path.to_path_buf(),
        reason,
    })
}

fn parse_csrg(bytes: &[u8]) -> std::result::Result<CsrgParts, String> {
    if bytes.len() < 16 {
        return Err("file shorter than the 16-byte header".into());
    }
    if &bytes[0..4] != CSRG_MAGIC {
        return Err("bad magic, expected CSRG".into());
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let nnz = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let want = 16 + (rows + 1) * 8 + nnz * 4 + nnz * 4;
    if bytes.len() != want {
        return Err(format!("file is {} bytes, expected {want}", bytes.len()));
    }
    let mut off = 16;
    let mut row_ptr = Vec::with_capacity(rows + 1);
    for _ in 0..=rows {
        row_ptr.push(u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
        off += 8;
    }
    let mut col_idx = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        col_idx.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        off += 4;
    }
    let mut values = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        values.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        off += 4;
    }
    Ok(CsrgParts {
        rows,
        cols,
        row_ptr,
        col_idx,
        values,
    })
}

/// Serialize any value as pretty JSON and write it atomically.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Other(format!("json serialization failed: {e}")))?;
    atomic_write(path, format!("{body}\n").as_bytes())
}
