//! `STMW` weight files.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"STMW"  u32 version
//! [u8; 32] SHA-256 of the canonical ModelConfig JSON
//! u32 len, config JSON
//! u32 n_classes, u32 class values
//! u32 n_tensors, then per tensor:
//!     u32 len, name   u32 ndim   u64 dims   f32 values (row-major)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::layers::Real;
use super::{Model, ModelConfig, ModelError, build_model};

const MAGIC: &[u8; 4] = b"STMW";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("{path}: architecture fingerprint does not match the requested configuration")]
    FingerprintMismatch { path: PathBuf },
    #[error("{path}: corrupt weights file ({detail})")]
    Corrupt { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// SHA-256 of the canonical configuration serialisation.
pub fn fingerprint(cfg: &ModelConfig) -> [u8; 32] {
    Sha256::digest(cfg.canonical_json().as_bytes()).into()
}

pub fn save_weights<F: Real>(model: &Model<F>, path: impl AsRef<Path>) -> Result<(), WeightsError> {
    let path = path.as_ref();
    let io = |source| WeightsError::Io {
        path: path.to_owned(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write_body(model, &mut w).map_err(io)?;
    w.flush().map_err(io)
}

fn write_body<F: Real, W: Write>(model: &Model<F>, w: &mut W) -> std::io::Result<()> {
    let cfg = model.config();
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_all(&fingerprint(cfg))?;
    let json = cfg.canonical_json();
    w.write_u32::<LE>(json.len() as u32)?;
    w.write_all(json.as_bytes())?;
    w.write_u32::<LE>(cfg.classes.len() as u32)?;
    for &c in &cfg.classes {
        w.write_u32::<LE>(c)?;
    }
    let tensors = model.tensors();
    w.write_u32::<LE>(tensors.len() as u32)?;
    for (name, t) in tensors {
        w.write_u32::<LE>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LE>(t.ndim() as u32)?;
        for &d in t.shape() {
            w.write_u64::<LE>(d as u64)?;
        }
        for &v in t.iter() {
            w.write_f32::<LE>(v.to_f32().unwrap())?;
        }
    }
    Ok(())
}

struct Header {
    fingerprint: [u8; 32],
    config: ModelConfig,
}

fn corrupt(path: &Path, detail: impl Into<String>) -> WeightsError {
    WeightsError::Corrupt {
        path: path.to_owned(),
        detail: detail.into(),
    }
}

fn read_header<R: Read>(r: &mut R, path: &Path) -> Result<Header, WeightsError> {
    let eof = |e: std::io::Error| corrupt(path, e.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof)?;
    if &magic != MAGIC {
        return Err(corrupt(path, "bad magic"));
    }
    let version = r.read_u32::<LE>().map_err(eof)?;
    if version != VERSION {
        return Err(corrupt(path, format!("unsupported version {version}")));
    }
    let mut fingerprint = [0u8; 32];
    r.read_exact(&mut fingerprint).map_err(eof)?;
    let json = read_string(r, path)?;
    let config: ModelConfig =
        serde_json::from_str(&json).map_err(|e| corrupt(path, format!("config: {e}")))?;
    let n = r.read_u32::<LE>().map_err(eof)? as usize;
    let classes = (0..n)
        .map(|_| r.read_u32::<LE>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(eof)?;
    if classes != config.classes {
        return Err(corrupt(path, "class list disagrees with config"));
    }
    Ok(Header {
        fingerprint,
        config,
    })
}

fn read_string<R: Read>(r: &mut R, path: &Path) -> Result<String, WeightsError> {
    let eof = |e: std::io::Error| corrupt(path, e.to_string());
    let len = r.read_u32::<LE>().map_err(eof)? as usize;
    if len > 1 << 20 {
        return Err(corrupt(path, "implausible string length"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(eof)?;
    String::from_utf8(buf).map_err(|_| corrupt(path, "non-UTF-8 string"))
}

fn open(path: &Path) -> Result<BufReader<File>, WeightsError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| WeightsError::Io {
            path: path.to_owned(),
            source,
        })
}

/// Reads the configuration stored in a weights file.
pub fn read_config(path: impl AsRef<Path>) -> Result<ModelConfig, WeightsError> {
    let path = path.as_ref();
    Ok(read_header(&mut open(path)?, path)?.config)
}

/// Loads weights saved for `cfg`.
pub fn load_weights<F: Real>(
    path: impl AsRef<Path>,
    cfg: &ModelConfig,
) -> Result<Model<F>, WeightsError> {
    let path = path.as_ref();
    let mut r = open(path)?;
    let header = read_header(&mut r, path)?;
    if header.fingerprint != fingerprint(cfg) {
        return Err(WeightsError::FingerprintMismatch {
            path: path.to_owned(),
        });
    }
    if fingerprint(&header.config) != header.fingerprint {
        return Err(corrupt(path, "fingerprint does not match stored config"));
    }
    let mut model = build_model::<F>(cfg, 0)?;
    let eof = |e: std::io::Error| corrupt(path, e.to_string());
    let n = r.read_u32::<LE>().map_err(eof)? as usize;
    let mut targets = model.tensors_mut();
    if n != targets.len() {
        return Err(corrupt(
            path,
            format!("{n} tensors stored, {} expected", targets.len()),
        ));
    }
    for (name, dst) in targets.iter_mut() {
        let stored = read_string(&mut r, path)?;
        if &stored != name {
            return Err(corrupt(path, format!("expected tensor {name}, found {stored}")));
        }
        let ndim = r.read_u32::<LE>().map_err(eof)? as usize;
        let shape = (0..ndim)
            .map(|_| r.read_u64::<LE>().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()
            .map_err(eof)?;
        if shape != dst.shape() {
            return Err(corrupt(
                path,
                format!("{name}: shape {shape:?}, expected {:?}", dst.shape()),
            ));
        }
        for v in dst.iter_mut() {
            *v = F::of(r.read_f32::<LE>().map_err(eof)? as f64);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(eof)? != 0 {
        return Err(corrupt(path, "trailing bytes"));
    }
    drop(targets);
    Ok(model)
}

/// Loads a weights file with the configuration stored in it.
pub fn load_any<F: Real>(path: impl AsRef<Path>) -> Result<Model<F>, WeightsError> {
    let cfg = read_config(path.as_ref())?;
    load_weights(path, &cfg)
}
