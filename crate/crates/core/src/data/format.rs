//! MBED embedding files: `"MBED"`, `u16` version, `u32` rows, `u32` dim, `rows * dim`
//! row-major `f32` values, then `rows` `u32` labels. All little-endian.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MBED_MAGIC: &[u8; 4] = b"MBED";
pub const MBED_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4;

/// One modality's embeddings and labels; row `i` is instance `i` in every modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityMatrix {
    pub embeddings: Matrix<f32>,
    pub labels: Vec<u32>,
}

impl ModalityMatrix {
    pub fn new(embeddings: Matrix<f32>, labels: Vec<u32>) -> Result<Self> {
        if embeddings.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} embedding rows but {} labels",
                embeddings.rows(),
                labels.len()
            )));
        }
        Ok(Self { embeddings, labels })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.rows() * (self.dim() + 1) * 4);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MBED_MAGIC)?;
        w.write_all(&MBED_VERSION.to_le_bytes())?;
        w.write_all(&(self.rows() as u32).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        for v in self.embeddings.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        for l in &self.labels {
            w.write_all(&l.to_le_bytes())?;
        }
        w.flush()
    }

    /// Parses an MBED image. `file` names the source in error messages.
    pub fn from_bytes(bytes: &[u8], file: &str) -> Result<Self> {
        let bad = |d: String| Error::format(format!("MBED file {file}"), d);
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != MBED_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != MBED_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(bad("dim is zero".into()));
        }
        let payload = bytes.len() - HEADER_LEN;
        let row_bytes = (dim + 1) * 4;
        let expected = rows
            .checked_mul(row_bytes)
            .ok_or_else(|| bad("header sizes overflow".into()))?;
        if payload < expected {
            return Err(Error::RowCount {
                file: file.to_string(),
                expected: rows,
                actual: payload / row_bytes,
            });
        }
        if payload > expected {
            return Err(bad(format!("{} trailing bytes", payload - expected)));
        }
        let body = &bytes[HEADER_LEN..];
        let (vals, labs) = body.split_at(rows * dim * 4);
        let data = vals
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels = labs
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let embeddings = Matrix::from_vec(rows, dim, data)?;
        if !embeddings.is_finite() {
            return Err(bad("non-finite embedding value".into()));
        }
        Self::new(embeddings, labels)
    }

    /// Writes the file and returns its SHA-256 digest in lowercase hex.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(&bytes)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}
