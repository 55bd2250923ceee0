//! Versioned binary container for beliefs, network weights and config text.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "NWBC"  u32 version  u32 entry_count
//! entry*: u32 name_len, name (utf8), u8 kind
//!         kind 0 (f64 array): u32 ndims, u64 dims[ndims], f64 data[prod(dims)]
//!         kind 1 (text):      u64 len, utf8 bytes
//! trailer: SHA-256 of every preceding byte (32 bytes)
//! ```
//!
//! Reals are stored as raw IEEE-754 bits, so round trips are bit-exact.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::nw::{KnownNoiseBelief, ModelError, NWBelief};

pub const MAGIC: &[u8; 4] = b"NWBC";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("container truncated")]
    Truncated,
    #[error("checksum mismatch")]
    ChecksumMismatch,
    #[error("missing entry {0:?}")]
    Missing(String),
    #[error("entry {0:?} has the wrong kind or shape")]
    WrongKind(String),
    #[error("invalid utf8 in container")]
    InvalidUtf8,
    #[error("unknown entry kind {0}")]
    UnknownKind(u8),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, ContainerError>;

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Array { dims: Vec<usize>, data: Vec<f64> },
    Text(String),
}

/// Ordered named entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: Vec<(String, Entry)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Inserts or replaces an entry.
    pub fn put(&mut self, name: &str, entry: Entry) {
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = entry,
            None => self.entries.push((name.to_string(), entry)),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e)
            .ok_or_else(|| ContainerError::Missing(name.to_string()))
    }

    pub fn put_matrix(&mut self, name: &str, m: &Matrix) {
        self.put(
            name,
            Entry::Array {
                dims: vec![m.rows(), m.cols()],
                data: m.as_slice().to_vec(),
            },
        );
    }

    pub fn put_scalar(&mut self, name: &str, v: f64) {
        self.put(
            name,
            Entry::Array {
                dims: vec![],
                data: vec![v],
            },
        );
    }

    pub fn put_vector(&mut self, name: &str, v: &[f64]) {
        self.put(
            name,
            Entry::Array {
                dims: vec![v.len()],
                data: v.to_vec(),
            },
        );
    }

    pub fn put_text(&mut self, name: &str, text: &str) {
        self.put(name, Entry::Text(text.to_string()));
    }

    pub fn get_matrix(&self, name: &str) -> Result<Matrix> {
        match self.get(name)? {
            Entry::Array { dims, data } if dims.len() == 2 => Ok(Matrix::from_vec(dims[0], dims[1], data.clone())),
            _ => Err(ContainerError::WrongKind(name.to_string())),
        }
    }

    pub fn get_scalar(&self, name: &str) -> Result<f64> {
        match self.get(name)? {
            Entry::Array { dims, data } if dims.is_empty() => Ok(data[0]),
            _ => Err(ContainerError::WrongKind(name.to_string())),
        }
    }

    pub fn get_vector(&self, name: &str) -> Result<Vec<f64>> {
        match self.get(name)? {
            Entry::Array { dims, data } if dims.len() == 1 => Ok(data.clone()),
            _ => Err(ContainerError::WrongKind(name.to_string())),
        }
    }

    pub fn get_text(&self, name: &str) -> Result<&str> {
        match self.get(name)? {
            Entry::Text(t) => Ok(t),
            _ => Err(ContainerError::WrongKind(name.to_string())),
        }
    }

    /// Stores parameter matrices under `prefix/name`.
    pub fn put_params(&mut self, prefix: &str, names: &[String], params: &[&Matrix]) {
        for (n, p) in names.iter().zip(params) {
            self.put_matrix(&format!("{prefix}/{n}"), p);
        }
    }

    /// Loads parameter matrices in place; shapes must match exactly.
    pub fn get_params_into(&self, prefix: &str, names: &[String], params: Vec<&mut Matrix>) -> Result<()> {
        for (n, p) in names.iter().zip(params) {
            let key = format!("{prefix}/{n}");
            let m = self.get_matrix(&key)?;
            if m.shape() != p.shape() {
                return Err(ContainerError::WrongKind(key));
            }
            *p = m;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match entry {
                Entry::Array { dims, data } => {
                    out.push(0);
                    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
                    for d in dims {
                        out.extend_from_slice(&(*d as u64).to_le_bytes());
                    }
                    for v in data {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Entry::Text(t) => {
                    out.push(1);
                    out.extend_from_slice(&(t.len() as u64).to_le_bytes());
                    out.extend_from_slice(t.as_bytes());
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 + 4 + 32 {
            return Err(ContainerError::Truncated);
        }
        if &bytes[..4] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(ContainerError::ChecksumMismatch);
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(ContainerError::UnsupportedVersion(version));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| ContainerError::InvalidUtf8)?
                .to_string();
            let entry = match r.u8()? {
                0 => {
                    let ndims = r.u32()? as usize;
                    let dims = (0..ndims).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                    let n: usize = dims.iter().product();
                    let raw = r.take(n.checked_mul(8).ok_or(ContainerError::Truncated)?)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                        .collect();
                    Entry::Array { dims, data }
                }
                1 => {
                    let len = r.u64()? as usize;
                    let text = std::str::from_utf8(r.take(len)?).map_err(|_| ContainerError::InvalidUtf8)?;
                    Entry::Text(text.to_string())
                }
                k => return Err(ContainerError::UnknownKind(k)),
            };
            entries.push((name, entry));
        }
        if r.pos != body.len() {
            return Err(ContainerError::Truncated);
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(ContainerError::Truncated)?;
        if end > self.buf.len() {
            return Err(ContainerError::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Writes `M, Xi, XiInv, Omega, nu, dims` (plus the cached log-determinant
/// and refresh counter) under `prefix/`.
pub fn put_belief(c: &mut Container, prefix: &str, b: &NWBelief) {
    c.put_vector(&format!("{prefix}/dims"), &[b.d() as f64, b.p() as f64]);
    c.put_matrix(&format!("{prefix}/M"), b.m());
    c.put_matrix(&format!("{prefix}/Xi"), b.xi());
    c.put_matrix(&format!("{prefix}/XiInv"), b.xi_inv());
    c.put_matrix(&format!("{prefix}/Omega"), b.omega());
    c.put_scalar(&format!("{prefix}/nu"), b.nu());
    c.put_scalar(&format!("{prefix}/XiLogdet"), b.xi_logdet());
    c.put_scalar(&format!("{prefix}/online_since_refresh"), b.online_since_refresh() as f64);
}

pub fn get_belief(c: &Container, prefix: &str) -> Result<NWBelief> {
    let dims = c.get_vector(&format!("{prefix}/dims"))?;
    let m = c.get_matrix(&format!("{prefix}/M"))?;
    if dims.len() != 2 || (dims[0] as usize, dims[1] as usize) != m.shape() {
        return Err(ContainerError::WrongKind(format!("{prefix}/dims")));
    }
    Ok(NWBelief::from_parts(
        m,
        c.get_matrix(&format!("{prefix}/Xi"))?,
        c.get_matrix(&format!("{prefix}/XiInv"))?,
        c.get_scalar(&format!("{prefix}/XiLogdet"))?,
        c.get_matrix(&format!("{prefix}/Omega"))?,
        c.get_scalar(&format!("{prefix}/nu"))?,
        c.get_scalar(&format!("{prefix}/online_since_refresh"))? as usize,
    )?)
}

pub fn put_known_belief(c: &mut Container, prefix: &str, b: &KnownNoiseBelief) {
    c.put_vector(&format!("{prefix}/dims"), &[b.d() as f64, b.p() as f64]);
    c.put_matrix(&format!("{prefix}/M"), b.m());
    c.put_matrix(&format!("{prefix}/Xi"), b.xi());
    c.put_matrix(&format!("{prefix}/XiInv"), b.xi_inv());
    c.put_matrix(&format!("{prefix}/Sigma"), b.sigma());
    c.put_matrix(&format!("{prefix}/SigmaInv"), b.sigma_inv());
    c.put_scalar(&format!("{prefix}/XiLogdet"), b.xi_logdet());
    c.put_scalar(&format!("{prefix}/online_since_refresh"), b.online_since_refresh() as f64);
}

pub fn get_known_belief(c: &Container, prefix: &str) -> Result<KnownNoiseBelief> {
    Ok(KnownNoiseBelief::from_parts(
        c.get_matrix(&format!("{prefix}/M"))?,
        c.get_matrix(&format!("{prefix}/Xi"))?,
        c.get_matrix(&format!("{prefix}/XiInv"))?,
        c.get_scalar(&format!("{prefix}/XiLogdet"))?,
        c.get_matrix(&format!("{prefix}/Sigma"))?,
        c.get_matrix(&format!("{prefix}/SigmaInv"))?,
        c.get_scalar(&format!("{prefix}/online_since_refresh"))? as usize,
    )?)
}

/// Hex SHA-256 over the raw bits of a parameter list.
pub fn params_hash(params: &[&Matrix]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update((p.rows() as u64).to_le_bytes());
        h.update((p.cols() as u64).to_le_bytes());
        for v in p.as_slice() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nw::make_prior;

    fn belief() -> NWBelief {
        let mut b = make_prior(3, 2, 0.0, 1.0, 1.0, 5.0).unwrap();
        b.observe(&[0.1, -0.7, 1.0 / 3.0], &[0.2, 1e-300]).unwrap();
        b.observe(&[2.0, 0.5, -0.25], &[-1.5, 0.3]).unwrap();
        b
    }

    #[test]
    fn belief_round_trip_is_bit_exact() {
        let b = belief();
        let mut c = Container::new();
        put_belief(&mut c, "t", &b);
        c.put_text("config", "{\"a\": 1}");
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        let b2 = get_belief(&back, "t").unwrap();
        assert_eq!(b2, b);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn known_belief_round_trip() {
        let kb = KnownNoiseBelief::from_nw(&belief()).unwrap();
        let mut c = Container::new();
        put_known_belief(&mut c, "k", &kb);
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(get_known_belief(&back, "k").unwrap(), kb);
    }

    #[test]
    fn corruption_is_detected() {
        let mut c = Container::new();
        put_belief(&mut c, "t", &belief());
        let mut bytes = c.to_bytes();
        bytes[40] ^= 1;
        assert!(matches!(Container::from_bytes(&bytes), Err(ContainerError::ChecksumMismatch)));
        let bytes = c.to_bytes();
        assert!(matches!(
            Container::from_bytes(&bytes[..bytes.len() - 5]),
            Err(ContainerError::ChecksumMismatch)
        ));
        assert!(matches!(Container::from_bytes(b"XXXX"), Err(ContainerError::Truncated)));
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(matches!(Container::from_bytes(&bad), Err(ContainerError::BadMagic)));
    }

    #[test]
    fn missing_and_wrong_kind() {
        let mut c = Container::new();
        c.put_text("x", "hi");
        assert!(matches!(c.get_matrix("x"), Err(ContainerError::WrongKind(_))));
        assert!(matches!(c.get_text("y"), Err(ContainerError::Missing(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.nwbc");
        let mut c = Container::new();
        c.put_scalar("s", f64::MIN_POSITIVE);
        c.write(&path).unwrap();
        assert_eq!(Container::read(&path).unwrap().get_scalar("s").unwrap(), f64::MIN_POSITIVE);
    }

    #[test]
    fn params_hash_sensitive_to_bits() {
        let a = Matrix::from_rows(&[&[0.0, 1.0]]);
        let b = Matrix::from_rows(&[&[-0.0, 1.0]]);
        assert_ne!(params_hash(&[&a]), params_hash(&[&b]));
        assert_eq!(params_hash(&[&a]), params_hash(&[&a.clone()]));
    }
}
