//! Slow-path ring dumps: consecutive tagged entries, byte for byte as they
//! sit in host memory.

use std::fs;
use std::io;
use std::path::Path;

use scenic_core::hostpath::{decode_entries, encode_entry, RingError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed ring dump: {0}")]
    Ring(#[from] RingError),
}

/// Encodes payloads as ring entries.
pub fn encode(payloads: &[Vec<u8>]) -> Vec<u8> {
    payloads.iter().flat_map(|p| encode_entry(p)).collect()
}

pub fn write(path: &Path, dump: &[u8]) -> io::Result<()> {
    fs::write(path, dump)
}

pub fn read(path: &Path) -> Result<Vec<Vec<u8>>, DumpError> {
    Ok(decode_entries(&fs::read(path)?)?)
}
