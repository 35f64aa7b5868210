//! Radix-style hash partitioning of fixed-width rows.

use alloc::vec::Vec;

use thiserror::Error;

pub const FLUSH_BYTES: usize = 65536;
pub const BATCH_ROWS: u64 = 1 << 19;
pub const HASH_SLOTS: usize = 16 << 16;

const FIB32: u32 = 0x9E37_79B9;

/// Multiplicative hash of one 64-bit column value: the two halves are XORed
/// and multiplied by the 32-bit golden-ratio constant. Zero maps to zero.
pub fn column_hash(x: u64) -> u32 {
    ((x ^ (x >> 32)) as u32).wrapping_mul(FIB32)
}

/// Folds per-column hashes, last column first: `acc = rotl(acc, 5) ^ h(col)`.
/// A trailing column whose hash is zero leaves the result unchanged.
pub fn hash_fold(keys: &[u64]) -> u32 {
    assert!(!keys.is_empty(), "hash_fold needs at least one key column");
    keys.iter().rev().fold(0u32, |acc, &k| acc.rotate_left(5) ^ column_hash(k))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashPartConfig {
    pub num_dests: u32,
    pub row_width: usize,
    /// Leading 8-byte little-endian columns that form the key.
    pub key_columns: usize,
    pub flush_bytes: usize,
    /// `None` disables batching (reference mode).
    pub batch_rows: Option<u64>,
    pub hash_slots: usize,
}

impl HashPartConfig {
    pub fn new(num_dests: u32, row_width: usize, key_columns: usize) -> Self {
        HashPartConfig {
            num_dests,
            row_width,
            key_columns,
            flush_bytes: FLUSH_BYTES,
            batch_rows: Some(BATCH_ROWS),
            hash_slots: HASH_SLOTS,
        }
    }

    pub fn unbatched(mut self) -> Self {
        self.batch_rows = None;
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HashPartError {
    #[error("row width must be positive")]
    ZeroRowWidth,
    #[error("need at least one destination")]
    NoDestinations,
    #[error("{key_columns} key columns do not fit in a {row_width}-byte row")]
    KeyTooWide { key_columns: usize, row_width: usize },
    #[error("row of {0} bytes exceeds the flush size")]
    RowTooWide(usize),
    #[error("batch of {batch} rows does not fit {slots} hash slots")]
    BatchTooLarge { batch: u64, slots: usize },
    #[error("input of {len} bytes is not a multiple of the {row_width}-byte row width")]
    PartialRow { len: usize, row_width: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Flush {
    pub dest: u32,
    pub bytes: Vec<u8>,
    /// Emitted by [`HashPartState::finish`] rather than by a full buffer.
    pub is_final: bool,
}

#[derive(Clone, Debug)]
pub struct HashPartState {
    cfg: HashPartConfig,
    hash_buffer: Vec<u32>,
    out: Vec<Vec<u8>>,
    rows_in_batch: u64,
    batches: u64,
    rows: u64,
    flushes: u64,
    max_occupancy: usize,
}

impl HashPartState {
    pub fn new(cfg: HashPartConfig) -> Result<Self, HashPartError> {
        if cfg.row_width == 0 {
            return Err(HashPartError::ZeroRowWidth);
        }
        if cfg.num_dests == 0 {
            return Err(HashPartError::NoDestinations);
        }
        if cfg.key_columns == 0 || cfg.key_columns * 8 > cfg.row_width {
            return Err(HashPartError::KeyTooWide { key_columns: cfg.key_columns, row_width: cfg.row_width });
        }
        if cfg.row_width > cfg.flush_bytes {
            return Err(HashPartError::RowTooWide(cfg.row_width));
        }
        if let Some(b) = cfg.batch_rows {
            if b as usize > cfg.hash_slots {
                return Err(HashPartError::BatchTooLarge { batch: b, slots: cfg.hash_slots });
            }
        }
        let out = (0..cfg.num_dests).map(|_| Vec::with_capacity(cfg.flush_bytes)).collect();
        Ok(HashPartState {
            cfg,
            hash_buffer: Vec::new(),
            out,
            rows_in_batch: 0,
            batches: 0,
            rows: 0,
            flushes: 0,
            max_occupancy: 0,
        })
    }

    pub fn config(&self) -> &HashPartConfig {
        &self.cfg
    }

    pub fn batches(&self) -> u64 {
        self.batches
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn flushes(&self) -> u64 {
        self.flushes
    }

    /// Largest per-destination buffer occupancy seen so far.
    pub fn max_occupancy(&self) -> usize {
        self.max_occupancy
    }

    pub fn dest_of(&self, row: &[u8]) -> u32 {
        let mut keys = [0u64; 8];
        let n = self.cfg.key_columns.min(8);
        for (i, k) in keys[..n].iter_mut().enumerate() {
            *k = u64::from_le_bytes(row[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
        }
        let h = if self.cfg.key_columns <= 8 {
            hash_fold(&keys[..n])
        } else {
            let all: Vec<u64> = (0..self.cfg.key_columns)
                .map(|i| u64::from_le_bytes(row[i * 8..i * 8 + 8].try_into().expect("8 bytes")))
                .collect();
            hash_fold(&all)
        };
        h % self.cfg.num_dests
    }

    /// Partitions whole rows; `out` receives any flushes this triggers.
    pub fn ingest(&mut self, rows: &[u8], out: &mut Vec<Flush>) -> Result<(), HashPartError> {
        let w = self.cfg.row_width;
        if !rows.len().is_multiple_of(w) {
            return Err(HashPartError::PartialRow { len: rows.len(), row_width: w });
        }
        for row in rows.chunks_exact(w) {
            let boundary = match self.cfg.batch_rows {
                Some(b) => self.rows_in_batch == b || self.rows == 0,
                None => self.rows == 0,
            };
            if boundary {
                self.hash_buffer.clear();
                self.rows_in_batch = 0;
                self.batches += 1;
            }
            let dest = self.dest_of(row);
            if self.cfg.batch_rows.is_some() {
                self.hash_buffer.push(dest);
            }
            self.rows_in_batch += 1;
            self.rows += 1;
            let buf = &mut self.out[dest as usize];
            if buf.len() + w > self.cfg.flush_bytes {
                let bytes = core::mem::replace(buf, Vec::with_capacity(self.cfg.flush_bytes));
                self.flushes += 1;
                out.push(Flush { dest, bytes, is_final: false });
            }
            let buf = &mut self.out[dest as usize];
            buf.extend_from_slice(row);
            self.max_occupancy = self.max_occupancy.max(buf.len());
        }
        Ok(())
    }

    /// Flushes every non-empty buffer, in destination order.
    pub fn finish(&mut self, out: &mut Vec<Flush>) {
        for (dest, buf) in self.out.iter_mut().enumerate() {
            if !buf.is_empty() {
                self.flushes += 1;
                out.push(Flush { dest: dest as u32, bytes: core::mem::take(buf), is_final: true });
            }
        }
    }
}
