use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

pub const TAG_BYTES: usize = 8;
pub const FLAG_VALID: u8 = 0x01;

/// Bytes an entry with a `len`-byte payload occupies in the ring.
pub fn entry_size(len: usize) -> usize {
    TAG_BYTES + len.next_multiple_of(8)
}

/// The 8-byte metadata tag: length (LE u32), flags, three reserved zero bytes.
pub fn encode_tag(len: u32, valid: bool) -> [u8; TAG_BYTES] {
    let mut t = [0u8; TAG_BYTES];
    t[..4].copy_from_slice(&len.to_le_bytes());
    t[4] = if valid { FLAG_VALID } else { 0 };
    t
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum RingError {
    #[error("corrupt tag at ring offset {offset}: reserved bytes are not zero")]
    CorruptTag { offset: usize },
    #[error("entry at ring offset {offset} claims {len} bytes, more than the ring holds")]
    BadLength { offset: usize, len: u32 },
    #[error("ring capacity {0} is not a power of two of at least 16 bytes")]
    BadCapacity(usize),
}

/// Tag contents, or `None` for an empty (invalid) slot.
pub fn decode_tag(tag: &[u8; TAG_BYTES], offset: usize) -> Result<Option<u32>, RingError> {
    if tag[5..8] != [0, 0, 0] || tag[4] & !FLAG_VALID != 0 {
        return Err(RingError::CorruptTag { offset });
    }
    if tag[4] & FLAG_VALID == 0 {
        return Ok(None);
    }
    Ok(Some(u32::from_le_bytes([tag[0], tag[1], tag[2], tag[3]])))
}

/// One complete entry (tag followed by padded payload) as written by a single
/// DMA transaction.
pub fn encode_entry(payload: &[u8]) -> Vec<u8> {
    let mut e = vec![0u8; entry_size(payload.len())];
    e[TAG_BYTES..TAG_BYTES + payload.len()].copy_from_slice(payload);
    e[..TAG_BYTES].copy_from_slice(&encode_tag(payload.len() as u32, true));
    e
}

/// Parses a dump of consecutive entries back into payloads.
pub fn decode_entries(mut bytes: &[u8]) -> Result<Vec<Vec<u8>>, RingError> {
    let mut out = Vec::new();
    let mut offset = 0;
    while bytes.len() >= TAG_BYTES {
        let tag: [u8; TAG_BYTES] = bytes[..TAG_BYTES].try_into().expect("length checked");
        let Some(len) = decode_tag(&tag, offset)? else { break };
        let size = entry_size(len as usize);
        if size > bytes.len() {
            return Err(RingError::BadLength { offset, len });
        }
        out.push(bytes[TAG_BYTES..TAG_BYTES + len as usize].to_vec());
        bytes = &bytes[size..];
        offset += size;
    }
    Ok(out)
}

/// How many DMA transactions one RX entry costs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DmaMode {
    /// Tag and payload written together.
    #[default]
    Tagged,
    /// Reference model: descriptor and payload written separately.
    TwoTransfer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub offset: usize,
    pub entry_bytes: usize,
}

/// Unified host ring buffer. `head` and `tail` are running byte counts; the
/// buffer position is their value modulo the capacity, so an entry near the end
/// continues at offset 0.
#[derive(Clone, Debug)]
pub struct Ring {
    buf: Vec<u8>,
    head: u64,
    tail: u64,
    mode: DmaMode,
    dma_tx_count: u64,
    enqueued: u64,
    polled: u64,
    drops: u64,
}

impl Ring {
    pub fn new(capacity_bytes: usize, mode: DmaMode) -> Result<Self, RingError> {
        if !capacity_bytes.is_power_of_two() || capacity_bytes < 16 {
            return Err(RingError::BadCapacity(capacity_bytes));
        }
        Ok(Ring {
            buf: vec![0; capacity_bytes],
            head: 0,
            tail: 0,
            mode,
            dma_tx_count: 0,
            enqueued: 0,
            polled: 0,
            drops: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.buf.len()
    }

    pub fn head(&self) -> usize {
        (self.head % self.buf.len() as u64) as usize
    }

    pub fn tail(&self) -> usize {
        (self.tail % self.buf.len() as u64) as usize
    }

    pub fn used_bytes(&self) -> usize {
        (self.head - self.tail) as usize
    }

    pub fn free_bytes(&self) -> usize {
        self.buf.len() - self.used_bytes()
    }

    pub fn is_empty(&self) -> bool {
        self.head == self.tail
    }

    pub fn dma_tx_count(&self) -> u64 {
        self.dma_tx_count
    }

    pub fn enqueued(&self) -> u64 {
        self.enqueued
    }

    pub fn polled(&self) -> u64 {
        self.polled
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }

    /// Entries written but not yet consumed.
    pub fn pending(&self) -> u64 {
        self.enqueued - self.polled
    }

    pub fn raw(&self) -> &[u8] {
        &self.buf
    }

    fn write_at(&mut self, pos: u64, data: &[u8]) {
        let cap = self.buf.len();
        let start = (pos % cap as u64) as usize;
        let first = data.len().min(cap - start);
        self.buf[start..start + first].copy_from_slice(&data[..first]);
        self.buf[..data.len() - first].copy_from_slice(&data[first..]);
    }

    fn read_at(&self, pos: u64, out: &mut [u8]) {
        let cap = self.buf.len();
        let start = (pos % cap as u64) as usize;
        let first = out.len().min(cap - start);
        out[..first].copy_from_slice(&self.buf[start..start + first]);
        let rest = out.len() - first;
        out[first..].copy_from_slice(&self.buf[..rest]);
    }

    fn zero_at(&mut self, pos: u64, len: usize) {
        let cap = self.buf.len();
        let start = (pos % cap as u64) as usize;
        let first = len.min(cap - start);
        self.buf[start..start + first].fill(0);
        self.buf[..len - first].fill(0);
    }

    /// Writes one entry. A full ring drops the packet and leaves head and
    /// tail unchanged.
    pub fn rx_enqueue(&mut self, payload: &[u8]) -> Option<Placement> {
        let size = entry_size(payload.len());
        if size > self.free_bytes() {
            self.drops += 1;
            return None;
        }
        let offset = self.head();
        // Payload first, valid tag last, as the consumer trusts the tag.
        self.write_at(self.head + TAG_BYTES as u64, payload);
        let pad = size - TAG_BYTES - payload.len();
        self.zero_at(self.head + (TAG_BYTES + payload.len()) as u64, pad);
        self.write_at(self.head, &encode_tag(payload.len() as u32, true));
        self.head += size as u64;
        self.enqueued += 1;
        self.dma_tx_count += match self.mode {
            DmaMode::Tagged => 1,
            DmaMode::TwoTransfer => 2,
        };
        Some(Placement { offset, entry_bytes: size })
    }

    /// Consumes up to `budget` valid entries in order, zeroing each.
    pub fn driver_poll(&mut self, budget: usize) -> Result<Vec<Vec<u8>>, RingError> {
        let mut out = Vec::new();
        while out.len() < budget && self.tail < self.head {
            let mut tag = [0u8; TAG_BYTES];
            self.read_at(self.tail, &mut tag);
            let Some(len) = decode_tag(&tag, self.tail())? else { break };
            let size = entry_size(len as usize);
            if size > self.used_bytes() {
                return Err(RingError::BadLength { offset: self.tail(), len });
            }
            let mut payload = vec![0u8; len as usize];
            self.read_at(self.tail + TAG_BYTES as u64, &mut payload);
            self.zero_at(self.tail, size);
            self.tail += size as u64;
            self.polled += 1;
            out.push(payload);
        }
        Ok(out)
    }

    /// Unconsumed entries, concatenated in ring order starting at the tail.
    pub fn dump(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.used_bytes()];
        self.read_at(self.tail, &mut out);
        out
    }

    #[cfg(test)]
    pub(crate) fn poke(&mut self, offset: usize, byte: u8) {
        self.buf[offset] = byte;
    }
}
