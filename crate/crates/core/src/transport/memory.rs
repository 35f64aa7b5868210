use alloc::vec::Vec;

use crate::model::Payload;

#[derive(Clone, Debug)]
struct Backing {
    base: u64,
    data: Vec<u8>,
}

/// Host memory of one node. Only regions explicitly backed hold bytes; reads
/// elsewhere produce virtual payloads and writes elsewhere are counted only.
#[derive(Clone, Debug, Default)]
pub struct HostMemory {
    backed: Vec<Backing>,
    discarded_bytes: u64,
}

impl HostMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn back(&mut self, base: u64, data: Vec<u8>) {
        self.backed.push(Backing { base, data });
    }

    pub fn back_zeroed(&mut self, base: u64, len: usize) {
        self.back(base, alloc::vec![0; len]);
    }

    fn find(&self, addr: u64, len: u64) -> Option<usize> {
        self.backed
            .iter()
            .position(|b| addr >= b.base && addr + len <= b.base + b.data.len() as u64)
    }

    pub fn read(&self, addr: u64, len: u64) -> Payload {
        match self.find(addr, len) {
            Some(i) => {
                let b = &self.backed[i];
                let off = (addr - b.base) as usize;
                Payload::from_vec(b.data[off..off + len as usize].to_vec())
            }
            None => Payload::Virtual(len),
        }
    }

    /// Returns false when the target is not backed.
    pub fn write(&mut self, addr: u64, payload: &Payload) -> bool {
        let len = payload.len();
        match self.find(addr, len) {
            Some(i) => {
                let b = &mut self.backed[i];
                let off = (addr - b.base) as usize;
                let dst = &mut b.data[off..off + len as usize];
                match payload.bytes() {
                    Some(src) => dst.copy_from_slice(src),
                    None => dst.fill(0),
                }
                true
            }
            None => {
                self.discarded_bytes += len;
                false
            }
        }
    }

    pub fn slice(&self, addr: u64, len: u64) -> Option<&[u8]> {
        self.find(addr, len).map(|i| {
            let b = &self.backed[i];
            let off = (addr - b.base) as usize;
            &b.data[off..off + len as usize]
        })
    }

    pub fn discarded_bytes(&self) -> u64 {
        self.discarded_bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backed_roundtrip_and_virtual_elsewhere() {
        let mut m = HostMemory::new();
        m.back(0x1000, alloc::vec![1, 2, 3, 4]);
        assert_eq!(m.read(0x1001, 2).bytes(), Some(&[2u8, 3][..]));
        assert!(m.write(0x1002, &Payload::from_vec(alloc::vec![9, 9])));
        assert_eq!(m.slice(0x1000, 4), Some(&[1u8, 2, 9, 9][..]));
        assert_eq!(m.read(0x5000, 8), Payload::Virtual(8));
        assert!(!m.write(0x5000, &Payload::Virtual(8)));
        assert_eq!(m.discarded_bytes(), 8);
    }
}
