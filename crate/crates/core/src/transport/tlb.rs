//! Address translation: registered memory regions, the host page table and
//! the on-NIC LRU translation cache.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use thiserror::Error;

use crate::model::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TlbConfig {
    pub capacity: usize,
    pub page_size: u64,
    pub miss_latency_ns: u64,
}

impl Default for TlbConfig {
    fn default() -> Self {
        TlbConfig { capacity: 64, page_size: 4096, miss_latency_ns: 1000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct TlbEntry {
    ppage: u64,
    stamp: u64,
    last_use: SimTime,
}

/// Fixed-capacity translation cache with least-recently-used eviction.
///
/// Recency is tracked by a per-access stamp rather than the timestamp, so
/// several accesses at the same simulated instant still have a total order.
#[derive(Clone, Debug)]
pub struct Tlb {
    capacity: usize,
    entries: BTreeMap<u64, TlbEntry>,
    by_stamp: BTreeMap<u64, u64>,
    next_stamp: u64,
    hits: u64,
    misses: u64,
}

impl Tlb {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "TLB needs at least one entry");
        Tlb {
            capacity,
            entries: BTreeMap::new(),
            by_stamp: BTreeMap::new(),
            next_stamp: 0,
            hits: 0,
            misses: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn contains(&self, vpage: u64) -> bool {
        self.entries.contains_key(&vpage)
    }

    pub fn last_use(&self, vpage: u64) -> Option<SimTime> {
        self.entries.get(&vpage).map(|e| e.last_use)
    }

    /// Cached pages from least to most recently used.
    pub fn lru_order(&self) -> Vec<u64> {
        self.by_stamp.values().copied().collect()
    }

    fn touch(&mut self, vpage: u64, now: SimTime) {
        let stamp = self.next_stamp;
        self.next_stamp += 1;
        let entry = self.entries.get_mut(&vpage).expect("touch of cached page");
        self.by_stamp.remove(&entry.stamp);
        entry.stamp = stamp;
        entry.last_use = now;
        self.by_stamp.insert(stamp, vpage);
    }

    /// Hit: refreshes recency and returns the physical page.
    pub fn lookup(&mut self, vpage: u64, now: SimTime) -> Option<u64> {
        match self.entries.get(&vpage).map(|e| e.ppage) {
            Some(ppage) => {
                self.hits += 1;
                self.touch(vpage, now);
                Some(ppage)
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    /// Installs or refreshes a translation. Returns the evicted page, if any.
    pub fn insert(&mut self, vpage: u64, ppage: u64, now: SimTime) -> Option<u64> {
        if let Some(e) = self.entries.get_mut(&vpage) {
            e.ppage = ppage;
            self.touch(vpage, now);
            return None;
        }
        let mut evicted = None;
        if self.entries.len() == self.capacity {
            let (&stamp, &victim) = self.by_stamp.iter().next().expect("full TLB has entries");
            self.by_stamp.remove(&stamp);
            self.entries.remove(&victim);
            evicted = Some(victim);
        }
        let stamp = self.next_stamp;
        self.next_stamp += 1;
        self.entries.insert(vpage, TlbEntry { ppage, stamp, last_use: now });
        self.by_stamp.insert(stamp, vpage);
        evicted
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MrHandle(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryRegion {
    pub handle: MrHandle,
    pub base: u64,
    pub len: u64,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum TranslationError {
    #[error("address {0:#x} is not inside a registered memory region")]
    AccessFault(u64),
    #[error("memory region length must be positive")]
    EmptyRegion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Translation {
    pub paddr: u64,
    pub hit: bool,
    pub latency_ns: u64,
}

/// One node's registered regions, the page table the driver walks on a TLB
/// miss, and the TLB itself.
#[derive(Clone, Debug)]
pub struct AddressSpace {
    config: TlbConfig,
    tlb: Tlb,
    page_table: BTreeMap<u64, u64>,
    regions: Vec<MemoryRegion>,
    next_ppage: u64,
}

impl AddressSpace {
    pub fn new(config: TlbConfig) -> Self {
        AddressSpace {
            tlb: Tlb::new(config.capacity),
            config,
            page_table: BTreeMap::new(),
            regions: Vec::new(),
            next_ppage: 0x10_0000,
        }
    }

    pub fn config(&self) -> TlbConfig {
        self.config
    }

    pub fn tlb(&self) -> &Tlb {
        &self.tlb
    }

    pub fn regions(&self) -> &[MemoryRegion] {
        &self.regions
    }

    fn pages(&self, base: u64, len: u64) -> core::ops::RangeInclusive<u64> {
        let ps = self.config.page_size;
        (base / ps)..=((base + len - 1) / ps)
    }

    /// Registers `[base, base+len)` and preloads every page into the TLB.
    pub fn register_mr(&mut self, base: u64, len: u64, now: SimTime) -> Result<MrHandle, TranslationError> {
        if len == 0 {
            return Err(TranslationError::EmptyRegion);
        }
        for vpage in self.pages(base, len) {
            let ppage = match self.page_table.get(&vpage) {
                Some(&p) => p,
                None => {
                    let p = self.next_ppage;
                    self.next_ppage += 1;
                    self.page_table.insert(vpage, p);
                    p
                }
            };
            self.tlb.insert(vpage, ppage, now);
        }
        let handle = MrHandle(self.regions.len() as u32);
        self.regions.push(MemoryRegion { handle, base, len });
        Ok(handle)
    }

    pub fn is_registered(&self, addr: u64, len: u64) -> bool {
        let end = addr.saturating_add(len.max(1));
        self.regions.iter().any(|r| addr >= r.base && end <= r.base + r.len)
    }

    pub fn lookup(&mut self, vaddr: u64, now: SimTime) -> Result<Translation, TranslationError> {
        if !self.is_registered(vaddr, 1) {
            return Err(TranslationError::AccessFault(vaddr));
        }
        let ps = self.config.page_size;
        let vpage = vaddr / ps;
        let offset = vaddr % ps;
        if let Some(ppage) = self.tlb.lookup(vpage, now) {
            return Ok(Translation { paddr: ppage * ps + offset, hit: true, latency_ns: 0 });
        }
        let ppage = *self.page_table.get(&vpage).expect("registered page has a mapping");
        self.tlb.insert(vpage, ppage, now);
        Ok(Translation { paddr: ppage * ps + offset, hit: false, latency_ns: self.config.miss_latency_ns })
    }

    /// Translates every page touched by `[vaddr, vaddr+len)`; latency is the
    /// sum over misses.
    pub fn lookup_range(&mut self, vaddr: u64, len: u64, now: SimTime) -> Result<u64, TranslationError> {
        if !self.is_registered(vaddr, len) {
            return Err(TranslationError::AccessFault(vaddr));
        }
        let ps = self.config.page_size;
        let mut latency = 0;
        for vpage in self.pages(vaddr, len.max(1)) {
            latency += self.lookup(vpage * ps, now)?.latency_ns;
        }
        Ok(latency)
    }
}

/// `tlb_lookup` as a free function over an address space.
pub fn tlb_lookup(space: &mut AddressSpace, vaddr: u64, now: SimTime) -> Result<Translation, TranslationError> {
    space.lookup(vaddr, now)
}
