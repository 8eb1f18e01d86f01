//! Data regions: the flat byte stores that descriptors reference, divided
//! into fixed-size slots, plus the access-controlled views components use
//! to touch them.
//!
//! Components never hold raw pointers into a region. Each component is
//! granted zero or more [`RegionView`]s at build time; a view carries an
//! access mode, a window (base/len, the analogue of mapping a sub-region
//! into an address space) and audit counters. A driver has no view at all,
//! so it provably cannot read or write payload bytes.

use crate::queue::BufferDescriptor;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegionId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ViewId(pub usize);

/// A contiguous, per-client range of slots inside a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubRegion {
    /// Byte offset of the sub-region start. Slot-size aligned.
    pub base: u64,
    /// Size in bytes. A multiple of the slot size.
    pub len: u64,
}

impl SubRegion {
    pub fn contains(&self, offset: u64) -> bool {
        offset >= self.base && offset < self.base + self.len
    }
}

/// Fixed-size-slot byte store. `size = slot_size * slot_count`. Per-client
/// sub-regions, when present, are disjoint contiguous ranges.
#[derive(Debug, Clone)]
pub struct DataRegion {
    pub id: RegionId,
    pub name: String,
    slot_size: u32,
    slot_count: u32,
    bytes: Vec<u8>,
    subregions: Vec<SubRegion>,
    /// Regions that participate in the buffer-conservation audit (slot
    /// ownership cycles through queues/devices and must stay exactly one).
    pub pooled: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegionConfigError {
    #[error("slot size {0} is not a power of two")]
    SlotSizeNotPowerOfTwo(u32),
    #[error("region must have at least one slot")]
    Empty,
    #[error("sub-regions overlap or exceed region size")]
    BadSubRegions,
}

/// Why a descriptor failed sanitation at a trust boundary.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum InvalidDescriptor {
    #[error("offset {0} not aligned to slot size")]
    Misaligned(u64),
    #[error("offset {0} out of range")]
    OutOfRange(u64),
    #[error("length {0} exceeds slot size")]
    TooLong(u32),
}

impl DataRegion {
    pub fn new(
        id: RegionId,
        name: &str,
        slot_size: u32,
        slot_count: u32,
        subregion_slots: &[u32],
        pooled: bool,
    ) -> Result<Self, RegionConfigError> {
        if !slot_size.is_power_of_two() {
            return Err(RegionConfigError::SlotSizeNotPowerOfTwo(slot_size));
        }
        if slot_count == 0 {
            return Err(RegionConfigError::Empty);
        }
        let mut subregions = Vec::with_capacity(subregion_slots.len());
        let mut next = 0u64;
        for &slots in subregion_slots {
            let len = slots as u64 * slot_size as u64;
            subregions.push(SubRegion { base: next, len });
            next += len;
        }
        let size = slot_size as u64 * slot_count as u64;
        if next > size {
            return Err(RegionConfigError::BadSubRegions);
        }
        Ok(DataRegion {
            id,
            name: name.to_string(),
            slot_size,
            slot_count,
            bytes: vec![0; size as usize],
            subregions,
            pooled,
        })
    }

    pub fn slot_size(&self) -> u32 {
        self.slot_size
    }

    pub fn slot_count(&self) -> u32 {
        self.slot_count
    }

    pub fn size(&self) -> u64 {
        self.slot_size as u64 * self.slot_count as u64
    }

    pub fn subregion(&self, index: usize) -> Option<SubRegion> {
        self.subregions.get(index).copied()
    }

    pub fn subregion_count(&self) -> usize {
        self.subregions.len()
    }

    /// Reverse lookup: which sub-region does a global offset fall into?
    pub fn subregion_of_offset(&self, offset: u64) -> Option<usize> {
        self.subregions.iter().position(|s| s.contains(offset))
    }

    /// Slot index for a global byte offset.
    pub fn slot_of_offset(&self, offset: u64) -> u32 {
        (offset / self.slot_size as u64) as u32
    }

    /// Check a descriptor against this region: alignment, range and length.
    /// Called on every descriptor crossing a trust boundary; failures are
    /// dropped and counted by the caller, never escalated.
    pub fn sanitize(&self, d: &BufferDescriptor) -> Result<(), InvalidDescriptor> {
        if !d.offset.is_multiple_of(self.slot_size as u64) {
            return Err(InvalidDescriptor::Misaligned(d.offset));
        }
        if d.offset >= self.size() || d.offset + d.len as u64 > self.size() {
            return Err(InvalidDescriptor::OutOfRange(d.offset));
        }
        if d.len > self.slot_size {
            return Err(InvalidDescriptor::TooLong(d.len));
        }
        Ok(())
    }

    /// Same check against one sub-region window (offsets relative to the
    /// window base, as a client sees them).
    pub fn sanitize_in_window(
        &self,
        d: &BufferDescriptor,
        window: SubRegion,
    ) -> Result<(), InvalidDescriptor> {
        if !d.offset.is_multiple_of(self.slot_size as u64) {
            return Err(InvalidDescriptor::Misaligned(d.offset));
        }
        if d.offset >= window.len || d.offset + d.len as u64 > window.len {
            return Err(InvalidDescriptor::OutOfRange(d.offset));
        }
        if d.len > self.slot_size {
            return Err(InvalidDescriptor::TooLong(d.len));
        }
        Ok(())
    }

    /// Device-side access (DMA). Not subject to view permissions.
    pub fn dma_write(&mut self, offset: u64, data: &[u8]) {
        let o = offset as usize;
        self.bytes[o..o + data.len()].copy_from_slice(data);
    }

    pub fn dma_read(&self, offset: u64, len: usize) -> &[u8] {
        let o = offset as usize;
        &self.bytes[o..o + len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    ReadOnly,
    ReadWrite,
}

/// A component's window onto a region. Offsets used through a view are
/// view-relative; `base` anchors the window in the region, which is how
/// per-client sub-regions appear as address space starting at zero.
#[derive(Debug, Clone)]
pub struct RegionView {
    pub id: ViewId,
    pub region: RegionId,
    pub base: u64,
    pub len: u64,
    pub access: Access,
    /// When set, reads through this view may touch at most this many bytes
    /// from the start of a slot (header inspection only).
    pub max_read_len: Option<u32>,
    pub reads: u64,
    pub writes: u64,
}

impl RegionView {
    pub fn check_read(&self, offset: u64, len: usize) {
        assert!(
            offset + len as u64 <= self.len,
            "view read out of window: {}+{} > {}",
            offset,
            len,
            self.len
        );
        if let Some(max) = self.max_read_len {
            assert!(
                len as u64 <= max as u64,
                "view limited to {max}-byte header reads, got {len}"
            );
        }
    }

    pub fn check_write(&self, offset: u64, len: usize) {
        assert!(
            self.access == Access::ReadWrite,
            "write through read-only view"
        );
        assert!(
            offset + len as u64 <= self.len,
            "view write out of window: {}+{} > {}",
            offset,
            len,
            self.len
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region_64k() -> DataRegion {
        // 32 slots x 2048 B = 64 KiB
        DataRegion::new(RegionId(0), "rx", 2048, 32, &[], true).unwrap()
    }

    #[test]
    fn sanitize_accepts_aligned_in_range() {
        let r = region_64k();
        let d = BufferDescriptor::new(4096, 1518);
        assert_eq!(r.sanitize(&d), Ok(()));
    }

    #[test]
    fn sanitize_rejects_misaligned() {
        let r = region_64k();
        let d = BufferDescriptor::new(100, 64);
        assert_eq!(r.sanitize(&d), Err(InvalidDescriptor::Misaligned(100)));
    }

    #[test]
    fn sanitize_rejects_offset_at_region_size() {
        let r = region_64k();
        let d = BufferDescriptor::new(r.size(), 0);
        assert_eq!(r.sanitize(&d), Err(InvalidDescriptor::OutOfRange(r.size())));
    }

    #[test]
    fn sanitize_rejects_overlong() {
        let r = region_64k();
        let d = BufferDescriptor::new(0, 4000);
        assert_eq!(r.sanitize(&d), Err(InvalidDescriptor::TooLong(4000)));
    }

    #[test]
    fn subregions_are_disjoint_and_ordered() {
        let r = DataRegion::new(RegionId(0), "tx", 2048, 32, &[8, 8, 16], true).unwrap();
        let a = r.subregion(0).unwrap();
        let b = r.subregion(1).unwrap();
        let c = r.subregion(2).unwrap();
        assert_eq!(a.base, 0);
        assert_eq!(b.base, 8 * 2048);
        assert_eq!(c.base, 16 * 2048);
        assert_eq!(c.len, 16 * 2048);
        assert_eq!(r.subregion_of_offset(0), Some(0));
        assert_eq!(r.subregion_of_offset(8 * 2048), Some(1));
        assert_eq!(r.subregion_of_offset(31 * 2048), Some(2));
    }

    #[test]
    fn oversized_subregions_rejected() {
        let err = DataRegion::new(RegionId(0), "tx", 2048, 8, &[8, 1], true).unwrap_err();
        assert_eq!(err, RegionConfigError::BadSubRegions);
    }
}
