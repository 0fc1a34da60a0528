use std::sync::atomic::{fence, AtomicI64, AtomicU64, Ordering};

use crate::staleness::{ReadMeta, Version};
use crate::vectormath::DenseVec;

struct Slot {
    seq: AtomicU64,
    bits: AtomicU64,
    version: AtomicI64,
}

/// Parameter vector shared between one writer and many readers without locks.
///
/// Each coordinate carries its own sequence counter and version stamp, so a
/// reader always gets a value together with the version that wrote it, while
/// different coordinates of one read may come from different versions.
pub struct SharedParams {
    slots: Vec<Slot>,
    published: AtomicI64,
}

impl SharedParams {
    pub fn new(x0: &[f64]) -> Self {
        SharedParams {
            slots: x0
                .iter()
                .map(|v| Slot { seq: AtomicU64::new(0), bits: AtomicU64::new(v.to_bits()), version: AtomicI64::new(0) })
                .collect(),
            published: AtomicI64::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.slots.len()
    }

    /// Latest fully written version.
    pub fn version(&self) -> Version {
        self.published.load(Ordering::Acquire)
    }

    /// Writes iterate `version`. Must only be called by the single writer.
    pub fn publish(&self, x: &[f64], version: Version) {
        assert_eq!(x.len(), self.slots.len(), "dimension mismatch");
        for (slot, v) in self.slots.iter().zip(x) {
            let s = slot.seq.load(Ordering::Relaxed);
            slot.seq.store(s.wrapping_add(1), Ordering::Relaxed);
            fence(Ordering::Release);
            slot.bits.store(v.to_bits(), Ordering::Relaxed);
            slot.version.store(version, Ordering::Relaxed);
            slot.seq.store(s.wrapping_add(2), Ordering::Release);
        }
        self.published.store(version, Ordering::Release);
    }

    fn read_slot(slot: &Slot) -> (f64, Version) {
        loop {
            let s1 = slot.seq.load(Ordering::Acquire);
            if s1 % 2 == 1 {
                std::hint::spin_loop();
                continue;
            }
            let bits = slot.bits.load(Ordering::Relaxed);
            let version = slot.version.load(Ordering::Relaxed);
            fence(Ordering::Acquire);
            if slot.seq.load(Ordering::Relaxed) == s1 {
                return (f64::from_bits(bits), version);
            }
        }
    }

    /// Reads every coordinate once, in order.
    pub fn read(&self) -> (DenseVec, ReadMeta) {
        let mut x = Vec::with_capacity(self.slots.len());
        let mut versions = Vec::with_capacity(self.slots.len());
        for slot in &self.slots {
            let (v, ver) = Self::read_slot(slot);
            x.push(v);
            versions.push(ver);
        }
        (DenseVec::from(x), ReadMeta::new(versions))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicBool;

    #[test]
    fn read_after_publish() {
        let p = SharedParams::new(&[1.0, 2.0]);
        let (x, meta) = p.read();
        assert_eq!(x.as_slice(), &[1.0, 2.0]);
        assert_eq!(meta.per_coord_version, vec![0, 0]);
        p.publish(&[3.0, -4.0], 1);
        let (x, meta) = p.read();
        assert_eq!(x.as_slice(), &[3.0, -4.0]);
        assert_eq!(meta.per_coord_version, vec![1, 1]);
        assert_eq!(p.version(), 1);
    }

    #[test]
    fn concurrent_reads_pair_values_with_versions() {
        // version v stores the value v in every coordinate, so each coordinate's
        // value must equal its stamp regardless of interleaving
        let n = 64;
        let p = SharedParams::new(&vec![0.0; n]);
        let stop = AtomicBool::new(false);
        std::thread::scope(|s| {
            for _ in 0..3 {
                s.spawn(|| {
                    while !stop.load(Ordering::Relaxed) {
                        let (x, meta) = p.read();
                        for (v, ver) in x.iter().zip(&meta.per_coord_version) {
                            assert_eq!(*v, *ver as f64);
                        }
                    }
                });
            }
            for ver in 1..=2000 {
                p.publish(&vec![ver as f64; n], ver);
            }
            stop.store(true, Ordering::Relaxed);
        });
    }
}
