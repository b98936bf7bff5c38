//! Software compute/render device.
//!
//! A [`DeviceBuffer`] is a region of device memory made of relaxed atomic
//! words. Compute dispatches store into it and the rasterizer loads from it
//! directly, so one buffer can be written by a kernel and read by a render
//! pass without any intermediate copy, and concurrent access in the
//! desynchronized mode tears values instead of invoking undefined behaviour.

use std::fmt;
use std::sync::atomic::{AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Binding alignment applied to every allocation, in bytes.
pub const ALLOCATION_ALIGNMENT: usize = 256;

const WORDS_PER_BLOCK: usize = ALLOCATION_ALIGNMENT / 4;

#[repr(C, align(256))]
struct Block([AtomicU32; WORDS_PER_BLOCK]);

impl Block {
    fn zeroed() -> Self {
        Block(std::array::from_fn(|_| AtomicU32::new(0)))
    }
}

/// Capabilities advertised by a device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceInfo {
    pub name: String,
    pub compute: bool,
    pub graphics: bool,
    pub memory_bytes: usize,
}

impl DeviceInfo {
    pub fn is_capable(&self) -> bool {
        self.compute && self.graphics
    }
}

/// Devices visible to this process.
pub fn enumerate_devices() -> Vec<DeviceInfo> {
    vec![DeviceInfo {
        name: format!(
            "software rasterizer ({} worker threads)",
            rayon::current_num_threads()
        ),
        compute: true,
        graphics: true,
        memory_bytes: physical_memory_bytes(),
    }]
}

/// Picks the device to use: the override when given (it must be capable),
/// otherwise the first device that supports both compute and graphics.
pub fn select_device(devices: &[DeviceInfo], override_index: Option<usize>) -> Result<usize> {
    match override_index {
        Some(i) => match devices.get(i) {
            Some(d) if d.is_capable() => Ok(i),
            _ => Err(Error::NoCapableDevice),
        },
        None => devices
            .iter()
            .position(DeviceInfo::is_capable)
            .ok_or(Error::NoCapableDevice),
    }
}

fn physical_memory_bytes() -> usize {
    std::fs::read_to_string("/proc/meminfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("MemTotal:"))
                .and_then(|l| l.split_whitespace().nth(1))
                .and_then(|kb| kb.parse::<usize>().ok())
        })
        .map(|kb| kb * 1024)
        .unwrap_or(8 << 30)
}

/// Resident set size of the process, the closest analogue of whole-device
/// memory use on a host-memory device. `None` where the platform offers no
/// way to query it.
pub fn process_resident_bytes() -> Option<usize> {
    let statm = std::fs::read_to_string("/proc/self/statm").ok()?;
    let pages: usize = statm.split_whitespace().nth(1)?.parse().ok()?;
    Some(pages * 4096)
}

/// Byte traffic between host and device, and copies out of device buffers
/// made by the render path.
#[derive(Debug, Default)]
pub struct TransferCounters {
    upload_bytes: AtomicU64,
    readback_bytes: AtomicU64,
    render_copy_bytes: AtomicU64,
}

impl TransferCounters {
    pub fn upload_bytes(&self) -> u64 {
        self.upload_bytes.load(Ordering::Relaxed)
    }

    pub fn readback_bytes(&self) -> u64 {
        self.readback_bytes.load(Ordering::Relaxed)
    }

    /// Bytes copied from a device buffer into any other buffer in order to
    /// render it. Stays 0: render passes read buffers in place.
    pub fn render_copy_bytes(&self) -> u64 {
        self.render_copy_bytes.load(Ordering::Relaxed)
    }

    pub(crate) fn add_upload(&self, n: usize) {
        self.upload_bytes.fetch_add(n as u64, Ordering::Relaxed);
    }

    pub(crate) fn add_readback(&self, n: usize) {
        self.readback_bytes.fetch_add(n as u64, Ordering::Relaxed);
    }
}

#[derive(Debug)]
struct MemoryPool {
    used: AtomicUsize,
    budget: usize,
}

struct DeviceInner {
    index: usize,
    info: DeviceInfo,
    pool: Arc<MemoryPool>,
    counters: Arc<TransferCounters>,
}

/// Handle to an opened device. Cheap to clone.
#[derive(Clone)]
pub struct Device {
    inner: Arc<DeviceInner>,
}

impl fmt::Debug for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Device")
            .field("index", &self.inner.index)
            .field("name", &self.inner.info.name)
            .finish()
    }
}

impl Device {
    /// Opens the selected device (see [`select_device`]).
    pub fn open(override_index: Option<usize>) -> Result<Self> {
        let devices = enumerate_devices();
        let index = select_device(&devices, override_index)?;
        let info = devices[index].clone();
        Ok(Device {
            inner: Arc::new(DeviceInner {
                index,
                pool: Arc::new(MemoryPool {
                    used: AtomicUsize::new(0),
                    budget: info.memory_bytes,
                }),
                info,
                counters: Arc::default(),
            }),
        })
    }

    pub fn index(&self) -> usize {
        self.inner.index
    }

    pub fn info(&self) -> &DeviceInfo {
        &self.inner.info
    }

    pub fn counters(&self) -> &TransferCounters {
        &self.inner.counters
    }

    pub(crate) fn shared_counters(&self) -> Arc<TransferCounters> {
        Arc::clone(&self.inner.counters)
    }

    /// Bytes currently held by live buffers, padding included.
    pub fn memory_in_use(&self) -> usize {
        self.inner.pool.used.load(Ordering::Relaxed)
    }

    /// Plain device allocation, the analogue of the native allocator: usable
    /// by kernels but not registered with any instance.
    pub fn alloc(&self, byte_size: usize) -> Result<DeviceBuffer> {
        if byte_size == 0 {
            return Err(Error::InvalidSize);
        }
        let blocks = byte_size.div_ceil(ALLOCATION_ALIGNMENT);
        let padded = blocks * ALLOCATION_ALIGNMENT;
        let pool = &self.inner.pool;
        let oom = Error::OutOfDeviceMemory {
            requested: byte_size,
        };
        pool.used
            .fetch_update(Ordering::Relaxed, Ordering::Relaxed, |used| {
                used.checked_add(padded).filter(|&total| total <= pool.budget)
            })
            .map_err(|_| Error::OutOfDeviceMemory {
                requested: byte_size,
            })?;
        let mut storage = Vec::new();
        if storage.try_reserve_exact(blocks).is_err() {
            pool.used.fetch_sub(padded, Ordering::Relaxed);
            return Err(oom);
        }
        storage.resize_with(blocks, Block::zeroed);
        Ok(DeviceBuffer {
            inner: Arc::new(BufferInner {
                blocks: storage.into_boxed_slice(),
                byte_size,
                pool: Arc::clone(pool),
            }),
        })
    }

    /// Runs `kernel(i)` for every `i` in `0..n` on the device workers and
    /// returns once all invocations finished.
    pub fn dispatch<F>(&self, n: usize, kernel: F)
    where
        F: Fn(usize) + Sync + Send,
    {
        (0..n).into_par_iter().with_min_len(1024).for_each(kernel);
    }
}

struct BufferInner {
    blocks: Box<[Block]>,
    byte_size: usize,
    pool: Arc<MemoryPool>,
}

impl Drop for BufferInner {
    fn drop(&mut self) {
        self.pool
            .used
            .fetch_sub(self.blocks.len() * ALLOCATION_ALIGNMENT, Ordering::Relaxed);
    }
}

/// A device memory region. Clones alias the same memory.
///
/// Element accessors index in units of the accessed type and use relaxed
/// ordering; visibility between compute and render is established by the
/// synchronization protocol, not by the buffer.
#[derive(Clone)]
pub struct DeviceBuffer {
    inner: Arc<BufferInner>,
}

impl fmt::Debug for DeviceBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeviceBuffer")
            .field("byte_size", &self.inner.byte_size)
            .field("address", &self.address())
            .finish()
    }
}

impl DeviceBuffer {
    #[inline]
    fn words(&self) -> &[AtomicU32] {
        let blocks = &self.inner.blocks;
        // SAFETY: `Block` is `repr(C)` around `[AtomicU32; WORDS_PER_BLOCK]`
        // with size equal to its alignment, so a slice of blocks is a
        // contiguous, padding-free run of `len * WORDS_PER_BLOCK` words.
        unsafe {
            std::slice::from_raw_parts(
                blocks.as_ptr().cast::<AtomicU32>(),
                blocks.len() * WORDS_PER_BLOCK,
            )
        }
    }

    /// Requested size in bytes.
    pub fn byte_size(&self) -> usize {
        self.inner.byte_size
    }

    /// Size including alignment padding.
    pub fn padded_size(&self) -> usize {
        self.inner.blocks.len() * ALLOCATION_ALIGNMENT
    }

    /// Base address, for identity and alignment checks.
    pub fn address(&self) -> usize {
        self.inner.blocks.as_ptr() as usize
    }

    pub fn same_memory(&self, other: &DeviceBuffer) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    #[inline]
    pub fn load_u32(&self, i: usize) -> u32 {
        self.words()[i].load(Ordering::Relaxed)
    }

    #[inline]
    pub fn store_u32(&self, i: usize, v: u32) {
        self.words()[i].store(v, Ordering::Relaxed)
    }

    #[inline]
    pub fn load_i32(&self, i: usize) -> i32 {
        self.load_u32(i) as i32
    }

    #[inline]
    pub fn store_i32(&self, i: usize, v: i32) {
        self.store_u32(i, v as u32)
    }

    #[inline]
    pub fn load_f32(&self, i: usize) -> f32 {
        f32::from_bits(self.load_u32(i))
    }

    #[inline]
    pub fn store_f32(&self, i: usize, v: f32) {
        self.store_u32(i, v.to_bits())
    }

    #[inline]
    pub fn load_u16(&self, i: usize) -> u16 {
        (self.load_u32(i / 2) >> ((i % 2) * 16)) as u16
    }

    #[inline]
    pub fn load_u8(&self, i: usize) -> u8 {
        (self.load_u32(i / 4) >> ((i % 4) * 8)) as u8
    }

    #[inline]
    pub fn load_f64(&self, i: usize) -> f64 {
        let lo = self.load_u32(2 * i) as u64;
        let hi = self.load_u32(2 * i + 1) as u64;
        f64::from_bits(lo | (hi << 32))
    }

    #[inline]
    pub fn store_f64(&self, i: usize, v: f64) {
        let bits = v.to_bits();
        self.store_u32(2 * i, bits as u32);
        self.store_u32(2 * i + 1, (bits >> 32) as u32);
    }

    /// Loads `N` consecutive `f32` starting at vector index `i` (so element
    /// `i` of an array of `N`-component vectors).
    #[inline]
    pub fn load_vec<const N: usize>(&self, i: usize) -> [f32; N] {
        let words = &self.words()[i * N..i * N + N];
        std::array::from_fn(|c| f32::from_bits(words[c].load(Ordering::Relaxed)))
    }

    #[inline]
    pub fn store_vec<const N: usize>(&self, i: usize, v: [f32; N]) {
        let words = &self.words()[i * N..i * N + N];
        for (w, x) in words.iter().zip(v) {
            w.store(x.to_bits(), Ordering::Relaxed);
        }
    }

    #[inline]
    pub fn load_dvec<const N: usize>(&self, i: usize) -> [f64; N] {
        std::array::from_fn(|c| self.load_f64(i * N + c))
    }

    #[inline]
    pub fn store_dvec<const N: usize>(&self, i: usize, v: [f64; N]) {
        for (c, x) in v.into_iter().enumerate() {
            self.store_f64(i * N + c, x);
        }
    }

    fn check_range(&self, offset: usize, len: usize) -> Result<()> {
        match offset.checked_add(len) {
            Some(end) if end <= self.byte_size() => Ok(()),
            _ => Err(Error::OutOfBounds {
                offset,
                len,
                size: self.byte_size(),
            }),
        }
    }

    /// Copies host bytes into the region at `offset`.
    pub fn write_bytes(&self, offset: usize, data: &[u8]) -> Result<()> {
        self.check_range(offset, data.len())?;
        let words = self.words();
        let mut pos = offset;
        let mut rest = data;
        // Leading partial word.
        while !pos.is_multiple_of(4) && !rest.is_empty() {
            self.store_byte(pos, rest[0]);
            pos += 1;
            rest = &rest[1..];
        }
        let mut chunks = rest.chunks_exact(4);
        for (k, chunk) in chunks.by_ref().enumerate() {
            let v = u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            words[pos / 4 + k].store(v, Ordering::Relaxed);
        }
        pos += rest.len() - chunks.remainder().len();
        for &b in chunks.remainder() {
            self.store_byte(pos, b);
            pos += 1;
        }
        Ok(())
    }

    /// Copies `len` bytes starting at `offset` out of the region.
    pub fn read_bytes(&self, offset: usize, len: usize) -> Result<Vec<u8>> {
        self.check_range(offset, len)?;
        Ok((offset..offset + len).map(|b| self.load_u8(b)).collect())
    }

    fn store_byte(&self, pos: usize, b: u8) {
        let shift = (pos % 4) * 8;
        let mask = !(0xffu32 << shift);
        // Other bytes of the word may be written concurrently by a kernel.
        let _ = self.words()[pos / 4].fetch_update(Ordering::Relaxed, Ordering::Relaxed, |w| {
            Some((w & mask) | ((b as u32) << shift))
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn device() -> Device {
        Device::open(None).unwrap()
    }

    #[test]
    fn selection_skips_incapable_devices() {
        let compute_only = DeviceInfo {
            name: "compute".into(),
            compute: true,
            graphics: false,
            memory_bytes: 1,
        };
        let both = DeviceInfo {
            graphics: true,
            name: "both".into(),
            ..compute_only.clone()
        };
        assert!(matches!(
            select_device(std::slice::from_ref(&compute_only), None),
            Err(Error::NoCapableDevice)
        ));
        assert_eq!(select_device(&[compute_only.clone(), both.clone()], None).unwrap(), 1);
        assert!(select_device(&[compute_only.clone(), both.clone()], Some(0)).is_err());
        assert!(select_device(&[both], Some(3)).is_err());
    }

    #[test]
    fn allocations_are_aligned_and_accounted() {
        let dev = device();
        let before = dev.memory_in_use();
        let a = dev.alloc(1).unwrap();
        let b = dev.alloc(300).unwrap();
        assert_eq!(a.address() % ALLOCATION_ALIGNMENT, 0);
        assert_eq!(b.address() % ALLOCATION_ALIGNMENT, 0);
        assert_eq!(a.padded_size(), 256);
        assert_eq!(b.padded_size(), 512);
        assert_eq!(dev.memory_in_use() - before, 768);
        drop(a);
        drop(b);
        assert_eq!(dev.memory_in_use(), before);
        assert!(matches!(dev.alloc(0), Err(Error::InvalidSize)));
        assert!(matches!(
            dev.alloc(usize::MAX / 2),
            Err(Error::OutOfDeviceMemory { .. })
        ));
    }

    #[test]
    fn unaligned_byte_writes_preserve_neighbours() {
        let dev = device();
        let buf = dev.alloc(16).unwrap();
        buf.write_bytes(0, &[0xaa; 16]).unwrap();
        buf.write_bytes(3, &[1, 2, 3, 4, 5, 6]).unwrap();
        let back = buf.read_bytes(0, 16).unwrap();
        assert_eq!(
            back,
            [0xaa, 0xaa, 0xaa, 1, 2, 3, 4, 5, 6, 0xaa, 0xaa, 0xaa, 0xaa, 0xaa, 0xaa, 0xaa]
        );
        assert!(buf.write_bytes(12, &[0; 5]).is_err());
        assert!(buf.read_bytes(usize::MAX, 2).is_err());
    }

    #[test]
    fn typed_views_share_little_endian_layout() {
        let dev = device();
        let buf = dev.alloc(32).unwrap();
        buf.store_vec(1, [1.0f32, 2.0, 3.0]);
        assert_eq!(buf.load_f32(4), 2.0);
        let bytes = buf.read_bytes(12, 4).unwrap();
        assert_eq!(bytes, 1.0f32.to_le_bytes());
        buf.store_f64(3, -2.5);
        assert_eq!(buf.read_bytes(24, 8).unwrap(), (-2.5f64).to_le_bytes());
        buf.store_u32(0, 0x0403_0201);
        assert_eq!(buf.load_u8(2), 3);
        assert_eq!(buf.load_u16(1), 0x0403);
    }

    #[test]
    fn dispatch_covers_every_index_once() {
        let dev = device();
        let buf = dev.alloc(4 * 10_000).unwrap();
        dev.dispatch(10_000, |i| {
            buf.store_u32(i, buf.load_u32(i) + i as u32 + 1);
        });
        assert!((0..10_000).all(|i| buf.load_u32(i) == i as u32 + 1));
    }
}
