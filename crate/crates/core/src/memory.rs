//! Shared allocations: device buffers registered with an instance so that
//! views can render them while compute kernels write them.

use std::sync::Arc;

use crate::device::{DeviceBuffer, TransferCounters};
use crate::engine::Instance;
use crate::error::{Error, Result};

/// Handle to a registered shared allocation. Clones refer to the same
/// allocation; the handle becomes invalid once freed.
#[derive(Debug, Clone)]
pub struct SharedAllocation {
    pub(crate) id: u64,
    pub(crate) instance_id: u64,
    pub(crate) buffer: DeviceBuffer,
    pub(crate) counters: Arc<TransferCounters>,
}

impl SharedAllocation {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn byte_size(&self) -> usize {
        self.buffer.byte_size()
    }

    /// The device region behind the allocation.
    pub fn buffer(&self) -> &DeviceBuffer {
        &self.buffer
    }

    /// Copies host bytes into the allocation at `offset`. The write is
    /// visible to kernels and to the next rendered frame once this returns.
    pub fn write_from_host(&self, offset: usize, data: &[u8]) -> Result<()> {
        self.buffer.write_bytes(offset, data)?;
        self.counters.add_upload(data.len());
        crate::sync::publish_host_writes();
        Ok(())
    }

    /// Reads back `length` bytes starting at `offset`.
    pub fn read_to_host(&self, offset: usize, length: usize) -> Result<Vec<u8>> {
        crate::sync::acquire_device_writes();
        let bytes = self.buffer.read_bytes(offset, length)?;
        self.counters.add_readback(length);
        Ok(bytes)
    }

    /// Typed upload of plain-old-data values.
    pub fn write_f32(&self, offset: usize, data: &[f32]) -> Result<()> {
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.write_from_host(offset, &bytes)
    }

    pub fn write_u32(&self, offset: usize, data: &[u32]) -> Result<()> {
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.write_from_host(offset, &bytes)
    }

    pub fn read_f32(&self, offset: usize, count: usize) -> Result<Vec<f32>> {
        let bytes = self.read_to_host(offset, count * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn read_u32(&self, offset: usize, count: usize) -> Result<Vec<u32>> {
        let bytes = self.read_to_host(offset, count * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

impl Instance {
    /// Allocates `byte_size` bytes of device memory usable both by compute
    /// kernels and by views. Returns the region, as a native allocation
    /// would, and the handle used to describe views.
    pub fn alloc_linear(&self, byte_size: usize) -> Result<(DeviceBuffer, SharedAllocation)> {
        self.inner.ensure_live()?;
        let buffer = self.inner.device.alloc(byte_size)?;
        let mut reg = self.inner.registry.lock();
        reg.next_allocation += 1;
        let id = reg.next_allocation;
        reg.allocations.insert(id, buffer.clone());
        reg.counters.allocations_created += 1;
        Ok((
            buffer.clone(),
            SharedAllocation {
                id,
                instance_id: self.inner.id,
                buffer,
                counters: self.inner.device.shared_counters(),
            },
        ))
    }

    /// Releases an allocation. Fails while any live view still reads it as a
    /// property or index source.
    pub fn free_allocation(&self, alloc: &SharedAllocation) -> Result<()> {
        if alloc.instance_id != self.inner.id {
            return Err(Error::ForeignAllocation(alloc.id));
        }
        let mut reg = self.inner.registry.lock();
        if !reg.allocations.contains_key(&alloc.id) {
            return Err(Error::InvalidHandle(alloc.id));
        }
        if let Some(view) = reg.views.values().find(|v| v.references(alloc.id)) {
            return Err(Error::StillReferenced(alloc.id, view.id));
        }
        reg.allocations.remove(&alloc.id);
        reg.counters.allocations_freed += 1;
        Ok(())
    }

    /// Whether `alloc` is registered with this instance and not yet freed.
    pub fn is_live(&self, alloc: &SharedAllocation) -> bool {
        alloc.instance_id == self.inner.id && self.inner.registry.lock().allocations.contains_key(&alloc.id)
    }

    /// Device bytes held by shared allocations, padding included.
    pub fn shared_allocation_bytes(&self) -> usize {
        self.inner
            .registry
            .lock()
            .allocations
            .values()
            .map(DeviceBuffer::padded_size)
            .sum()
    }
}
