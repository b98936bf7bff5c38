//! All-pairs gravitational N-body simulation with double-buffered
//! positions, one marker view per buffer.

use crate::device::{Device, DeviceBuffer};
use crate::engine::Instance;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::view::{
    DomainType, FormatDescription, PropertyDescription, PropertyType, ViewDescription, ViewHandle, ViewType,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NBodyParams {
    pub n: usize,
    pub dt: f32,
    /// Velocity factor applied every step, in (0, 1].
    pub damping: f32,
    /// Squared softening length ε².
    pub softening2: f32,
    pub seed: u64,
    /// Marker diameter in pixels.
    pub point_size: f32,
}

impl Default for NBodyParams {
    fn default() -> Self {
        NBodyParams {
            n: 4096,
            dt: 0.016,
            damping: 0.995,
            softening2: 0.01,
            seed: 0,
            point_size: 3.0,
        }
    }
}

impl NBodyParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("body count must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidConfig(format!("damping {} must be in (0, 1]", self.damping)));
        }
        if !(self.softening2 > 0.0) {
            return Err(Error::InvalidConfig(format!("softening {} must be positive", self.softening2)));
        }
        if !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("time step {}", self.dt)));
        }
        Ok(())
    }
}

/// Acceleration of body `i` from all others. Positions carry the mass in
/// their fourth component.
#[inline]
pub fn acceleration(positions: impl Fn(usize) -> [f32; 4], n: usize, i: usize, softening2: f32) -> [f32; 3] {
    let pi = positions(i);
    let mut a = [0.0f32; 3];
    for j in 0..n {
        if j == i {
            continue;
        }
        let pj = positions(j);
        let d = [pj[0] - pi[0], pj[1] - pi[1], pj[2] - pi[2]];
        let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + softening2;
        let inv = 1.0 / (r2 * r2.sqrt());
        for c in 0..3 {
            a[c] += pj[3] * d[c] * inv;
        }
    }
    a
}

/// New velocity and position of one body.
#[inline]
fn advance(p: [f32; 4], v: [f32; 4], a: [f32; 3], dt: f32, damping: f32) -> ([f32; 4], [f32; 4]) {
    let mut v2 = v;
    let mut p2 = p;
    for c in 0..3 {
        v2[c] = (v[c] + a[c] * dt) * damping;
        p2[c] = p[c] + v2[c] * dt;
    }
    (p2, v2)
}

/// Host reference of one integration step: reads `read`, writes `write`
/// and updates `velocities` in place.
pub fn integrate(read: &[[f32; 4]], write: &mut [[f32; 4]], velocities: &mut [[f32; 4]], p: &NBodyParams) {
    let n = read.len();
    for i in 0..n {
        let a = acceleration(|j| read[j], n, i, p.softening2);
        let (pos, vel) = advance(read[i], velocities[i], a, p.dt, p.damping);
        write[i] = pos;
        velocities[i] = vel;
    }
}

/// Device twin of [`integrate`] on `f32x4` buffers.
pub fn integrate_device(
    device: &Device,
    read: &DeviceBuffer,
    write: &DeviceBuffer,
    velocities: &DeviceBuffer,
    p: &NBodyParams,
) {
    let n = p.n;
    device.dispatch(n, |i| {
        let a = acceleration(|j| read.load_vec(j), n, i, p.softening2);
        let (pos, vel) = advance(read.load_vec(i), velocities.load_vec(i), a, p.dt, p.damping);
        write.store_vec(i, pos);
        velocities.store_vec(i, vel);
    });
}

/// Bodies uniform in a cube of side 2 around the origin, unit masses, and
/// a slow rotation about +y so the cloud does not collapse at once.
pub fn initial_bodies(p: &NBodyParams) -> (Vec<[f32; 4]>, Vec<[f32; 4]>) {
    let u = |i: usize, c: u64| rng::uniform(p.seed, Stream::NBodyInit, i as u64, c) * 2.0 - 1.0;
    let pos: Vec<[f32; 4]> = (0..p.n).map(|i| [u(i, 0), u(i, 1), u(i, 2), 1.0]).collect();
    let vel = pos
        .iter()
        .enumerate()
        .map(|(i, q)| [-q[2] * 0.5 + 0.05 * u(i, 3), 0.05 * u(i, 4), q[0] * 0.5 + 0.05 * u(i, 5), 0.0])
        .collect();
    (pos, vel)
}

/// Host state with ping-pong position buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct NBodyState {
    pub params: NBodyParams,
    pub positions: [Vec<[f32; 4]>; 2],
    pub velocities: Vec<[f32; 4]>,
    pub current_read: usize,
}

impl NBodyState {
    pub fn new(params: NBodyParams) -> Result<Self> {
        params.validate()?;
        let (pos, vel) = initial_bodies(&params);
        Ok(NBodyState {
            params,
            positions: [pos.clone(), pos],
            velocities: vel,
            current_read: 0,
        })
    }

    pub fn current_write(&self) -> usize {
        1 - self.current_read
    }

    /// Integrates one step into the write buffer, then swaps roles.
    pub fn step(&mut self) {
        let [a, b] = &mut self.positions;
        let (read, write) = if self.current_read == 0 { (a, b) } else { (b, a) };
        integrate(read, write, &mut self.velocities, &self.params);
        self.current_read = self.current_write();
    }

    pub fn positions(&self) -> &[[f32; 4]] {
        &self.positions[self.current_read]
    }

    /// Σ m·v.
    pub fn momentum(&self) -> [f64; 3] {
        momentum(self.positions(), &self.velocities)
    }
}

pub fn momentum(positions: &[[f32; 4]], velocities: &[[f32; 4]]) -> [f64; 3] {
    let mut m = [0.0; 3];
    for (p, v) in positions.iter().zip(velocities) {
        for c in 0..3 {
            m[c] += p[3] as f64 * v[c] as f64;
        }
    }
    m
}

/// Device-resident simulation drawn by two marker views whose visibility
/// alternates with the buffer roles.
pub struct NBodySample {
    pub params: NBodyParams,
    pub views: [ViewHandle; 2],
    buffers: [DeviceBuffer; 2],
    velocities: DeviceBuffer,
    current_read: usize,
}

impl NBodySample {
    pub fn new(inst: &Instance, params: NBodyParams) -> Result<Self> {
        params.validate()?;
        let (pos, vel) = initial_bodies(&params);
        let bytes = params.n * 16;
        let (b0, a0) = inst.alloc_linear(bytes)?;
        let (b1, a1) = inst.alloc_linear(bytes)?;
        let velocities = inst.device().alloc(bytes)?;
        for i in 0..params.n {
            b0.store_vec(i, pos[i]);
            b1.store_vec(i, pos[i]);
            velocities.store_vec(i, vel[i]);
        }
        let mut desc = ViewDescription::new(ViewType::Markers, DomainType::Domain3D, params.n).with_property(
            PropertyType::Position,
            PropertyDescription::new(a0, params.n, FormatDescription::FLOAT4),
        );
        desc.default_color = [1.0, 1.0, 1.0, 1.0];
        desc.default_size = params.point_size;
        let v0 = inst.create_view(&desc)?;
        desc.visible = false;
        desc.properties.insert(
            PropertyType::Position,
            PropertyDescription::new(a1, params.n, FormatDescription::FLOAT4),
        );
        let v1 = inst.create_view(&desc)?;
        Ok(NBodySample {
            params,
            views: [v0, v1],
            buffers: [b0, b1],
            velocities,
            current_read: 0,
        })
    }

    /// One step inside a critical section: integrate, swap roles and swap
    /// which view is visible.
    pub fn step(&mut self, inst: &Instance) -> Result<()> {
        inst.prepare_views()?;
        let (read, write) = (&self.buffers[self.current_read], &self.buffers[1 - self.current_read]);
        integrate_device(inst.device(), read, write, &self.velocities, &self.params);
        self.current_read = 1 - self.current_read;
        self.views[0].toggle_visibility();
        self.views[1].toggle_visibility();
        inst.update_views()
    }

    pub fn current_read(&self) -> usize {
        self.current_read
    }

    pub fn positions(&self) -> Vec<[f32; 4]> {
        let b = &self.buffers[self.current_read];
        (0..self.params.n).map(|i| b.load_vec(i)).collect()
    }
}
