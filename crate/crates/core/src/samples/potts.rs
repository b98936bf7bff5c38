//! Q-state Potts model on an L×L periodic lattice, updated with a
//! checkerboard Metropolis scheme and drawn as voxels through an indexed
//! colormap.

use crate::device::{Device, DeviceBuffer};
use crate::engine::Instance;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::view::{
    DomainType, FormatDescription, PropertyDescription, PropertyType, ViewDescription, ViewHandle, ViewType,
};

/// One color per spin state, RGBA in [0, 1].
pub const COLORMAP: [[f32; 4]; 9] = {
    const ROWS: [[f32; 4]; 9] = [
        [153.0, 153.0, 153.0, 1.0],
        [228.0, 26.0, 28.0, 1.0],
        [55.0, 126.0, 184.0, 1.0],
        [77.0, 175.0, 74.0, 1.0],
        [152.0, 78.0, 163.0, 1.0],
        [255.0, 127.0, 0.0, 1.0],
        [255.0, 255.0, 51.0, 1.0],
        [166.0, 86.0, 40.0, 1.0],
        [247.0, 129.0, 191.0, 1.0],
    ];
    let mut out = [[0.0; 4]; 9];
    let mut i = 0;
    while i < 9 {
        out[i] = [ROWS[i][0] / 255.0, ROWS[i][1] / 255.0, ROWS[i][2] / 255.0, ROWS[i][3]];
        i += 1;
    }
    out
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellSet {
    White,
    Black,
}

impl CellSet {
    fn parity(self) -> usize {
        match self {
            CellSet::White => 0,
            CellSet::Black => 1,
        }
    }

    pub fn other(self) -> Self {
        match self {
            CellSet::White => CellSet::Black,
            CellSet::Black => CellSet::White,
        }
    }
}

/// Set and packed index of lattice cell `(row, col)`: white when
/// `row + col` is even, packed row-major with `L/2` cells per row.
#[inline]
pub fn checkerboard_index(row: usize, col: usize, l: usize) -> (CellSet, usize) {
    let set = if (row + col).is_multiple_of(2) { CellSet::White } else { CellSet::Black };
    (set, row * (l / 2) + col / 2)
}

/// Inverse of [`checkerboard_index`].
#[inline]
pub fn cell_of(set: CellSet, packed: usize, l: usize) -> (usize, usize) {
    let half = l / 2;
    let row = packed / half;
    let col = 2 * (packed % half) + (row + set.parity()) % 2;
    (row, col)
}

/// Assembles the full lattice from the packed halves.
pub fn write_grid(white: &[u32], black: &[u32], l: usize) -> Vec<u32> {
    let mut grid = vec![0; l * l];
    for (i, cell) in grid.iter_mut().enumerate() {
        let (set, k) = checkerboard_index(i / l, i % l, l);
        *cell = match set {
            CellSet::White => white[k],
            CellSet::Black => black[k],
        };
    }
    grid
}

/// Splits a full lattice into its packed halves.
pub fn split_grid(grid: &[u32], l: usize) -> (Vec<u32>, Vec<u32>) {
    let half = l * l / 2;
    let mut white = vec![0; half];
    let mut black = vec![0; half];
    for (i, &v) in grid.iter().enumerate() {
        match checkerboard_index(i / l, i % l, l) {
            (CellSet::White, k) => white[k] = v,
            (CellSet::Black, k) => black[k] = v,
        }
    }
    (white, black)
}

/// Device twin of [`write_grid`].
pub fn write_grid_device(device: &Device, white: &DeviceBuffer, black: &DeviceBuffer, grid: &DeviceBuffer, l: usize) {
    device.dispatch(l * l, |i| {
        let (set, k) = checkerboard_index(i / l, i % l, l);
        let v = match set {
            CellSet::White => white.load_u32(k),
            CellSet::Black => black.load_u32(k),
        };
        grid.store_u32(i, v);
    });
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PottsParams {
    /// Lattice side; even, at least 2.
    pub l: usize,
    /// Number of spin states, at most the colormap size.
    pub q: u32,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for PottsParams {
    fn default() -> Self {
        PottsParams {
            l: 256,
            q: 9,
            temperature: 0.5,
            seed: 0,
        }
    }
}

impl PottsParams {
    pub fn validate(&self) -> Result<()> {
        if self.l < 2 || !self.l.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!("lattice side {} must be even and at least 2", self.l)));
        }
        if self.q == 0 || self.q as usize > COLORMAP.len() {
            return Err(Error::InvalidConfig(format!("q = {} must be in 1..={}", self.q, COLORMAP.len())));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }
}

/// RNG counter of the update of `set` during sweep `sweep`.
#[inline]
fn counter(sweep: u64, set: CellSet) -> u64 {
    2 * sweep + set.parity() as u64
}

/// Metropolis decision for one cell given its four neighbours.
#[inline]
fn metropolis(p: &PottsParams, cell: u64, current: u32, neighbours: [u32; 4], ctr: u64) -> u32 {
    let proposal = rng::uniform_below(p.seed, Stream::PottsProposal, cell, ctr, p.q);
    let same = |s: u32| neighbours.iter().filter(|&&n| n == s).count() as f64;
    let delta_e = -(same(proposal) - same(current));
    if delta_e <= 0.0 {
        return proposal;
    }
    let u = rng::uniform(p.seed, Stream::PottsAccept, cell, ctr) as f64;
    if u < (-delta_e / p.temperature).exp() {
        proposal
    } else {
        current
    }
}

/// Periodic 4-neighbourhood of `(row, col)`, as packed indices into the
/// opposite set.
#[inline]
fn neighbour_indices(row: usize, col: usize, l: usize) -> [usize; 4] {
    let up = (row + l - 1) % l;
    let down = (row + 1) % l;
    let left = (col + l - 1) % l;
    let right = (col + 1) % l;
    [
        checkerboard_index(up, col, l).1,
        checkerboard_index(down, col, l).1,
        checkerboard_index(row, left, l).1,
        checkerboard_index(row, right, l).1,
    ]
}

/// Host state: the two packed halves of the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct PottsState {
    pub params: PottsParams,
    pub white: Vec<u32>,
    pub black: Vec<u32>,
    /// Completed sweeps.
    pub sweep: u64,
}

impl PottsState {
    /// Spins drawn uniformly from `[0, q)`.
    pub fn new(params: PottsParams) -> Result<Self> {
        params.validate()?;
        let l = params.l;
        let mut grid = vec![0; l * l];
        for (i, s) in grid.iter_mut().enumerate() {
            *s = rng::uniform_below(params.seed, Stream::PottsInit, i as u64, 0, params.q);
        }
        let (white, black) = split_grid(&grid, l);
        Ok(PottsState {
            params,
            white,
            black,
            sweep: 0,
        })
    }

    /// Metropolis update of every cell of `set`, reading neighbours from the
    /// other set.
    pub fn update(&mut self, set: CellSet) {
        let p = self.params;
        let l = p.l;
        let ctr = counter(self.sweep, set);
        let (target, source) = match set {
            CellSet::White => (&mut self.white, &self.black),
            CellSet::Black => (&mut self.black, &self.white),
        };
        for (k, spin) in target.iter_mut().enumerate() {
            let (row, col) = cell_of(set, k, l);
            let nb = neighbour_indices(row, col, l).map(|j| source[j]);
            *spin = metropolis(&p, (row * l + col) as u64, *spin, nb, ctr);
        }
    }

    /// White then black update.
    pub fn sweep(&mut self) {
        self.update(CellSet::White);
        self.update(CellSet::Black);
        self.sweep += 1;
    }

    pub fn grid(&self) -> Vec<u32> {
        write_grid(&self.white, &self.black, self.params.l)
    }
}

/// Device twin of [`PottsState::update`] on packed `u32` buffers.
pub fn potts_update_device(
    device: &Device,
    params: &PottsParams,
    set: CellSet,
    target: &DeviceBuffer,
    source: &DeviceBuffer,
    sweep: u64,
) {
    let l = params.l;
    let ctr = counter(sweep, set);
    device.dispatch(l * l / 2, |k| {
        let (row, col) = cell_of(set, k, l);
        let nb = neighbour_indices(row, col, l).map(|j| source.load_u32(j));
        let s = metropolis(params, (row * l + col) as u64, target.load_u32(k), nb, ctr);
        target.store_u32(k, s);
    });
}

/// Device-resident simulation bound to a voxel view.
pub struct PottsSample {
    pub params: PottsParams,
    pub view: ViewHandle,
    white: DeviceBuffer,
    black: DeviceBuffer,
    grid: DeviceBuffer,
    sweep: u64,
}

impl PottsSample {
    /// Allocates the lattice, uploads the initial state and creates the
    /// view: structured-grid positions, colors looked up through the grid.
    pub fn new(inst: &Instance, params: PottsParams) -> Result<Self> {
        let state = PottsState::new(params)?;
        let l = params.l;
        let cells = l * l;
        let device = inst.device();
        let white = device.alloc(cells / 2 * 4)?;
        let black = device.alloc(cells / 2 * 4)?;
        for (buf, data) in [(&white, &state.white), (&black, &state.black)] {
            for (k, &s) in data.iter().enumerate() {
                buf.store_u32(k, s);
            }
        }
        let (grid, grid_alloc) = inst.alloc_linear(cells * 4)?;
        let (_, colormap) = inst.alloc_linear(COLORMAP.len() * 16)?;
        colormap.write_f32(0, COLORMAP.as_flattened())?;
        write_grid_device(device, &white, &black, &grid, l);

        let mut desc = ViewDescription::new(ViewType::Voxels, DomainType::Domain2D, cells);
        desc.extent = [l as f32, l as f32, 1.0];
        desc.default_size = 1.0;
        desc.properties.insert(PropertyType::Position, inst.make_structured_grid([l, l, 1])?);
        desc.properties.insert(
            PropertyType::Color,
            PropertyDescription::new(colormap, COLORMAP.len(), FormatDescription::FLOAT4).indexed(grid_alloc, cells, 4),
        );
        let view = inst.create_view(&desc)?;
        Ok(PottsSample {
            params,
            view,
            white,
            black,
            grid,
            sweep: 0,
        })
    }

    /// One sweep: both half-updates outside the critical section, grid
    /// assembly inside it.
    pub fn step(&mut self, inst: &Instance) -> Result<()> {
        let device = inst.device();
        potts_update_device(device, &self.params, CellSet::White, &self.white, &self.black, self.sweep);
        potts_update_device(device, &self.params, CellSet::Black, &self.black, &self.white, self.sweep);
        self.sweep += 1;
        inst.prepare_views()?;
        write_grid_device(device, &self.white, &self.black, &self.grid, self.params.l);
        inst.update_views()
    }

    pub fn grid(&self) -> Vec<u32> {
        (0..self.params.l * self.params.l).map(|i| self.grid.load_u32(i)).collect()
    }

    pub fn sweeps(&self) -> u64 {
        self.sweep
    }
}
