//! Cell decomposition, per-cell local memories and time surfaces.
//!
//! Pixels are grouped into `K x K` cells. Every cell owns one event memory per
//! polarity and one event counter shared by both polarities. The time surface
//! of an event sums kernel-weighted contributions of earlier same-polarity
//! events from the event's own cell memory within a `(2ρ+1)²` window; memories
//! of neighboring cells are never consulted.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::events::{Event, Polarity, SensorGeometry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Kernel {
    /// `exp(-Δ/τ)`
    Exponential,
    /// `max(0, 1 - Δ/τ)`
    LinearDecay,
}

impl Kernel {
    #[inline]
    pub(crate) fn weight(self, delta_us: u64, tau_us: f64) -> f64 {
        match self {
            Kernel::Exponential => (-(delta_us as f64) / tau_us).exp(),
            Kernel::LinearDecay => (1.0 - delta_us as f64 / tau_us).max(0.0),
        }
    }
}

/// Evaluates a decay kernel. A negative delta means the caller fed events
/// out of timestamp order.
pub fn kernel_eval(kernel: Kernel, tau_us: f64, delta_us: i64) -> Result<f64> {
    if delta_us < 0 {
        return Err(Error::Argument(format!(
            "negative time delta {delta_us} us (unsorted stream?)"
        )));
    }
    if !(tau_us > 0.0) {
        return Err(Error::Argument(format!("tau must be positive, got {tau_us}")));
    }
    Ok(kernel.weight(delta_us as u64, tau_us))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MemoryMode {
    /// Memories and counters are cleared at every Δt boundary.
    Reset,
    /// Memories keep the events of the last Δt; counters still restart per window.
    Sliding,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridParams {
    /// Cell side K in pixels.
    pub cell_size: u16,
    /// Spatial window radius ρ.
    pub rho: u16,
    /// Temporal window Δt.
    pub delta_t_us: u64,
    /// Decay constant τ.
    pub tau_us: f64,
    pub kernel: Kernel,
    pub memory_mode: MemoryMode,
    /// Maximum events per (cell, polarity) memory; oldest dropped first.
    pub memory_capacity: Option<usize>,
}

impl Default for GridParams {
    /// K = 10, ρ = 3, Δt = 100 ms, τ = 10⁶ ms, exponential kernel, reset mode.
    fn default() -> Self {
        GridParams {
            cell_size: 10,
            rho: 3,
            delta_t_us: 100_000,
            tau_us: 1e9,
            kernel: Kernel::Exponential,
            memory_mode: MemoryMode::Reset,
            memory_capacity: None,
        }
    }
}

impl GridParams {
    /// Default parameters with the linear kernel used by streaming inference.
    pub fn streaming() -> Self {
        GridParams {
            kernel: Kernel::LinearDecay,
            ..GridParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho < 1 || self.rho >= self.cell_size {
            return Err(Error::Config(format!(
                "need 1 <= rho < K, got rho={} K={}",
                self.rho, self.cell_size
            )));
        }
        if self.delta_t_us == 0 {
            return Err(Error::Config("delta_t must be positive".into()));
        }
        if !(self.tau_us > 0.0) || !self.tau_us.is_finite() {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau_us)));
        }
        if self.memory_capacity == Some(0) {
            return Err(Error::Config("memory capacity must be positive".into()));
        }
        Ok(())
    }

    /// Side of the time-surface window, `2ρ + 1`.
    #[inline]
    pub fn window_side(&self) -> usize {
        2 * self.rho as usize + 1
    }

    #[inline]
    pub fn window_len(&self) -> usize {
        self.window_side() * self.window_side()
    }
}

/// Row-major cell index of a pixel: `floor(y/K) * floor(M/K) + floor(x/K)`.
pub fn cell_of(x: u16, y: u16, geometry: SensorGeometry, cell_size: u16) -> Result<usize> {
    let cells_x = geometry.width / cell_size;
    let cells_y = geometry.height / cell_size;
    let (cx, cy) = (x / cell_size, y / cell_size);
    if cx >= cells_x || cy >= cells_y {
        return Err(Error::OutOfRegion { x, y });
    }
    Ok(cy as usize * cells_x as usize + cx as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryEntry {
    pub x: u16,
    pub y: u16,
    pub t: u64,
}

/// Per-pixel event count and timestamp sum of a memory. Sums wrap, which
/// keeps differences exact as long as the true values fit in 64 bits.
#[derive(Clone, Debug)]
struct PixelSums {
    side: u16,
    count: Vec<u32>,
    t_sum: Vec<u64>,
}

impl PixelSums {
    fn new(side: u16) -> Self {
        let n = side as usize * side as usize;
        PixelSums {
            side,
            count: vec![0; n],
            t_sum: vec![0; n],
        }
    }

    #[inline]
    fn slot(&self, m: &MemoryEntry) -> usize {
        (m.y % self.side) as usize * self.side as usize + (m.x % self.side) as usize
    }

    #[inline]
    fn add(&mut self, m: &MemoryEntry) {
        let i = self.slot(m);
        self.count[i] += 1;
        self.t_sum[i] = self.t_sum[i].wrapping_add(m.t);
    }

    #[inline]
    fn remove(&mut self, m: &MemoryEntry) {
        let i = self.slot(m);
        self.count[i] -= 1;
        self.t_sum[i] = self.t_sum[i].wrapping_sub(m.t);
    }

    fn clear(&mut self) {
        self.count.iter_mut().for_each(|c| *c = 0);
        self.t_sum.iter_mut().for_each(|t| *t = 0);
    }
}

/// Past events of one polarity in one cell, oldest first.
#[derive(Clone, Debug, Default)]
pub struct LocalMemory {
    entries: VecDeque<MemoryEntry>,
    sums: Option<PixelSums>,
}

impl LocalMemory {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    fn push_back(&mut self, m: MemoryEntry) {
        if let Some(s) = self.sums.as_mut() {
            s.add(&m);
        }
        self.entries.push_back(m);
    }

    fn pop_front(&mut self) {
        if let Some(m) = self.entries.pop_front() {
            if let Some(s) = self.sums.as_mut() {
                s.remove(&m);
            }
        }
    }

    fn evict_older_than(&mut self, cutoff: u64) {
        while self.entries.front().is_some_and(|m| m.t < cutoff) {
            self.pop_front();
        }
    }

    fn clear(&mut self) {
        if self.entries.is_empty() {
            return;
        }
        self.entries.clear();
        if let Some(s) = self.sums.as_mut() {
            s.clear();
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Cell {
    memories: [LocalMemory; 2],
    count: u64,
}

/// `(2ρ+1) x (2ρ+1)` kernel-weighted neighborhood response, row-major with
/// the triggering pixel at `(ρ, ρ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSurface {
    rho: u16,
    values: Vec<f64>,
}

impl TimeSurface {
    pub fn zeros(rho: u16) -> Self {
        let side = 2 * rho as usize + 1;
        TimeSurface {
            rho,
            values: vec![0.0; side * side],
        }
    }

    pub fn rho(&self) -> u16 {
        self.rho
    }

    pub fn side(&self) -> usize {
        2 * self.rho as usize + 1
    }

    /// Value at offset `(dx, dy)` from the triggering pixel.
    pub fn get(&self, dx: i32, dy: i32) -> f64 {
        let r = self.rho as i32;
        assert!(dx.abs() <= r && dy.abs() <= r, "offset outside window");
        self.values[((dy + r) * (2 * r + 1) + dx + r) as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Debug)]
pub struct CellGrid {
    geometry: SensorGeometry,
    params: GridParams,
    cells_x: usize,
    cells_y: usize,
    cells: Vec<Cell>,
    max_occupancy: usize,
}

impl CellGrid {
    pub fn new(geometry: SensorGeometry, params: GridParams) -> Result<Self> {
        params.validate()?;
        let cells_x = (geometry.width / params.cell_size) as usize;
        let cells_y = (geometry.height / params.cell_size) as usize;
        if cells_x == 0 || cells_y == 0 {
            return Err(Error::Config(format!(
                "{}x{} sensor holds no complete {}-pixel cell",
                geometry.width, geometry.height, params.cell_size
            )));
        }
        Ok(CellGrid {
            geometry,
            params,
            cells_x,
            cells_y,
            cells: vec![Cell::default(); cells_x * cells_y],
            max_occupancy: 0,
        })
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn params(&self) -> &GridParams {
        &self.params
    }

    /// Cells across and down, `(floor(M/K), floor(N/K))`.
    pub fn dims(&self) -> (usize, usize) {
        (self.cells_x, self.cells_y)
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_of(&self, x: u16, y: u16) -> Result<usize> {
        let k = self.params.cell_size;
        let (cx, cy) = ((x / k) as usize, (y / k) as usize);
        if cx >= self.cells_x || cy >= self.cells_y {
            return Err(Error::OutOfRegion { x, y });
        }
        Ok(cy * self.cells_x + cx)
    }

    pub fn count(&self, cell: usize) -> u64 {
        self.cells[cell].count
    }

    pub fn memory(&self, cell: usize, polarity: Polarity) -> &LocalMemory {
        &self.cells[cell].memories[polarity.index()]
    }

    /// Keeps per-pixel aggregates next to every memory so that
    /// [`surface_from_sums`](Self::surface_from_sums) can be used.
    pub(crate) fn track_pixel_sums(&mut self) {
        let side = self.params.cell_size;
        for c in self.cells.iter_mut() {
            for m in c.memories.iter_mut() {
                let mut s = PixelSums::new(side);
                m.entries.iter().for_each(|e| s.add(e));
                m.sums = Some(s);
            }
        }
    }

    /// Whether the linear kernel's clamp can never trigger: every stored
    /// entry is at most `Δt` older than the current event.
    pub(crate) fn linear_unclamped(&self) -> bool {
        self.params.kernel == Kernel::LinearDecay
            && self.params.delta_t_us as f64 <= self.params.tau_us
    }

    /// Drops entries that fell out of the sliding interval before `t`.
    #[inline]
    pub(crate) fn evict_stale(&mut self, cell: usize, t: u64) {
        let cutoff = self.sliding_cutoff(t);
        if cutoff > 0 {
            for m in self.cells[cell].memories.iter_mut() {
                m.evict_older_than(cutoff);
            }
        }
    }

    /// Per-pixel `(count, Σt)` of a memory, row-major over the cell's
    /// `K x K` pixels. Requires [`track_pixel_sums`](Self::track_pixel_sums).
    #[inline]
    pub(crate) fn pixel_sums(&self, cell: usize, polarity: Polarity) -> (&[u32], &[u64]) {
        let s = self.cells[cell].memories[polarity.index()]
            .sums
            .as_ref()
            .expect("pixel sums enabled");
        (&s.count, &s.t_sum)
    }

    /// Largest (cell, polarity) memory size observed since construction.
    pub fn max_occupancy(&self) -> usize {
        self.max_occupancy
    }

    /// Number of events currently held across all memories.
    pub fn live_events(&self) -> usize {
        self.cells
            .iter()
            .map(|c| c.memories[0].len() + c.memories[1].len())
            .sum()
    }

    pub fn compute_time_surface(&self, e: &Event) -> Result<TimeSurface> {
        let cell = self.cell_of(e.x, e.y)?;
        let memory = &self.cells[cell].memories[e.p.index()];
        if let Some(last) = memory.entries.back() {
            if last.t > e.t {
                return Err(Error::Argument(format!(
                    "event at t={} precedes stored event at t={}",
                    e.t, last.t
                )));
            }
        }
        let mut surface = TimeSurface::zeros(self.params.rho);
        self.surface_into(cell, e, &mut surface.values);
        Ok(surface)
    }

    /// Adds the event's time surface into `out` (length `(2ρ+1)²`) and
    /// returns how many memory entries were read. Assumes `e.t` is not
    /// earlier than any stored event.
    #[inline]
    pub(crate) fn surface_into(&self, cell: usize, e: &Event, out: &mut [f64]) -> usize {
        let memory = &self.cells[cell].memories[e.p.index()];
        let rho = self.params.rho as i32;
        let side = 2 * rho + 1;
        let tau = self.params.tau_us;
        let kernel = self.params.kernel;
        let cutoff = self.sliding_cutoff(e.t);
        let mut reads = 0;
        for m in memory.entries.iter() {
            if m.t < cutoff {
                continue;
            }
            reads += 1;
            let dx = m.x as i32 - e.x as i32;
            let dy = m.y as i32 - e.y as i32;
            if dx.abs() > rho || dy.abs() > rho {
                continue;
            }
            out[((dy + rho) * side + dx + rho) as usize] += kernel.weight(e.t - m.t, tau);
        }
        reads
    }

    /// Same sums as [`surface_into`](Self::surface_into), accumulated without
    /// data-dependent branches: out-of-window entries land in the extra slot
    /// `out[(2ρ+1)²]`, which callers ignore.
    #[inline]
    pub(crate) fn surface_into_padded(&self, cell: usize, e: &Event, out: &mut [f64]) {
        let memory = &self.cells[cell].memories[e.p.index()];
        let rho = self.params.rho as i32;
        let side = 2 * rho + 1;
        let spill = (side * side) as usize;
        debug_assert!(out.len() > spill);
        let cutoff = self.sliding_cutoff(e.t);
        let (ex, ey) = (e.x as i32, e.y as i32);
        let slot = |m: &MemoryEntry| {
            let dx = m.x as i32 - ex;
            let dy = m.y as i32 - ey;
            let inside = (dx.abs() <= rho) & (dy.abs() <= rho) & (m.t >= cutoff);
            if inside {
                ((dy + rho) * side + dx + rho) as usize
            } else {
                spill
            }
        };
        let (a, b) = memory.entries.as_slices();
        let tau = self.params.tau_us;
        match self.params.kernel {
            Kernel::LinearDecay => {
                let inv_tau = 1.0 / tau;
                for m in a.iter().chain(b) {
                    let d = e.t.saturating_sub(m.t) as f64;
                    out[slot(m)] += (1.0 - d * inv_tau).max(0.0);
                }
            }
            Kernel::Exponential => {
                for m in a.iter().chain(b) {
                    out[slot(m)] += Kernel::Exponential.weight(e.t.saturating_sub(m.t), tau);
                }
            }
        }
    }

    /// Oldest timestamp still visible to an event at `t`.
    #[inline]
    pub(crate) fn sliding_cutoff(&self, t: u64) -> u64 {
        match self.params.memory_mode {
            MemoryMode::Reset => 0,
            MemoryMode::Sliding => t.saturating_sub(self.params.delta_t_us),
        }
    }

    pub fn update_memory(&mut self, e: &Event) -> Result<()> {
        let cell = self.cell_of(e.x, e.y)?;
        self.update_cell(cell, e);
        Ok(())
    }

    #[inline]
    pub(crate) fn update_cell(&mut self, cell: usize, e: &Event) {
        let cutoff = self.sliding_cutoff(e.t);
        let capacity = self.params.memory_capacity;
        let slot = &mut self.cells[cell];
        slot.count += 1;
        if cutoff > 0 {
            for m in slot.memories.iter_mut() {
                m.evict_older_than(cutoff);
            }
        }
        let memory = &mut slot.memories[e.p.index()];
        memory.push_back(MemoryEntry {
            x: e.x,
            y: e.y,
            t: e.t,
        });
        if let Some(cap) = capacity {
            while memory.entries.len() > cap {
                memory.pop_front();
            }
        }
        self.max_occupancy = self.max_occupancy.max(memory.entries.len());
    }

    /// Clears every memory and counter.
    pub fn temporal_reset(&mut self) {
        for c in self.cells.iter_mut() {
            c.memories[0].clear();
            c.memories[1].clear();
            c.count = 0;
        }
    }

    /// Zeroes the counters, keeping memories.
    pub fn reset_counts(&mut self) {
        for c in self.cells.iter_mut() {
            c.count = 0;
        }
    }

    /// Window-boundary reset according to the memory mode.
    pub(crate) fn end_window(&mut self) {
        match self.params.memory_mode {
            MemoryMode::Reset => self.temporal_reset(),
            MemoryMode::Sliding => self.reset_counts(),
        }
    }
}
