//! Batch reference path: per-cell averaged time-surface histograms and the
//! assembled representation.
//!
//! The representation is a `[2, L, 2ρ+1, 2ρ+1]` tensor: polarity (OFF, ON),
//! cell (row-major over the `floor(M/K) x floor(N/K)` cell grid), then the
//! window in row-major order. Flattening uses exactly that order, and the
//! streaming path reads its weight blocks with the same [`FeatureLayout`].

use std::io::Write;

use crate::error::{Error, Result};
use crate::events::{EventStream, SensorGeometry};
use crate::grid::{CellGrid, GridParams};
use crate::par;

const EXPORT_MAGIC: &[u8; 4] = b"HATS";
const EXPORT_VERSION: u16 = 1;
const EXPORT_HEADER_LEN: usize = 16;

/// Index arithmetic for flattened features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FeatureLayout {
    pub geometry: SensorGeometry,
    pub cell_size: u16,
    pub rho: u16,
}

impl FeatureLayout {
    pub fn new(geometry: SensorGeometry, params: &GridParams) -> Self {
        FeatureLayout {
            geometry,
            cell_size: params.cell_size,
            rho: params.rho,
        }
    }

    pub fn cells_x(&self) -> usize {
        (self.geometry.width / self.cell_size) as usize
    }

    pub fn cells_y(&self) -> usize {
        (self.geometry.height / self.cell_size) as usize
    }

    pub fn num_cells(&self) -> usize {
        self.cells_x() * self.cells_y()
    }

    pub fn window_side(&self) -> usize {
        2 * self.rho as usize + 1
    }

    pub fn window_len(&self) -> usize {
        self.window_side() * self.window_side()
    }

    /// `2 · L · (2ρ+1)²`
    pub fn len(&self) -> usize {
        2 * self.num_cells() * self.window_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offset of the `(polarity, cell)` window block.
    #[inline]
    pub fn block_offset(&self, polarity: usize, cell: usize) -> usize {
        (polarity * self.num_cells() + cell) * self.window_len()
    }

    pub fn shape(&self) -> [usize; 4] {
        [2, self.num_cells(), self.window_side(), self.window_side()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HatsRepresentation {
    layout: FeatureLayout,
    data: Vec<f64>,
}

impl HatsRepresentation {
    pub fn zeros(layout: FeatureLayout) -> Self {
        HatsRepresentation {
            layout,
            data: vec![0.0; layout.len()],
        }
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn shape(&self) -> [usize; 4] {
        self.layout.shape()
    }

    pub fn get(&self, polarity: usize, cell: usize, row: usize, col: usize) -> f64 {
        let side = self.layout.window_side();
        self.data[self.layout.block_offset(polarity, cell) + row * side + col]
    }

    /// Histogram block of one `(polarity, cell)`.
    pub fn block(&self, polarity: usize, cell: usize) -> &[f64] {
        let off = self.layout.block_offset(polarity, cell);
        &self.data[off..off + self.layout.window_len()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.data.clone()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn unflatten(layout: FeatureLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Config(format!(
                "feature vector of length {} does not match layout length {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(HatsRepresentation {
            layout,
            data: values,
        })
    }

    /// Element-wise mean of several representations with the same layout.
    pub fn mean(reps: &[HatsRepresentation]) -> Result<HatsRepresentation> {
        let first = reps
            .first()
            .ok_or_else(|| Error::Argument("mean of no representations".into()))?;
        let mut out = HatsRepresentation::zeros(first.layout);
        for r in reps {
            if r.layout != first.layout {
                return Err(Error::Config("representation layouts differ".into()));
            }
            for (o, v) in out.data.iter_mut().zip(&r.data) {
                *o += v;
            }
        }
        let n = reps.len() as f64;
        out.data.iter_mut().for_each(|v| *v /= n);
        Ok(out)
    }

    /// Binary export: `"HATS"`, version, M, N, K, ρ (u16 LE), two zero
    /// padding bytes, then the flattened values as f64 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(EXPORT_HEADER_LEN + 8 * self.data.len());
        out.extend_from_slice(EXPORT_MAGIC);
        for v in [
            EXPORT_VERSION,
            self.layout.geometry.width,
            self.layout.geometry.height,
            self.layout.cell_size,
            self.layout.rho,
            0,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < EXPORT_HEADER_LEN || &bytes[0..4] != EXPORT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "missing HATS magic".into(),
            });
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        if u16_at(4) != EXPORT_VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported version {}", u16_at(4)),
            });
        }
        let geometry = SensorGeometry::new(u16_at(6), u16_at(8))?;
        let layout = FeatureLayout {
            geometry,
            cell_size: u16_at(10),
            rho: u16_at(12),
        };
        if layout.cell_size == 0 {
            return Err(Error::Format {
                offset: 10,
                message: "zero cell size".into(),
            });
        }
        let body = &bytes[EXPORT_HEADER_LEN..];
        if body.len() != 8 * layout.len() {
            return Err(Error::Format {
                offset: EXPORT_HEADER_LEN,
                message: format!("expected {} values, found {} bytes", layout.len(), body.len()),
            });
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(HatsRepresentation { layout, data })
    }

    /// Inspection CSV: `polarity,cell,row,col,value` with polarity as -1/1.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "polarity,cell,row,col,value")?;
        let side = self.layout.window_side();
        for pol in 0..2 {
            for cell in 0..self.layout.num_cells() {
                for (i, v) in self.block(pol, cell).iter().enumerate() {
                    let sign = if pol == 0 { -1 } else { 1 };
                    writeln!(w, "{sign},{cell},{},{},{v}", i / side, i % side)?;
                }
            }
        }
        Ok(())
    }
}

/// One representation per Δt window of the stream (see
/// [`EventStream::windows`]). Events outside the cell-covered region are
/// skipped.
pub fn compute_hats_windows(
    stream: &EventStream,
    params: &GridParams,
) -> Result<Vec<HatsRepresentation>> {
    let mut grid = CellGrid::new(stream.geometry(), params.clone())?;
    let layout = FeatureLayout::new(stream.geometry(), params);
    let wlen = layout.window_len();
    let mut reps = Vec::new();
    for window in stream.windows(params.delta_t_us) {
        let mut rep = HatsRepresentation::zeros(layout);
        for e in window.events {
            let Ok(cell) = grid.cell_of(e.x, e.y) else {
                continue;
            };
            let off = layout.block_offset(e.p.index(), cell);
            grid.surface_into(cell, e, &mut rep.data[off..off + wlen]);
            grid.update_cell(cell, e);
        }
        for cell in 0..layout.num_cells() {
            let count = grid.count(cell);
            if count == 0 {
                continue;
            }
            let n = count as f64;
            for pol in 0..2 {
                let off = layout.block_offset(pol, cell);
                rep.data[off..off + wlen].iter_mut().for_each(|v| *v /= n);
            }
        }
        grid.end_window();
        reps.push(rep);
    }
    Ok(reps)
}

/// Whole-sample representation: the mean of the per-window representations
/// (identical to the single window when the stream fits in one Δt).
pub fn compute_hats(stream: &EventStream, params: &GridParams) -> Result<HatsRepresentation> {
    HatsRepresentation::mean(&compute_hats_windows(stream, params)?)
}

/// Flattened whole-sample features for a batch of streams, computed in
/// parallel when the `parallel` feature is on.
pub fn batch_features(streams: &[EventStream], params: &GridParams) -> Result<Vec<Vec<f64>>> {
    par::map(streams, |s| compute_hats(s, params).map(HatsRepresentation::into_vec))
        .into_iter()
        .collect()
}

/// Sequential counterpart of [`batch_features`].
pub fn batch_features_seq(streams: &[EventStream], params: &GridParams) -> Result<Vec<Vec<f64>>> {
    streams
        .iter()
        .map(|s| compute_hats(s, params).map(HatsRepresentation::into_vec))
        .collect()
}
