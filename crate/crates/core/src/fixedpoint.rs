//! Signed Q-format arithmetic `<total, integer>` (sign bit counted in the
//! integer bits), the quantized streaming path and the precision sweep.
//!
//! All conversions and products round to nearest, ties to even, and saturate
//! at the format bounds. The quantized datapath never evaluates an
//! exponential: only the linear kernel is supported, computed as
//! `1 - (Δ·2^-s)·(2^s/τ)` with a power-of-two pre-scale `s` on the time delta
//! so that `Δ/τ` stays inside the fractional resolution. Per-cell
//! normalization multiplies by a reciprocal table entry stored as a
//! normalized mantissa plus shift, so the division costs one multiply and one
//! rounding shift.

use std::io::Write;

use crate::classifier::{ClassScores, SvmModel};
use crate::cwts::cwts_run;
use crate::error::{Error, Result};
use crate::events::{Event, EventStream};
use crate::grid::{CellGrid, GridParams, Kernel};
use crate::hats::FeatureLayout;
use crate::par;

/// Counts above this share the last reciprocal table entry.
pub const RECIPROCAL_TABLE_MAX: u64 = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FixedPointFormat {
    total_bits: u8,
    integer_bits: u8,
}

impl FixedPointFormat {
    pub fn new(total_bits: u8, integer_bits: u8) -> Result<Self> {
        if !(2..=32).contains(&total_bits) || integer_bits < 1 || integer_bits > total_bits {
            return Err(Error::Argument(format!(
                "invalid fixed-point format <{total_bits},{integer_bits}>"
            )));
        }
        Ok(FixedPointFormat {
            total_bits,
            integer_bits,
        })
    }

    /// Parses `"24,12"` or `"<24,12>"`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim().trim_start_matches('<').trim_end_matches('>');
        let (a, b) = t
            .split_once(',')
            .ok_or_else(|| Error::Argument(format!("expected <total,integer>, got {text:?}")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<u8>()
                .map_err(|e| Error::Argument(format!("bad format {text:?}: {e}")))
        };
        FixedPointFormat::new(parse(a)?, parse(b)?)
    }

    pub fn total_bits(self) -> u8 {
        self.total_bits
    }

    pub fn integer_bits(self) -> u8 {
        self.integer_bits
    }

    pub fn fractional_bits(self) -> u8 {
        self.total_bits - self.integer_bits
    }

    pub fn max_raw(self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    pub fn min_raw(self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    /// Value of one least-significant bit, `2^-fractional_bits`.
    pub fn ulp(self) -> f64 {
        (-(self.fractional_bits() as f64)).exp2()
    }

    #[inline]
    fn clamp(self, raw: i128) -> (i64, bool) {
        if raw > self.max_raw() as i128 {
            (self.max_raw(), true)
        } else if raw < self.min_raw() as i128 {
            (self.min_raw(), true)
        } else {
            (raw as i64, false)
        }
    }

    /// Nearest-even quantization of a real; the flag reports saturation.
    pub fn quantize(self, x: f64) -> (i64, bool) {
        if x.is_nan() {
            return (0, true);
        }
        let scaled = (x * (self.fractional_bits() as f64).exp2()).round_ties_even();
        if scaled > self.max_raw() as f64 {
            (self.max_raw(), true)
        } else if scaled < self.min_raw() as f64 {
            (self.min_raw(), true)
        } else {
            (scaled as i64, false)
        }
    }

    #[inline]
    pub fn add_raw(self, a: i64, b: i64) -> (i64, bool) {
        self.clamp(a as i128 + b as i128)
    }

    /// Exact double-width product rounded back to the format.
    #[inline]
    pub fn mul_raw(self, a: i64, b: i64) -> (i64, bool) {
        let p = a as i128 * b as i128;
        self.clamp(round_shift(p, self.fractional_bits() as u32))
    }
}

impl std::fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "<{},{}>", self.total_bits, self.integer_bits)
    }
}

/// `round(p / 2^shift)`, ties to even.
#[inline]
fn round_shift(p: i128, shift: u32) -> i128 {
    if shift == 0 {
        return p;
    }
    let q = p >> shift;
    let rem = p - (q << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FixedPointValue {
    raw: i64,
    format: FixedPointFormat,
}

impl FixedPointValue {
    pub fn from_raw(raw: i64, format: FixedPointFormat) -> Result<Self> {
        if raw < format.min_raw() || raw > format.max_raw() {
            return Err(Error::Argument(format!("raw {raw} outside {format}")));
        }
        Ok(FixedPointValue { raw, format })
    }

    pub fn from_real_checked(x: f64, format: FixedPointFormat) -> (Self, bool) {
        let (raw, sat) = format.quantize(x);
        (FixedPointValue { raw, format }, sat)
    }

    pub fn raw(self) -> i64 {
        self.raw
    }

    pub fn format(self) -> FixedPointFormat {
        self.format
    }

    pub fn to_real(self) -> f64 {
        self.raw as f64 * self.format.ulp()
    }

    pub fn add_checked(self, other: Self) -> (Self, bool) {
        assert_eq!(self.format, other.format, "operands in different formats");
        let (raw, sat) = self.format.add_raw(self.raw, other.raw);
        (FixedPointValue { raw, ..self }, sat)
    }

    pub fn mul_checked(self, other: Self) -> (Self, bool) {
        assert_eq!(self.format, other.format, "operands in different formats");
        let (raw, sat) = self.format.mul_raw(self.raw, other.raw);
        (FixedPointValue { raw, ..self }, sat)
    }
}

pub fn fx_from_real(x: f64, format: FixedPointFormat) -> FixedPointValue {
    FixedPointValue::from_real_checked(x, format).0
}

/// Saturating sum. Panics if the operands use different formats.
pub fn fx_add(a: FixedPointValue, b: FixedPointValue) -> FixedPointValue {
    a.add_checked(b).0
}

/// Rounded, saturating product. Panics if the operands use different formats.
pub fn fx_mul(a: FixedPointValue, b: FixedPointValue) -> FixedPointValue {
    a.mul_checked(b).0
}

/// Default time-delta pre-scale for a decay constant: `floor(log2 τ)`, which
/// puts `2^s/τ` in `(0.5, 1]`.
pub fn time_scale_exponent(tau_us: f64) -> i8 {
    if !(tau_us > 0.0) || !tau_us.is_finite() {
        return 0;
    }
    tau_us.log2().floor().clamp(i8::MIN as f64, i8::MAX as f64) as i8
}

/// Format-bound arithmetic with a running saturation count.
#[derive(Clone, Copy, Debug)]
pub(crate) struct FxArith {
    pub format: FixedPointFormat,
    pub saturations: u64,
}

impl FxArith {
    pub fn new(format: FixedPointFormat) -> Self {
        FxArith {
            format,
            saturations: 0,
        }
    }

    #[inline]
    fn track(&mut self, (v, sat): (i64, bool)) -> i64 {
        self.saturations += sat as u64;
        v
    }

    pub fn quantize(&mut self, x: f64) -> i64 {
        let r = self.format.quantize(x);
        self.track(r)
    }

    #[inline]
    pub fn add(&mut self, a: i64, b: i64) -> i64 {
        let r = self.format.add_raw(a, b);
        self.track(r)
    }

    #[inline]
    pub fn mul(&mut self, a: i64, b: i64) -> i64 {
        let r = self.format.mul_raw(a, b);
        self.track(r)
    }

    /// `Δ · 2^-s` in the format, rounded from the exact integer.
    #[inline]
    pub fn scaled_delta(&mut self, delta_us: u64, scale_exp: i32) -> i64 {
        let shift = self.format.fractional_bits() as i32 - scale_exp;
        let raw = if shift >= 0 {
            (delta_us as i128).checked_shl(shift as u32).filter(|v| v >> shift == delta_us as i128)
                .unwrap_or(i128::MAX)
        } else {
            round_shift(delta_us as i128, (-shift) as u32)
        };
        let r = self.format.clamp(raw);
        self.track(r)
    }

    /// Reciprocal table entry for a count: the mantissa `2^m / count` in
    /// `(0.5, 1]`, quantized to the format, and the exponent
    /// `m = floor(log2 count)`. Counts are clamped to
    /// `[1, RECIPROCAL_TABLE_MAX]`.
    pub fn reciprocal(&mut self, count: u64) -> (i64, u32) {
        let c = count.clamp(1, RECIPROCAL_TABLE_MAX);
        let exp = 63 - c.leading_zeros();
        (self.quantize((exp as f64).exp2() / c as f64), exp)
    }

    /// `value / count` computed as `round(value * mantissa / 2^(f + m))`
    /// from a [`reciprocal`](Self::reciprocal) entry.
    #[inline]
    pub fn normalize(&mut self, value: i64, (mantissa, exp): (i64, u32)) -> i64 {
        let p = value as i128 * mantissa as i128;
        let r = self.format.clamp(round_shift(p, self.format.fractional_bits() as u32 + exp));
        self.track(r)
    }
}

/// Model weights, biases and kernel constants converted to one format.
#[derive(Clone, Debug)]
pub(crate) struct QuantizedModel {
    pub weights: Vec<Vec<i64>>,
    pub biases: Vec<i64>,
    pub one: i64,
    pub inv_tau: i64,
    pub scale_exp: i32,
    pub saturations: u64,
}

impl QuantizedModel {
    pub fn new(model: &SvmModel, params: &GridParams, format: FixedPointFormat) -> Self {
        let mut fx = FxArith::new(format);
        let weights = model
            .weights()
            .iter()
            .map(|w| w.iter().map(|&v| fx.quantize(v)).collect())
            .collect();
        let biases = model.biases().iter().map(|&b| fx.quantize(b)).collect();
        let scale_exp = model.time_scale_exp() as i32;
        let one = fx.quantize(1.0);
        let inv_tau = fx.quantize((scale_exp as f64).exp2() / params.tau_us);
        QuantizedModel {
            weights,
            biases,
            one,
            inv_tau,
            scale_exp,
            saturations: fx.saturations,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }
}

/// A processing lane owning a subset of cells, running the quantized
/// streaming update for the events of those cells.
#[derive(Clone, Debug)]
pub(crate) struct FixedLane {
    grid: CellGrid,
    owned: Vec<bool>,
    layout: FeatureLayout,
    fx: FxArith,
    partial: Vec<i64>,
    surface: Vec<i64>,
    /// Per-event read counts of the current window, in arrival order.
    pub reads_log: Vec<u64>,
}

impl FixedLane {
    pub fn new(
        grid: CellGrid,
        owned: Vec<bool>,
        layout: FeatureLayout,
        format: FixedPointFormat,
        classes: usize,
    ) -> Self {
        FixedLane {
            partial: vec![0; layout.num_cells() * classes],
            surface: vec![0; layout.window_len()],
            grid,
            owned,
            layout,
            fx: FxArith::new(format),
            reads_log: Vec::new(),
        }
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn saturations(&self) -> u64 {
        self.fx.saturations
    }

    pub fn partial(&self, cell: usize, class: usize, classes: usize) -> i64 {
        self.partial[cell * classes + class]
    }

    pub fn process_window(&mut self, events: &[Event], qm: &QuantizedModel) {
        for e in events {
            let Ok(cell) = self.grid.cell_of(e.x, e.y) else {
                continue;
            };
            if self.owned[cell] {
                self.step(cell, e, qm);
            }
        }
    }

    fn step(&mut self, cell: usize, e: &Event, qm: &QuantizedModel) {
        let rho = self.grid.params().rho as i32;
        let side = 2 * rho + 1;
        let cutoff = self.grid.sliding_cutoff(e.t);
        self.surface.iter_mut().for_each(|v| *v = 0);
        let mut reads = 0u64;
        for m in self.grid.memory(cell, e.p).iter() {
            if m.t < cutoff {
                continue;
            }
            reads += 1;
            let dx = m.x as i32 - e.x as i32;
            let dy = m.y as i32 - e.y as i32;
            if dx.abs() > rho || dy.abs() > rho {
                continue;
            }
            let delta = self.fx.scaled_delta(e.t - m.t, qm.scale_exp);
            let decay = self.fx.mul(delta, qm.inv_tau);
            let k = self.fx.add(qm.one, -decay).max(0);
            let idx = ((dy + rho) * side + dx + rho) as usize;
            self.surface[idx] = self.fx.add(self.surface[idx], k);
        }
        let classes = qm.num_classes();
        let off = self.layout.block_offset(e.p.index(), cell);
        for j in 0..classes {
            let block = &qm.weights[j][off..off + self.surface.len()];
            let mut acc = self.partial[cell * classes + j];
            for (&phi, &w) in self.surface.iter().zip(block) {
                if phi != 0 {
                    let prod = self.fx.mul(phi, w);
                    acc = self.fx.add(acc, prod);
                }
            }
            self.partial[cell * classes + j] = acc;
        }
        self.grid.update_cell(cell, e);
        self.reads_log.push(reads);
    }

    pub fn end_window(&mut self) {
        self.partial.iter_mut().for_each(|v| *v = 0);
        self.grid.end_window();
        self.reads_log.clear();
    }
}

/// Output of a quantized run.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedRun {
    /// Scores converted back to reals.
    pub windows: Vec<ClassScores>,
    /// Raw integer scores per window and class.
    pub raw_scores: Vec<Vec<i64>>,
    pub saturations: u64,
    pub format: FixedPointFormat,
}

/// Per-window lane activity: for every lane, the memory entries read by each
/// of its events. Used by the PE timing model.
#[derive(Clone, Debug, Default)]
pub(crate) struct LaneTrace {
    pub reads: Vec<Vec<u64>>,
}

pub(crate) struct LaneRun {
    pub run: FixedRun,
    pub traces: Vec<LaneTrace>,
    pub max_occupancy: usize,
}

/// Runs the quantized streaming path with cells split over lanes by
/// `owner[cell]`. Per-cell arithmetic is identical whatever the split, and
/// finalization walks cells in index order, so scores do not depend on it.
pub(crate) fn run_lanes(
    stream: &EventStream,
    model: &SvmModel,
    params: &GridParams,
    format: FixedPointFormat,
    owner: &[usize],
    num_lanes: usize,
) -> Result<LaneRun> {
    if params.kernel != Kernel::LinearDecay {
        return Err(Error::Config(
            "the fixed-point path supports the linear kernel only".into(),
        ));
    }
    model.check_compatible(stream.geometry(), params)?;
    let template = CellGrid::new(stream.geometry(), params.clone())?;
    let layout = FeatureLayout::new(stream.geometry(), params);
    if model.dim() != layout.len() {
        return Err(Error::Config(format!(
            "model dimension {} != 2*L*(2rho+1)^2 = {}",
            model.dim(),
            layout.len()
        )));
    }
    let cells = layout.num_cells();
    assert_eq!(owner.len(), cells);
    let qm = QuantizedModel::new(model, params, format);
    let classes = qm.num_classes();
    let mut lanes: Vec<FixedLane> = (0..num_lanes)
        .map(|lane| {
            let owned = owner.iter().map(|&o| o == lane).collect();
            FixedLane::new(template.clone(), owned, layout, format, classes)
        })
        .collect();

    let mut fin = FxArith::new(format);
    let mut windows = Vec::new();
    let mut raw_scores = Vec::new();
    let mut traces = Vec::new();
    let mut max_occupancy = 0;
    for window in stream.windows(params.delta_t_us) {
        par::for_each_mut(&mut lanes, |lane| lane.process_window(window.events, &qm));

        let mut raw = vec![0i64; classes];
        for (cell, &lane) in owner.iter().enumerate() {
            let count = lanes[lane].grid().count(cell);
            if count == 0 {
                continue;
            }
            let recip = fin.reciprocal(count);
            for (j, s) in raw.iter_mut().enumerate() {
                let term = fin.normalize(lanes[lane].partial(cell, j, classes), recip);
                *s = fin.add(*s, term);
            }
        }
        for (s, &b) in raw.iter_mut().zip(&qm.biases) {
            *s = fin.add(*s, b);
        }
        let reals = raw.iter().map(|&r| r as f64 * format.ulp()).collect();
        windows.push(ClassScores::new(window.start, reals));
        raw_scores.push(raw);
        traces.push(LaneTrace {
            reads: lanes.iter().map(|l| l.reads_log.clone()).collect(),
        });
        for lane in lanes.iter_mut() {
            max_occupancy = max_occupancy.max(lane.grid().max_occupancy());
            lane.end_window();
        }
    }
    let saturations =
        qm.saturations + fin.saturations + lanes.iter().map(FixedLane::saturations).sum::<u64>();
    Ok(LaneRun {
        run: FixedRun {
            windows,
            raw_scores,
            saturations,
            format,
        },
        traces,
        max_occupancy,
    })
}

/// Quantized streaming inference: same control flow as
/// [`cwts_run`](crate::cwts::cwts_run) with every surface value, weight,
/// partial sum and normalization held in `format`.
pub fn cwts_run_fixed(
    stream: &EventStream,
    model: &SvmModel,
    params: &GridParams,
    format: FixedPointFormat,
) -> Result<FixedRun> {
    let cells = FeatureLayout::new(stream.geometry(), params).num_cells();
    run_lanes(stream, model, params, format, &vec![0; cells], 1).map(|r| r.run)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AaeReport {
    pub format: FixedPointFormat,
    /// Mean relative absolute error of the class sums, in percent.
    pub aae_percent: f64,
    pub max_abs_err: f64,
    pub saturation_count: u64,
    /// Streams evaluated.
    pub samples: usize,
    /// (window, class) terms averaged.
    pub terms: usize,
    /// Windows whose decision differs from full precision.
    pub decision_mismatches: usize,
    pub windows: usize,
}

const AAE_EPSILON: f64 = 1e-9;

/// Average absolute error of the quantized class sums against the
/// full-precision streaming path, for each format. Reports are sorted by
/// total bits, widest first.
pub fn aae_sweep(
    streams: &[EventStream],
    model: &SvmModel,
    params: &GridParams,
    formats: &[FixedPointFormat],
) -> Result<Vec<AaeReport>> {
    if streams.is_empty() {
        return Err(Error::Argument("AAE sweep needs at least one stream".into()));
    }
    if formats.is_empty() {
        return Err(Error::Argument("AAE sweep needs at least one format".into()));
    }
    struct Partial {
        rel_sum: f64,
        max_abs: f64,
        saturations: u64,
        terms: usize,
        mismatches: usize,
        windows: usize,
    }
    let per_stream: Vec<Result<Vec<Partial>>> = par::map(streams, |s| {
        let reference = cwts_run(s, model, params)?;
        formats
            .iter()
            .map(|&f| {
                let fixed = cwts_run_fixed(s, model, params, f)?;
                let mut p = Partial {
                    rel_sum: 0.0,
                    max_abs: 0.0,
                    saturations: fixed.saturations,
                    terms: 0,
                    mismatches: 0,
                    windows: reference.len(),
                };
                for (r, q) in reference.iter().zip(&fixed.windows) {
                    if r.decision != q.decision {
                        p.mismatches += 1;
                    }
                    for (a, b) in r.scores.iter().zip(&q.scores) {
                        let err = (a - b).abs();
                        p.rel_sum += err / a.abs().max(AAE_EPSILON);
                        p.max_abs = p.max_abs.max(err);
                        p.terms += 1;
                    }
                }
                Ok(p)
            })
            .collect()
    });
    let per_stream = per_stream.into_iter().collect::<Result<Vec<_>>>()?;
    let mut reports: Vec<AaeReport> = formats
        .iter()
        .enumerate()
        .map(|(i, &format)| {
            let mut r = AaeReport {
                format,
                aae_percent: 0.0,
                max_abs_err: 0.0,
                saturation_count: 0,
                samples: streams.len(),
                terms: 0,
                decision_mismatches: 0,
                windows: 0,
            };
            let mut rel = 0.0;
            for s in &per_stream {
                let p = &s[i];
                rel += p.rel_sum;
                r.max_abs_err = r.max_abs_err.max(p.max_abs);
                r.saturation_count += p.saturations;
                r.terms += p.terms;
                r.decision_mismatches += p.mismatches;
                r.windows += p.windows;
            }
            r.aae_percent = 100.0 * rel / r.terms.max(1) as f64;
            r
        })
        .collect();
    reports.sort_by(|a, b| {
        b.format
            .total_bits()
            .cmp(&a.format.total_bits())
            .then(b.format.integer_bits().cmp(&a.format.integer_bits()))
    });
    Ok(reports)
}

/// `total_bits,integer_bits,aae_percent,max_abs_err,saturation_count`
pub fn write_aae_csv<W: Write>(mut w: W, reports: &[AaeReport]) -> std::io::Result<()> {
    writeln!(w, "total_bits,integer_bits,aae_percent,max_abs_err,saturation_count")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.format.total_bits(),
            r.format.integer_bits(),
            r.aae_percent,
            r.max_abs_err,
            r.saturation_count
        )?;
    }
    Ok(())
}

/// The precision ladder from `<24,12>` down to `<19,12>`.
pub fn default_sweep_formats() -> Vec<FixedPointFormat> {
    (19..=24)
        .rev()
        .map(|t| FixedPointFormat::new(t, 12).unwrap())
        .collect()
}
