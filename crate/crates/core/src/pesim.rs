//! Multi-PE execution model.
//!
//! Cells are dealt round-robin to processing elements. Each PE runs the
//! quantized streaming update for its own cells with bounded memories, and is
//! charged per event
//!
//! ```text
//! overhead + reads * cycles_per_read + mac_iterations * cycles_per_iteration
//! ```
//!
//! where `reads` is the number of live memory entries scanned for the event's
//! (cell, polarity). PEs run concurrently, so a window costs the largest
//! per-PE busy count (its makespan). There is no modeling of FIFO
//! backpressure or memory-port contention.

use std::io::Write;

use crate::classifier::{ClassScores, SvmModel};
use crate::error::{Error, Result};
use crate::events::{generate_synthetic, EventStream, MotionSpec, SensorGeometry};
use crate::fixedpoint::{run_lanes, FixedPointFormat, FixedRun, LaneRun, LaneTrace};
use crate::grid::GridParams;
use crate::hats::FeatureLayout;

/// Per-event overhead calibrated so that 8 PEs at 100 MHz spend 3.3 ms on
/// [`reference_sample`] (see [`calibrate_overhead`]).
pub const DEFAULT_OVERHEAD_CYCLES: u64 = 176;

/// Seed of the ≈10⁴-event, 100 ms synthetic sample used for calibration.
pub const REFERENCE_SEED: u64 = 7;

/// Latency per sample the overhead constant is calibrated against.
pub const REFERENCE_LATENCY_MS: f64 = 3.3;

/// Throughput reported for the hardware design, events per second.
pub const REFERENCE_THROUGHPUT_MEVPS: f64 = 2.94;

#[derive(Clone, Debug, PartialEq)]
pub struct PeConfig {
    pub num_pes: usize,
    pub clock_hz: f64,
    /// Events per (cell, polarity) memory, oldest dropped.
    pub memory_capacity: usize,
    pub cycles_per_read: u64,
    pub mac_iterations: u64,
    pub cycles_per_iteration: u64,
    pub overhead_cycles: u64,
    pub format: FixedPointFormat,
}

impl Default for PeConfig {
    fn default() -> Self {
        PeConfig {
            num_pes: 8,
            clock_hz: 1e8,
            memory_capacity: 32,
            cycles_per_read: 1,
            mac_iterations: 2,
            cycles_per_iteration: 11,
            overhead_cycles: DEFAULT_OVERHEAD_CYCLES,
            format: FixedPointFormat::new(24, 12).unwrap(),
        }
    }
}

impl PeConfig {
    pub fn with_pes(num_pes: usize) -> Self {
        PeConfig {
            num_pes,
            ..PeConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_pes == 0 {
            return Err(Error::Argument("need at least one PE".into()));
        }
        if !(self.clock_hz > 0.0) || !self.clock_hz.is_finite() {
            return Err(Error::Argument("clock frequency must be positive".into()));
        }
        if self.memory_capacity == 0 {
            return Err(Error::Argument("memory capacity must be positive".into()));
        }
        Ok(())
    }

    /// Cycles charged for one event that scanned `reads` memory entries.
    #[inline]
    pub fn event_cycles(&self, reads: u64) -> u64 {
        self.overhead_cycles
            + reads * self.cycles_per_read
            + self.mac_iterations * self.cycles_per_iteration
    }
}

/// Round-robin assignment of `cells` cells to `num_pes` PEs: cell `c` goes to
/// PE `c % num_pes`. Returns the cell list of each PE.
pub fn partition_cells(cells: usize, num_pes: usize) -> Result<Vec<Vec<usize>>> {
    if num_pes == 0 {
        return Err(Error::Argument("cannot partition cells over zero PEs".into()));
    }
    let mut out = vec![Vec::with_capacity(cells / num_pes + 1); num_pes];
    for c in 0..cells {
        out[c % num_pes].push(c);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PeStats {
    pub events: u64,
    pub busy_cycles: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeReport {
    pub num_pes: usize,
    pub clock_hz: f64,
    pub per_pe: Vec<PeStats>,
    pub samples: usize,
    pub windows: usize,
    pub events: u64,
    /// Sum over windows of the largest per-PE busy count.
    pub makespan_cycles: u64,
    pub max_mem_occupancy: usize,
}

impl PeReport {
    pub fn busy_cycles_total(&self) -> u64 {
        self.per_pe.iter().map(|p| p.busy_cycles).sum()
    }

    pub fn busy_cycles_max(&self) -> u64 {
        self.per_pe.iter().map(|p| p.busy_cycles).max().unwrap_or(0)
    }

    pub fn time_us(&self) -> f64 {
        self.makespan_cycles as f64 / self.clock_hz * 1e6
    }

    pub fn latency_ms_per_sample(&self) -> f64 {
        self.time_us() / 1e3 / self.samples.max(1) as f64
    }

    pub fn mevents_per_s(&self) -> f64 {
        let t = self.time_us();
        if t == 0.0 {
            0.0
        } else {
            self.events as f64 / t
        }
    }

    /// Combines reports of several samples run with the same configuration.
    pub fn aggregate(reports: &[PeReport]) -> Result<PeReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Argument("no reports to aggregate".into()))?;
        let mut out = PeReport {
            per_pe: vec![PeStats::default(); first.num_pes],
            samples: 0,
            windows: 0,
            events: 0,
            makespan_cycles: 0,
            max_mem_occupancy: 0,
            ..first.clone()
        };
        for r in reports {
            if r.num_pes != first.num_pes {
                return Err(Error::Argument("reports use different PE counts".into()));
            }
            for (o, p) in out.per_pe.iter_mut().zip(&r.per_pe) {
                o.events += p.events;
                o.busy_cycles += p.busy_cycles;
            }
            out.samples += r.samples;
            out.windows += r.windows;
            out.events += r.events;
            out.makespan_cycles += r.makespan_cycles;
            out.max_mem_occupancy = out.max_mem_occupancy.max(r.max_mem_occupancy);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub run: FixedRun,
    pub report: PeReport,
}

impl Simulation {
    pub fn scores(&self) -> &[ClassScores] {
        &self.run.windows
    }
}

fn cost_report(traces: &[LaneTrace], config: &PeConfig) -> (Vec<PeStats>, u64) {
    let mut per_pe = vec![PeStats::default(); config.num_pes];
    let mut makespan = 0;
    for window in traces {
        let mut slowest = 0;
        for (pe, reads) in window.reads.iter().enumerate() {
            let busy: u64 = reads.iter().map(|&r| config.event_cycles(r)).sum();
            per_pe[pe].events += reads.len() as u64;
            per_pe[pe].busy_cycles += busy;
            slowest = slowest.max(busy);
        }
        makespan += slowest;
    }
    (per_pe, makespan)
}

fn run_pes(
    stream: &EventStream,
    model: &SvmModel,
    params: &GridParams,
    config: &PeConfig,
) -> Result<LaneRun> {
    config.validate()?;
    let params = GridParams {
        memory_capacity: Some(config.memory_capacity),
        ..params.clone()
    };
    let cells = FeatureLayout::new(stream.geometry(), &params).num_cells();
    let mut owner = vec![0; cells];
    for (pe, list) in partition_cells(cells, config.num_pes)?.iter().enumerate() {
        list.iter().for_each(|&c| owner[c] = pe);
    }
    let lanes = run_lanes(stream, model, &params, config.format, &owner, config.num_pes)?;
    if lanes.max_occupancy > config.memory_capacity {
        return Err(Error::Invariant(format!(
            "memory occupancy {} exceeds capacity {}",
            lanes.max_occupancy, config.memory_capacity
        )));
    }
    Ok(lanes)
}

/// Runs one sample through the PE model: quantized scores (independent of
/// `num_pes`) and the timing report.
pub fn simulate(
    stream: &EventStream,
    model: &SvmModel,
    params: &GridParams,
    config: &PeConfig,
) -> Result<Simulation> {
    let lanes = run_pes(stream, model, params, config)?;
    let (per_pe, makespan) = cost_report(&lanes.traces, config);
    let events = per_pe.iter().map(|p| p.events).sum();
    let report = PeReport {
        num_pes: config.num_pes,
        clock_hz: config.clock_hz,
        per_pe,
        samples: 1,
        windows: lanes.traces.len(),
        events,
        makespan_cycles: makespan,
        max_mem_occupancy: lanes.max_occupancy,
    };
    Ok(Simulation {
        run: lanes.run,
        report,
    })
}

/// Smallest per-event overhead for which the sample's modeled latency
/// reaches `target_latency_ms`, or the one just below when that is closer.
pub fn calibrate_overhead(
    stream: &EventStream,
    model: &SvmModel,
    params: &GridParams,
    config: &PeConfig,
    target_latency_ms: f64,
) -> Result<u64> {
    let traces = run_pes(stream, model, params, config)?.traces;
    if traces.iter().all(|w| w.reads.iter().all(Vec::is_empty)) {
        return Err(Error::Argument("cannot calibrate on an empty sample".into()));
    }
    let target = target_latency_ms * 1e-3 * config.clock_hz;
    let makespan = |o: u64| {
        let cfg = PeConfig {
            overhead_cycles: o,
            ..config.clone()
        };
        cost_report(&traces, &cfg).1 as f64
    };
    if makespan(0) >= target {
        return Ok(0);
    }
    let (mut lo, mut hi) = (0u64, 1u64);
    while makespan(hi) < target {
        hi *= 2;
        if hi > 1 << 40 {
            return Err(Error::Argument("latency target out of reach".into()));
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if makespan(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if target - makespan(lo) < makespan(hi) - target {
        lo
    } else {
        hi
    })
}

/// The ≈10⁴-event, 100 ms, 120x100 sample used to calibrate the cost model.
pub fn reference_sample() -> EventStream {
    generate_synthetic(
        &MotionSpec::rightward(),
        SensorGeometry::ncars(),
        100_000,
        REFERENCE_SEED,
    )
    .expect("reference sample parameters are valid")
}

/// `num_pes,events,busy_cycles_max,latency_ms_per_sample,mevents_per_s,max_mem_occupancy`
pub fn write_report_csv<W: Write>(mut w: W, reports: &[PeReport]) -> std::io::Result<()> {
    writeln!(
        w,
        "num_pes,events,busy_cycles_max,latency_ms_per_sample,mevents_per_s,max_mem_occupancy"
    )?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.num_pes,
            r.events,
            r.busy_cycles_max(),
            r.latency_ms_per_sample(),
            r.mevents_per_s(),
            r.max_mem_occupancy
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ModelFingerprint;
    use crate::events::{Event, Polarity};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(g: SensorGeometry, params: &GridParams, seed: u64) -> SvmModel {
        let fp = ModelFingerprint::new(g, params);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = fp.layout().len();
        let w = (0..3)
            .map(|_| (0..dim).map(|_| rng.gen_range(-0.05..0.05)).collect())
            .collect();
        SvmModel::new(w, vec![0.1, -0.2, 0.0], fp).unwrap()
    }

    fn uniform_stream(g: SensorGeometry, n: usize, duration: u64, seed: u64) -> EventStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ts: Vec<u64> = (0..n).map(|_| rng.gen_range(0..duration)).collect();
        ts.sort_unstable();
        let events = ts
            .into_iter()
            .map(|t| {
                let p = if rng.gen_bool(0.5) { Polarity::On } else { Polarity::Off };
                Event::new(rng.gen_range(0..g.width), rng.gen_range(0..g.height), t, p)
            })
            .collect();
        EventStream::new(g, events).unwrap()
    }

    #[test]
    fn round_robin_partition() {
        let p = partition_cells(120, 8).unwrap();
        assert!(p.iter().all(|c| c.len() == 15));
        assert_eq!(p[3][..3], [3, 11, 19]);
        assert_eq!(partition_cells(120, 1).unwrap()[0], (0..120).collect::<Vec<_>>());
        let sizes: Vec<usize> = partition_cells(7, 3).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, [3, 2, 2]);
        assert!(partition_cells(7, 0).is_err());
    }

    #[test]
    fn cost_of_events_on_empty_memories() {
        let g = SensorGeometry::new(40, 20).unwrap();
        let params = GridParams::streaming();
        let m = model(g, &params, 1);
        // one event per cell, so every memory read finds nothing
        let events: Vec<Event> = (0..8u16)
            .map(|c| Event::new((c % 4) * 10 + 2, (c / 4) * 10 + 5, 100 + c as u64, Polarity::On))
            .collect();
        let s = EventStream::new(g, events).unwrap();
        let cfg = PeConfig {
            overhead_cycles: 5,
            ..PeConfig::with_pes(1)
        };
        let r = simulate(&s, &m, &params, &cfg).unwrap().report;
        assert_eq!(r.makespan_cycles, 8 * (5 + 22));
        assert_eq!(r.events, 8);
        let cfg = PeConfig { num_pes: 4, ..cfg };
        let r = simulate(&s, &m, &params, &cfg).unwrap().report;
        assert_eq!(r.makespan_cycles, 2 * (5 + 22));
        assert!(r.per_pe.iter().all(|p| p.events == 2));
    }

    #[test]
    fn event_cycles_formula() {
        let cfg = PeConfig {
            overhead_cycles: 10,
            ..PeConfig::default()
        };
        assert_eq!(cfg.event_cycles(0), 32);
        assert_eq!(cfg.event_cycles(7), 39);
    }

    #[test]
    fn scores_do_not_depend_on_pe_count() {
        let g = SensorGeometry::ncars();
        let params = GridParams::streaming();
        let m = model(g, &params, 2);
        let s = uniform_stream(g, 4000, 250_000, 3);
        let base = simulate(&s, &m, &params, &PeConfig::with_pes(1)).unwrap();
        let mut last = base.report.makespan_cycles;
        for p in [2, 4, 8] {
            let sim = simulate(&s, &m, &params, &PeConfig::with_pes(p)).unwrap();
            assert_eq!(sim.run.raw_scores, base.run.raw_scores);
            assert_eq!(sim.report.events, base.report.events);
            assert!(sim.report.makespan_cycles <= last);
            last = sim.report.makespan_cycles;
        }
    }

    #[test]
    fn uniform_load_scales_nearly_linearly() {
        let g = SensorGeometry::ncars();
        let params = GridParams::streaming();
        let m = model(g, &params, 4);
        let s = uniform_stream(g, 10_000, 100_000, 5);
        let one = simulate(&s, &m, &params, &PeConfig::with_pes(1)).unwrap().report;
        for p in [2usize, 4, 8] {
            let r = simulate(&s, &m, &params, &PeConfig::with_pes(p)).unwrap().report;
            let speedup = r.mevents_per_s() / one.mevents_per_s();
            assert!(
                speedup >= 0.7 * p as f64 && speedup <= p as f64 + 1e-9,
                "{p} PEs: speedup {speedup}"
            );
            assert!(r.max_mem_occupancy <= 32);
        }
    }

    #[test]
    fn reference_calibration_is_reproducible() {
        let g = SensorGeometry::ncars();
        let params = GridParams::streaming();
        let m = model(g, &params, 6);
        let s = reference_sample();
        assert!((9_000..=11_000).contains(&s.len()));
        let o = calibrate_overhead(&s, &m, &params, &PeConfig::default(), REFERENCE_LATENCY_MS)
            .unwrap();
        assert_eq!(o, DEFAULT_OVERHEAD_CYCLES);
        let r = simulate(&s, &m, &params, &PeConfig::default()).unwrap().report;
        assert!((r.latency_ms_per_sample() - REFERENCE_LATENCY_MS).abs() < 0.05);
        assert!(r.max_mem_occupancy <= 32);
    }

    #[test]
    fn aggregate_and_csv() {
        let g = SensorGeometry::new(40, 20).unwrap();
        let params = GridParams::streaming();
        let m = model(g, &params, 7);
        let a = simulate(&uniform_stream(g, 300, 100_000, 8), &m, &params, &PeConfig::with_pes(2))
            .unwrap()
            .report;
        let b = simulate(&uniform_stream(g, 500, 100_000, 9), &m, &params, &PeConfig::with_pes(2))
            .unwrap()
            .report;
        let t = PeReport::aggregate(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(t.samples, 2);
        assert_eq!(t.events, a.events + b.events);
        assert_eq!(t.makespan_cycles, a.makespan_cycles + b.makespan_cycles);
        let mut out = Vec::new();
        write_report_csv(&mut out, &[t]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("num_pes,events,busy_cycles_max,"));
        assert_eq!(text.lines().count(), 2);
        assert!(PeReport::aggregate(&[]).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let g = SensorGeometry::new(40, 20).unwrap();
        let params = GridParams::streaming();
        let m = model(g, &params, 1);
        let s = uniform_stream(g, 10, 1000, 1);
        for cfg in [
            PeConfig::with_pes(0),
            PeConfig {
                memory_capacity: 0,
                ..PeConfig::default()
            },
        ] {
            assert!(simulate(&s, &m, &params, &cfg).is_err());
        }
    }
}
