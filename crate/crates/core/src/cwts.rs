//! Streaming inference: instead of materializing the representation, each
//! event's time surface is immediately projected onto the class weight block
//! of its (polarity, cell) and added to a per-cell partial sum. At the end of
//! a Δt window the partial sums are divided by the cell counts, summed over
//! cells and offset by the biases, which equals `<W_j, H> + b_j` for the
//! window's representation `H`.

use std::io::Write;
use std::time::Instant;

use crate::classifier::{ClassScores, SvmModel};
use crate::error::{Error, Result};
use crate::events::{Event, EventStream, SensorGeometry};
use crate::grid::{CellGrid, GridParams};
use crate::hats::FeatureLayout;

pub struct CwtsState<'m> {
    grid: CellGrid,
    model: &'m SvmModel,
    layout: FeatureLayout,
    /// `partial_sums[cell * k + class]`
    partial_sums: Vec<f64>,
    window_start: u64,
    surface: Vec<f64>,
    from_sums: bool,
}

impl<'m> CwtsState<'m> {
    pub fn new(
        geometry: SensorGeometry,
        params: &GridParams,
        model: &'m SvmModel,
        window_start: u64,
    ) -> Result<Self> {
        model.check_compatible(geometry, params)?;
        let mut grid = CellGrid::new(geometry, params.clone())?;
        let from_sums = grid.linear_unclamped();
        if from_sums {
            grid.track_pixel_sums();
        }
        let layout = FeatureLayout::new(geometry, params);
        if model.dim() != layout.len() {
            return Err(Error::Config(format!(
                "model dimension {} != 2*L*(2rho+1)^2 = {}",
                model.dim(),
                layout.len()
            )));
        }
        Ok(CwtsState {
            partial_sums: vec![0.0; layout.num_cells() * model.num_classes()],
            surface: vec![0.0; layout.window_len() + 1],
            from_sums,
            grid,
            model,
            layout,
            window_start,
        })
    }

    pub fn window_start(&self) -> u64 {
        self.window_start
    }

    pub fn window_end(&self) -> u64 {
        self.window_start + self.grid.params().delta_t_us
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn partial_sum(&self, cell: usize, class: usize) -> f64 {
        self.partial_sums[cell * self.model.num_classes() + class]
    }

    /// Scalars held by the state: partial sums, cell counters and live
    /// memory events. Independent of the representation size.
    pub fn footprint(&self) -> usize {
        self.partial_sums.len() + self.grid.num_cells() + self.grid.live_events()
    }

    /// Processes one event. Events outside the cell-covered region are
    /// ignored; events outside the current window are rejected.
    pub fn step(&mut self, e: &Event) -> Result<()> {
        if e.t < self.window_start || e.t >= self.window_end() {
            return Err(Error::WindowBoundary {
                t: e.t,
                start: self.window_start,
                end: self.window_end(),
            });
        }
        let Ok(cell) = self.grid.cell_of(e.x, e.y) else {
            return Ok(());
        };
        if self.from_sums {
            self.grid.evict_stale(cell, e.t);
            self.project_from_sums(cell, e);
        } else {
            self.surface.iter_mut().for_each(|v| *v = 0.0);
            self.grid.surface_into_padded(cell, e, &mut self.surface);
            let k = self.model.num_classes();
            let off = self.layout.block_offset(e.p.index(), cell);
            let wlen = self.layout.window_len();
            let surface = &self.surface[..wlen];
            for (j, w) in self.model.weights().iter().enumerate() {
                let block = &w[off..off + wlen];
                let contribution: f64 = block.iter().zip(surface).map(|(a, b)| a * b).sum();
                self.partial_sums[cell * k + j] += contribution;
            }
        }
        self.grid.update_cell(cell, e);
        Ok(())
    }

    /// Closes the window: normalizes partial sums by cell counts, adds the
    /// biases, resets the state and advances the window by Δt.
    /// Linear kernel without clamping: each neighborhood pixel with `n`
    /// stored events of total lag `n t - Σ t_j` contributes
    /// `n - lag / τ`. Only pixels inside the event's cell are visited.
    #[inline]
    fn project_from_sums(&mut self, cell: usize, e: &Event) {
        let params = self.grid.params();
        let k_px = params.cell_size as usize;
        let rho = params.rho as usize;
        let side = 2 * rho + 1;
        let inv_tau = 1.0 / params.tau_us;
        let (counts, t_sums) = self.grid.pixel_sums(cell, e.p);
        let (lx, ly) = (e.x as usize % k_px, e.y as usize % k_px);
        let (x0, x1) = (lx.saturating_sub(rho), (lx + rho).min(k_px - 1));
        let (y0, y1) = (ly.saturating_sub(rho), (ly + rho).min(k_px - 1));
        let off = self.layout.block_offset(e.p.index(), cell);
        let k = self.model.num_classes();
        let acc = &mut self.partial_sums[cell * k..(cell + 1) * k];
        let width = x1 - x0 + 1;
        for py in y0..=y1 {
            let src = py * k_px + x0;
            let counts = &counts[src..src + width];
            let t_sums = &t_sums[src..src + width];
            let row = &mut self.surface[..width];
            for ((v, &n), &ts) in row.iter_mut().zip(counts).zip(t_sums) {
                let n = n as u64;
                let lag = n.wrapping_mul(e.t).wrapping_sub(ts);
                *v = n as f64 - lag as f64 * inv_tau;
            }
            let w0 = off + (py + rho - ly) * side + (x0 + rho - lx);
            for (a, w) in acc.iter_mut().zip(self.model.weights()) {
                let w = &w[w0..w0 + width];
                *a += w.iter().zip(row.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }

    pub fn finalize(&mut self) -> ClassScores {
        let k = self.model.num_classes();
        let mut scores = vec![0.0; k];
        for cell in 0..self.layout.num_cells() {
            let count = self.grid.count(cell);
            if count == 0 {
                continue;
            }
            let n = count as f64;
            for (j, s) in scores.iter_mut().enumerate() {
                *s += self.partial_sums[cell * k + j] / n;
            }
        }
        for (s, b) in scores.iter_mut().zip(self.model.biases()) {
            *s += b;
        }
        let out = ClassScores::new(self.window_start, scores);
        self.partial_sums.iter_mut().for_each(|v| *v = 0.0);
        self.grid.end_window();
        self.window_start += self.grid.params().delta_t_us;
        out
    }
}

/// Runs streaming inference over a whole stream, one [`ClassScores`] per Δt
/// window (see [`EventStream::windows`]); a trailing partial window is
/// finalized at stream end.
pub fn cwts_run(
    stream: &EventStream,
    model: &SvmModel,
    params: &GridParams,
) -> Result<Vec<ClassScores>> {
    let windows = stream.windows(params.delta_t_us);
    let mut state = CwtsState::new(stream.geometry(), params, model, windows[0].start)?;
    let mut out = Vec::with_capacity(windows.len());
    for window in windows {
        for e in window.events {
            state.step(e)?;
        }
        out.push(state.finalize());
    }
    Ok(out)
}

/// Score CSV: header, then `window_start_us,score_0,...,score_{k-1},decision`.
pub fn write_scores_csv<W: Write>(mut w: W, scores: &[ClassScores], k: usize) -> std::io::Result<()> {
    let mut header = String::from("window_start_us");
    for j in 0..k {
        header.push_str(&format!(",score_{j}"));
    }
    header.push_str(",decision");
    writeln!(w, "{header}")?;
    for s in scores {
        let mut line = s.window_start_us.to_string();
        for v in &s.scores {
            line.push_str(&format!(",{v}"));
        }
        line.push_str(&format!(",{}", s.decision));
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Host wall-clock throughput of the full-precision streaming path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HostThroughput {
    pub runs: usize,
    pub events_per_run: usize,
    pub samples_per_run: usize,
    pub mevents_per_s: f64,
    pub ms_per_sample: f64,
}

/// Times `runs` single-threaded passes of [`cwts_run`] over `streams` and
/// reports the averages.
pub fn measure_host_throughput(
    streams: &[EventStream],
    model: &SvmModel,
    params: &GridParams,
    runs: usize,
) -> Result<HostThroughput> {
    if streams.is_empty() || runs == 0 {
        return Err(Error::Argument("need at least one stream and one run".into()));
    }
    let events: usize = streams.iter().map(EventStream::len).sum();
    let mut total = 0.0;
    let mut sink = 0.0;
    for _ in 0..runs {
        let start = Instant::now();
        for s in streams {
            for w in cwts_run(s, model, params)? {
                sink += w.scores[0];
            }
        }
        total += start.elapsed().as_secs_f64();
    }
    std::hint::black_box(sink);
    let per_run = total / runs as f64;
    Ok(HostThroughput {
        runs,
        events_per_run: events,
        samples_per_run: streams.len(),
        mevents_per_s: events as f64 / per_run / 1e6,
        ms_per_sample: per_run * 1e3 / streams.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ModelFingerprint;
    use crate::events::Polarity;
    use crate::hats::compute_hats_windows;

    fn setup(k_classes: usize, weight: f64) -> (SensorGeometry, GridParams, SvmModel) {
        let g = SensorGeometry::new(20, 10).unwrap();
        let params = GridParams::streaming();
        let fp = ModelFingerprint::new(g, &params);
        let dim = fp.layout().len();
        let model =
            SvmModel::new(vec![vec![weight; dim]; k_classes], vec![0.0; k_classes], fp).unwrap();
        (g, params, model)
    }

    #[test]
    fn first_event_and_coincident_pair() {
        let (g, params, model) = setup(2, 1.0);
        let mut st = CwtsState::new(g, &params, &model, 0).unwrap();
        let e = Event::new(3, 3, 50, Polarity::On);
        st.step(&e).unwrap();
        assert_eq!(st.partial_sum(0, 0), 0.0);
        st.step(&e).unwrap();
        assert_eq!(st.partial_sum(0, 0), 1.0);
        assert_eq!(st.partial_sum(0, 1), 1.0);
        let scores = st.finalize();
        assert_eq!(scores.scores, vec![0.5, 0.5]);
        assert_eq!(st.window_start(), 100_000);
        assert_eq!(st.grid().live_events(), 0);
    }

    #[test]
    fn empty_window_returns_biases() {
        let (g, params, model) = setup(2, 1.0);
        let fp = *model.fingerprint();
        let model = SvmModel::new(model.weights().to_vec(), vec![-1.0, 2.0], fp).unwrap();
        let mut st = CwtsState::new(g, &params, &model, 0).unwrap();
        let s = st.finalize();
        assert_eq!(s.scores, vec![-1.0, 2.0]);
        assert_eq!(s.decision, 1);
    }

    #[test]
    fn window_boundary_is_enforced() {
        let (g, params, model) = setup(2, 1.0);
        let mut st = CwtsState::new(g, &params, &model, 0).unwrap();
        let late = Event::new(3, 3, 100_000, Polarity::On);
        assert!(matches!(st.step(&late), Err(Error::WindowBoundary { .. })));
    }

    #[test]
    fn window_count() {
        let (g, params, model) = setup(2, 0.1);
        let e = |t| Event::new(1, 1, t, Polarity::Off);
        let s = EventStream::new(g, vec![e(0), e(10), e(99_999)]).unwrap();
        assert_eq!(cwts_run(&s, &model, &params).unwrap().len(), 1);
        let s = EventStream::new(g, vec![e(0), e(120_000), e(249_000)]).unwrap();
        let w = cwts_run(&s, &model, &params).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[2].window_start_us, 200_000);
    }

    #[test]
    fn geometry_mismatch() {
        let (_, params, model) = setup(2, 0.1);
        let other = EventStream::empty(SensorGeometry::new(30, 10).unwrap());
        assert!(matches!(cwts_run(&other, &model, &params), Err(Error::Config(_))));
    }

    #[test]
    fn matches_batch_on_small_stream() {
        let (g, params, _) = setup(2, 0.0);
        let fp = ModelFingerprint::new(g, &params);
        let dim = fp.layout().len();
        let w0: Vec<f64> = (0..dim).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4).collect();
        let w1: Vec<f64> = w0.iter().map(|v| 0.3 - v).collect();
        let model = SvmModel::new(vec![w0, w1], vec![0.1, -0.2], fp).unwrap();
        let events: Vec<Event> = (0..200u64)
            .map(|i| {
                let p = if i % 3 == 0 { Polarity::Off } else { Polarity::On };
                Event::new(((i * 7) % 20) as u16, ((i * 3) % 10) as u16, i * 900, p)
            })
            .collect();
        let s = EventStream::new(g, events).unwrap();
        let streamed = cwts_run(&s, &model, &params).unwrap();
        let batch = compute_hats_windows(&s, &params).unwrap();
        assert_eq!(streamed.len(), batch.len());
        for (a, h) in streamed.iter().zip(&batch) {
            let b = model.predict(h.as_slice()).unwrap();
            for (x, y) in a.scores.iter().zip(&b.scores) {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn scores_csv_format() {
        let s = vec![ClassScores::new(0, vec![0.5, -1.0])];
        let mut out = Vec::new();
        write_scores_csv(&mut out, &s, 2).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "window_start_us,score_0,score_1,decision\n0,0.5,-1,0\n"
        );
    }
}
