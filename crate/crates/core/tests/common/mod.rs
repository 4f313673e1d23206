//! Shared helpers for the integration tests: random streams, random
//! parameters and a brute-force reference for the per-window representation.
#![allow(dead_code)]

use evsurf::{Event, EventStream, GridParams, Kernel, MemoryMode, Polarity, SensorGeometry};
use rand::Rng;

/// Direct evaluation of the per-window representation. Every past event is
/// re-examined for every new event, and memory membership is derived from
/// first principles instead of being maintained incrementally:
///
/// * same cell and polarity, pushed earlier;
/// * Reset: pushed in the current window; Sliding: `t_j >= t_i - Δt`;
/// * bounded memories: among the last `capacity` pushes of that memory.
///
/// Returns one flattened vector per window, laid out as
/// `[polarity][cell][dy + ρ][dx + ρ]` with offsets taken stored minus new.
pub fn oracle_windows(stream: &EventStream, p: &GridParams) -> Vec<Vec<f64>> {
    let g = stream.geometry();
    let k = p.cell_size as usize;
    let (cx, cy) = (g.width as usize / k, g.height as usize / k);
    let cells = cx * cy;
    let rho = p.rho as i64;
    let side = (2 * rho + 1) as usize;
    let wlen = side * side;
    let cell_of = |e: &Event| -> Option<usize> {
        let (a, b) = (e.x as usize / k, e.y as usize / k);
        (a < cx && b < cy).then_some(b * cx + a)
    };
    let events: Vec<(Event, usize)> = stream
        .events()
        .iter()
        .filter_map(|e| cell_of(e).map(|c| (*e, c)))
        .collect();
    let dt = p.delta_t_us;
    let (first, last) = match (stream.events().first(), stream.events().last()) {
        (Some(a), Some(b)) => (a.t / dt, b.t / dt),
        _ => (0, 0),
    };
    let mut out = Vec::new();
    for w in first..=last {
        let (start, end) = (w * dt, (w + 1) * dt);
        let mut rep = vec![0.0; 2 * cells * wlen];
        let mut count = vec![0u64; cells];
        for (i, (ei, ci)) in events.iter().enumerate() {
            if ei.t < start || ei.t >= end {
                continue;
            }
            count[*ci] += 1;
            // earlier pushes into the same memory, newest first
            let mut rank = 0usize;
            for (ej, cj) in events[..i].iter().rev() {
                if cj != ci || ej.p != ei.p {
                    continue;
                }
                if p.memory_mode == MemoryMode::Reset && ej.t < start {
                    break;
                }
                rank += 1;
                if p.memory_capacity.is_some_and(|c| rank > c) {
                    break;
                }
                if p.memory_mode == MemoryMode::Sliding && ej.t + dt < ei.t {
                    continue;
                }
                let dx = ej.x as i64 - ei.x as i64;
                let dy = ej.y as i64 - ei.y as i64;
                if dx.abs() > rho || dy.abs() > rho {
                    continue;
                }
                let delta = (ei.t - ej.t) as f64;
                let v = match p.kernel {
                    Kernel::Exponential => (-delta / p.tau_us).exp(),
                    Kernel::LinearDecay => (1.0 - delta / p.tau_us).max(0.0),
                };
                let pol = if ei.p == Polarity::On { 1 } else { 0 };
                let idx = (pol * cells + ci) * wlen + ((dy + rho) as usize) * side + (dx + rho) as usize;
                rep[idx] += v;
            }
        }
        for c in 0..cells {
            if count[c] == 0 {
                continue;
            }
            for pol in 0..2 {
                let base = (pol * cells + c) * wlen;
                rep[base..base + wlen].iter_mut().for_each(|v| *v /= count[c] as f64);
            }
        }
        out.push(rep);
    }
    out
}

/// Parameters with a random cell size, radius, window and decay, in either
/// memory mode. `tau` is kept in the range where the kernel matters.
pub fn random_params<R: Rng>(rng: &mut R, kernel: Kernel, mode: MemoryMode) -> GridParams {
    let cell_size = rng.gen_range(2..=10u16);
    GridParams {
        cell_size,
        rho: rng.gen_range(1..cell_size),
        delta_t_us: rng.gen_range(2_000..50_000),
        tau_us: [5e3, 2e4, 1e5, 1e9][rng.gen_range(0..4)],
        kernel,
        memory_mode: mode,
        memory_capacity: if rng.gen_bool(0.3) {
            Some(rng.gen_range(1..20))
        } else {
            None
        },
    }
}

/// Events clustered around a few moving centers so that neighborhoods are
/// populated, with some uniform background. Timestamps span a few windows of
/// 50 ms and include exact ties.
pub fn random_stream<R: Rng>(rng: &mut R, geometry: SensorGeometry, n: usize) -> EventStream {
    let span = rng.gen_range(10_000..150_000u64);
    let offset = rng.gen_range(0..200_000u64);
    let mut ts: Vec<u64> = (0..n).map(|_| offset + rng.gen_range(0..span)).collect();
    ts.sort_unstable();
    for i in 1..ts.len() {
        if rng.gen_bool(0.05) {
            ts[i] = ts[i - 1];
        }
    }
    let centers: Vec<(f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.0..geometry.width as f64),
                rng.gen_range(0.0..geometry.height as f64),
            )
        })
        .collect();
    let events = ts
        .into_iter()
        .map(|t| {
            let (x, y) = if rng.gen_bool(0.8) {
                let (cx, cy) = centers[rng.gen_range(0..centers.len())];
                (
                    (cx + rng.gen_range(-4.0..4.0)).clamp(0.0, geometry.width as f64 - 1.0),
                    (cy + rng.gen_range(-4.0..4.0)).clamp(0.0, geometry.height as f64 - 1.0),
                )
            } else {
                (
                    rng.gen_range(0.0..geometry.width as f64),
                    rng.gen_range(0.0..geometry.height as f64),
                )
            };
            let p = if rng.gen_bool(0.5) { Polarity::On } else { Polarity::Off };
            Event::new(x as u16, y as u16, t, p)
        })
        .collect();
    EventStream::new(geometry, events).unwrap()
}

pub fn random_geometry<R: Rng>(rng: &mut R) -> SensorGeometry {
    SensorGeometry::new(rng.gen_range(20..=120), rng.gen_range(20..=100)).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest relative deviation, with `floor` guarding exact zeros.
pub fn max_rel_err(got: &[f64], want: &[f64], floor: f64) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs() / b.abs().max(floor))
        .fold(0.0, f64::max)
}
