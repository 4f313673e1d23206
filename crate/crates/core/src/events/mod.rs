//! Event data model, codecs and stream utilities.
//!
//! An [`Event`] is a single sensor event `(x, y, t, p)` with `x`/`y` the
//! 0-based pixel column/row, `t` the timestamp in microseconds and `p` the
//! polarity. An [`EventStream`] is a validated, time-ordered sequence of events
//! on a fixed [`SensorGeometry`].

mod aer;
mod csv;
mod dat;
pub mod synthetic;

pub use aer::{decode_aer24, encode_aer24, Aer24Word};
pub use csv::{decode_csv, encode_csv};
pub use dat::{dat_header_geometry, decode_dat, encode_dat};
pub use synthetic::{generate_synthetic, synthetic_suite, MotionSpec};

use crate::error::{Error, Result};

/// Event polarity: OFF (brightness decrease, `-1`) or ON (increase, `+1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Off,
    On,
}

impl Polarity {
    pub fn from_sign(sign: i8) -> Option<Self> {
        match sign {
            -1 => Some(Polarity::Off),
            1 => Some(Polarity::On),
            _ => None,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Polarity::Off => -1,
            Polarity::On => 1,
        }
    }

    /// Channel index used by memories and feature layouts: OFF = 0, ON = 1.
    #[inline]
    pub fn index(self) -> usize {
        match self {
            Polarity::Off => 0,
            Polarity::On => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// Timestamp in microseconds.
    pub t: u64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: Polarity) -> Self {
        Event { x, y, t, p }
    }
}

/// Pixel grid size: `width` columns (M) by `height` rows (N).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SensorGeometry {
    pub width: u16,
    pub height: u16,
}

impl SensorGeometry {
    pub fn new(width: u16, height: u16) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!(
                "degenerate sensor geometry {width}x{height}"
            )));
        }
        Ok(SensorGeometry { width, height })
    }

    /// The 120x100 frame used by the reference hardware design.
    pub fn ncars() -> Self {
        SensorGeometry {
            width: 120,
            height: 100,
        }
    }

    #[inline]
    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }
}

/// A validated event sequence: events inside the geometry, timestamps
/// non-decreasing (ties keep their original order).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    geometry: SensorGeometry,
    events: Vec<Event>,
    pub label: Option<u32>,
}

/// A Δt-aligned slice of a stream: `[start, start + delta_t)`.
#[derive(Clone, Copy, Debug)]
pub struct Window<'a> {
    pub start: u64,
    pub events: &'a [Event],
}

impl EventStream {
    pub fn new(geometry: SensorGeometry, events: Vec<Event>) -> Result<Self> {
        validate(&geometry, &events)?;
        Ok(EventStream {
            geometry,
            events,
            label: None,
        })
    }

    pub fn empty(geometry: SensorGeometry) -> Self {
        EventStream {
            geometry,
            events: Vec::new(),
            label: None,
        }
    }

    pub fn with_label(mut self, label: u32) -> Self {
        self.label = Some(label);
        self
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// Time span covered by the events, `last.t - first.t`.
    pub fn span_us(&self) -> u64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0,
        }
    }

    /// Drops events outside the region covered by whole `cell_size` cells
    /// (`x >= K*floor(M/K)` or `y >= K*floor(N/K)`). Returns the cropped
    /// stream and the number of dropped events.
    pub fn crop_to_cells(&self, cell_size: u16) -> (EventStream, usize) {
        let k = cell_size.max(1);
        let max_x = (self.geometry.width / k) * k;
        let max_y = (self.geometry.height / k) * k;
        let kept: Vec<Event> = self
            .events
            .iter()
            .copied()
            .filter(|e| e.x < max_x && e.y < max_y)
            .collect();
        let dropped = self.events.len() - kept.len();
        (
            EventStream {
                geometry: self.geometry,
                events: kept,
                label: self.label,
            },
            dropped,
        )
    }

    /// Splits the stream into consecutive windows `[k*Δt, (k+1)*Δt)` of
    /// absolute stream time, from the window holding the first event through
    /// the one holding the last, empty windows included. An empty stream
    /// yields one empty window starting at 0.
    pub fn windows(&self, delta_t: u64) -> Vec<Window<'_>> {
        assert!(delta_t > 0, "window length must be positive");
        let (first, last) = match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => (a.t / delta_t, b.t / delta_t),
            _ => {
                return vec![Window {
                    start: 0,
                    events: &[],
                }]
            }
        };
        let mut out = Vec::with_capacity((last - first + 1) as usize);
        let mut rest = &self.events[..];
        for w in first..=last {
            let end = (w + 1).saturating_mul(delta_t);
            let n = rest.partition_point(|e| e.t < end);
            let (head, tail) = rest.split_at(n);
            out.push(Window {
                start: w * delta_t,
                events: head,
            });
            rest = tail;
        }
        out
    }
}

fn validate(geometry: &SensorGeometry, events: &[Event]) -> Result<()> {
    let mut previous = 0u64;
    for (index, e) in events.iter().enumerate() {
        if !geometry.contains(e.x, e.y) {
            return Err(Error::Validation {
                index,
                message: format!(
                    "pixel ({}, {}) outside {}x{} sensor",
                    e.x, e.y, geometry.width, geometry.height
                ),
            });
        }
        if index > 0 && e.t < previous {
            return Err(Error::Ordering {
                index,
                t: e.t,
                previous,
            });
        }
        previous = e.t;
    }
    Ok(())
}

/// Replaces every timestamp by `floor(t / step) * step`.
pub fn quantize_timestamps(stream: &EventStream, step: u64) -> Result<EventStream> {
    if step == 0 {
        return Err(Error::Argument("timestamp step must be positive".into()));
    }
    let events = stream
        .events
        .iter()
        .map(|e| Event {
            t: (e.t / step) * step,
            ..*e
        })
        .collect();
    Ok(EventStream {
        geometry: stream.geometry,
        events,
        label: stream.label,
    })
}
