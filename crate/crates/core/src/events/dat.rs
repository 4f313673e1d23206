//! Binary DAT event files.
//!
//! Layout: optional ASCII header lines starting with `%`, then little-endian
//! 8-byte records `u32 timestamp_us, u32 data` where `data` packs
//! `x` in bits 0..14, `y` in bits 14..28 and the polarity in bit 28
//! (0 = OFF, 1 = ON). Bits 29..32 are ignored on read and written as zero.
//!
//! Files from the Prophesee tooling carry two extra bytes (event type, event
//! size) after the header; they are skipped when present. The encoder writes
//! them too (type 0, size 8), since otherwise a first record whose timestamp
//! starts with the byte `%` would read back as a header line.

use super::{Event, EventStream, Polarity, SensorGeometry};
use crate::error::{Error, Result};

const RECORD_LEN: usize = 8;
const COORD_BITS: u32 = 14;
const COORD_MASK: u32 = (1 << COORD_BITS) - 1;
const POLARITY_BIT: u32 = 28;

/// Splits off header lines, returning them and the offset of the first record.
fn split_header(bytes: &[u8]) -> Result<(Vec<&str>, usize)> {
    let mut pos = 0;
    let mut lines = Vec::new();
    while pos < bytes.len() && bytes[pos] == b'%' {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|n| pos + n)
            .ok_or_else(|| Error::Format {
                offset: pos,
                message: "unterminated header line".into(),
            })?;
        let line = std::str::from_utf8(&bytes[pos + 1..end]).map_err(|_| Error::Format {
            offset: pos,
            message: "header line is not valid UTF-8".into(),
        })?;
        lines.push(line.trim());
        pos = end + 1;
    }
    if !lines.is_empty() {
        let rest = bytes.len() - pos;
        if rest % RECORD_LEN == 2 && bytes[pos + 1] as usize == RECORD_LEN {
            pos += 2;
        }
    }
    Ok((lines, pos))
}

/// Reads `Width`/`Height` entries from a DAT header, if present.
pub fn dat_header_geometry(bytes: &[u8]) -> Option<SensorGeometry> {
    let (lines, _) = split_header(bytes).ok()?;
    let mut width = None;
    let mut height = None;
    for line in lines {
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next()) {
            (Some("Width"), Some(v)) => width = v.parse().ok(),
            (Some("Height"), Some(v)) => height = v.parse().ok(),
            _ => {}
        }
    }
    SensorGeometry::new(width?, height?).ok()
}

pub fn decode_dat(bytes: &[u8], geometry: SensorGeometry) -> Result<EventStream> {
    let (_, start) = split_header(bytes)?;
    let body = &bytes[start..];
    let whole = body.len() / RECORD_LEN;
    if body.len() % RECORD_LEN != 0 {
        return Err(Error::Format {
            offset: start + whole * RECORD_LEN,
            message: format!(
                "truncated record ({} of {RECORD_LEN} bytes)",
                body.len() % RECORD_LEN
            ),
        });
    }
    let mut events = Vec::with_capacity(whole);
    for chunk in body.chunks_exact(RECORD_LEN) {
        let t = u32::from_le_bytes(chunk[0..4].try_into().unwrap());
        let data = u32::from_le_bytes(chunk[4..8].try_into().unwrap());
        events.push(Event {
            x: (data & COORD_MASK) as u16,
            y: ((data >> COORD_BITS) & COORD_MASK) as u16,
            t: t as u64,
            p: if (data >> POLARITY_BIT) & 1 == 1 {
                Polarity::On
            } else {
                Polarity::Off
            },
        });
    }
    EventStream::new(geometry, events)
}

pub fn encode_dat(stream: &EventStream) -> Result<Vec<u8>> {
    let g = stream.geometry();
    let header = format!("% Width {}\n% Height {}\n", g.width, g.height);
    let mut out = Vec::with_capacity(header.len() + 2 + stream.len() * RECORD_LEN);
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&[0, RECORD_LEN as u8]);
    for (i, e) in stream.events().iter().enumerate() {
        if e.x as u32 > COORD_MASK || e.y as u32 > COORD_MASK {
            return Err(Error::Encoding(format!(
                "event {i}: pixel ({}, {}) exceeds the 14-bit coordinate field",
                e.x, e.y
            )));
        }
        let t = u32::try_from(e.t).map_err(|_| {
            Error::Encoding(format!("event {i}: timestamp {} exceeds 32 bits", e.t))
        })?;
        let data = e.x as u32
            | (e.y as u32) << COORD_BITS
            | (e.p.index() as u32) << POLARITY_BIT;
        out.extend_from_slice(&t.to_le_bytes());
        out.extend_from_slice(&data.to_le_bytes());
    }
    Ok(out)
}
