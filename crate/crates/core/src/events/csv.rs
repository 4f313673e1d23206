//! Plain-text event lists, one `t,x,y,p` line per event. The encoder writes
//! no header; the decoder skips a leading `t,x,y,p` header line if present.

use super::{Event, EventStream, Polarity, SensorGeometry};
use crate::error::{Error, Result};

pub fn decode_csv(text: &str, geometry: SensorGeometry) -> Result<EventStream> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if events.is_empty() && is_header(line) {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let t = fields[0]
            .parse::<u64>()
            .map_err(|e| err(format!("timestamp {:?}: {e}", fields[0])))?;
        let x = fields[1]
            .parse::<u16>()
            .map_err(|e| err(format!("x {:?}: {e}", fields[1])))?;
        let y = fields[2]
            .parse::<u16>()
            .map_err(|e| err(format!("y {:?}: {e}", fields[2])))?;
        let p = fields[3]
            .parse::<i8>()
            .ok()
            .and_then(Polarity::from_sign)
            .ok_or_else(|| err(format!("invalid polarity {:?}", fields[3])))?;
        events.push(Event { x, y, t, p });
    }
    EventStream::new(geometry, events)
}

fn is_header(line: &str) -> bool {
    let fields: Vec<String> = line.split(',').map(|f| f.trim().to_ascii_lowercase()).collect();
    fields == ["t", "x", "y", "p"]
}

pub fn encode_csv(stream: &EventStream) -> String {
    let mut out = String::with_capacity(stream.len() * 16);
    for e in stream.events() {
        out.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.p.sign()));
    }
    out
}
