//! 24-bit address-event words as carried on the hardware event FIFO.
//!
//! Bits 23..13 hold `x`, bits 12..2 hold `y`, bit 1 the polarity (1 = ON) and
//! bit 0 is reserved (zero). Timestamps are not part of the word; time is
//! carried by arrival order.

use super::{Event, Polarity, SensorGeometry};
use crate::error::{Error, Result};

const FIELD_BITS: u32 = 11;
const FIELD_MASK: u32 = (1 << FIELD_BITS) - 1;
const X_SHIFT: u32 = 13;
const Y_SHIFT: u32 = 2;
const POLARITY_SHIFT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Aer24Word(u32);

impl Aer24Word {
    pub fn from_raw(raw: u32) -> Result<Self> {
        if raw >> 24 != 0 {
            return Err(Error::Format {
                offset: 0,
                message: format!("AER word {raw:#x} wider than 24 bits"),
            });
        }
        Ok(Aer24Word(raw))
    }

    pub fn raw(self) -> u32 {
        self.0
    }

    pub fn to_bytes(self) -> [u8; 3] {
        let b = self.0.to_be_bytes();
        [b[1], b[2], b[3]]
    }
}

pub fn encode_aer24(e: &Event) -> Result<Aer24Word> {
    if e.x as u32 > FIELD_MASK || e.y as u32 > FIELD_MASK {
        return Err(Error::Encoding(format!(
            "pixel ({}, {}) exceeds the 11-bit AER address field",
            e.x, e.y
        )));
    }
    Ok(Aer24Word(
        (e.x as u32) << X_SHIFT | (e.y as u32) << Y_SHIFT | (e.p.index() as u32) << POLARITY_SHIFT,
    ))
}

pub fn decode_aer24(word: Aer24Word, geometry: SensorGeometry) -> Result<(u16, u16, Polarity)> {
    let raw = word.0;
    if raw & 1 != 0 {
        return Err(Error::Format {
            offset: 0,
            message: "reserved AER bit set".into(),
        });
    }
    let x = ((raw >> X_SHIFT) & FIELD_MASK) as u16;
    let y = ((raw >> Y_SHIFT) & FIELD_MASK) as u16;
    if !geometry.contains(x, y) {
        return Err(Error::Validation {
            index: 0,
            message: format!(
                "AER address ({x}, {y}) outside {}x{} sensor",
                geometry.width, geometry.height
            ),
        });
    }
    let p = if (raw >> POLARITY_SHIFT) & 1 == 1 {
        Polarity::On
    } else {
        Polarity::Off
    };
    Ok((x, y, p))
}
