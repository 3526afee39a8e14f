//! Marker codes (the byte following 0xFF).

pub const SOF0: u8 = 0xC0;
pub const DHT: u8 = 0xC4;
pub const RST0: u8 = 0xD0;
pub const RST7: u8 = 0xD7;
pub const SOI: u8 = 0xD8;
pub const EOI: u8 = 0xD9;
pub const SOS: u8 = 0xDA;
pub const DQT: u8 = 0xDB;
pub const DRI: u8 = 0xDD;
pub const APP0: u8 = 0xE0;
pub const APP15: u8 = 0xEF;
pub const COM: u8 = 0xFE;
pub const TEM: u8 = 0x01;

/// Markers that carry no length field.
pub fn is_standalone(m: u8) -> bool {
    m == TEM || (RST0..=EOI).contains(&m)
}
