//! Client message wire format.
//!
//! ```text
//! offset size field
//!      0    2 magic 0xC9 0x5D
//!      2    1 version (1)
//!      3    1 flags, bit 0 = rotation on, other bits zero
//!      4    4 d   (u32 LE, coordinates in the payload)
//!      8    4 k   (u32 LE)
//!     12    4 m   (u32 LE)
//!     16    4 p numerator   (u32 LE)
//!     20    4 p denominator (u32 LE)
//!     24    8 X^max (binary64 LE)
//!     32    1 rotation generator id (0 when rotation off)
//!     33    8 rotation seed (u64 LE, 0 when rotation off)
//!     41    4 payload length in bytes (u32 LE)
//!     45    - payload
//! ```
//!
//! The payload packs every coordinate in `ceil(log2(k + m))` bits, least
//! significant bit first, coordinates in index order; bit `i` of the stream is
//! bit `i % 8` of byte `i / 8`. Unused bits of the last byte must be zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::GENERATOR_CHACHA20;

pub const MAGIC: [u8; 2] = [0xC9, 0x5D];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 45;
pub const FLAG_ROTATE: u8 = 0x01;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported wire version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated message: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("unknown flag bits {0:#04x}")]
    UnknownFlags(u8),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("payload length {declared} does not match the {expected} bytes implied by d, k, m")]
    PayloadLengthMismatch { declared: usize, expected: usize },
    #[error("symbol {value} at index {index} exceeds maximum {max}")]
    SymbolOutOfRange { index: usize, value: u64, max: u64 },
    #[error("expected {expected} values, got {got}")]
    ValueCountMismatch { expected: usize, got: usize },
    #[error("nonzero padding bits in final payload byte")]
    NonZeroPadding,
}

/// A probability carried exactly as `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rational {
    pub num: u32,
    pub den: u32,
}

impl Rational {
    pub const HALF: Rational = Rational { num: 1, den: 2 };

    /// Requires `0 < num < den`.
    pub fn probability(num: u32, den: u32) -> Result<Self, WireError> {
        if num == 0 || num >= den {
            return Err(WireError::InvalidHeader(format!("p = {num}/{den} is not in (0, 1)")));
        }
        Ok(Self { num, den })
    }

    pub fn value(&self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }

    /// Closest fraction with denominator `2^20` strictly inside (0, 1).
    pub fn approximate(p: f64) -> Result<Self, WireError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(WireError::InvalidHeader(format!("p = {p} is not in (0, 1)")));
        }
        const DEN: u32 = 1 << 20;
        let num = ((p * f64::from(DEN)).round() as u32).clamp(1, DEN - 1);
        let g = gcd(num, DEN);
        Ok(Self {
            num: num / g,
            den: DEN / g,
        })
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl std::fmt::Display for Rational {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Protocol parameters shared by every client message of one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MessageHeader {
    pub rotate: bool,
    pub dim: u32,
    pub levels: u32,
    pub trials: u32,
    pub p: Rational,
    pub xmax: f64,
    pub generator: u8,
    pub seed: u64,
}

impl MessageHeader {
    pub fn validate(&self) -> Result<(), WireError> {
        if self.dim == 0 {
            return Err(WireError::InvalidHeader("d must be positive".into()));
        }
        if self.levels < 2 {
            return Err(WireError::InvalidHeader(format!("k = {} < 2", self.levels)));
        }
        Rational::probability(self.p.num, self.p.den)?;
        if !(self.xmax.is_finite() && self.xmax > 0.0) {
            return Err(WireError::InvalidHeader(format!(
                "X^max = {} is not positive",
                self.xmax
            )));
        }
        if self.rotate {
            if self.generator != GENERATOR_CHACHA20 {
                return Err(WireError::InvalidHeader(format!(
                    "unknown rotation generator {}",
                    self.generator
                )));
            }
        } else if self.generator != 0 || self.seed != 0 {
            return Err(WireError::InvalidHeader(
                "rotation generator and seed must be zero when rotation is off".into(),
            ));
        }
        Ok(())
    }

    /// Largest symbol a client can send, `k - 1 + m`.
    pub fn max_symbol(&self) -> u64 {
        u64::from(self.levels) - 1 + u64::from(self.trials)
    }

    pub fn bits_per_symbol(&self) -> u32 {
        bits_per_symbol(u64::from(self.levels), u64::from(self.trials))
    }

    pub fn payload_bytes(&self) -> usize {
        payload_bytes(self.dim as usize, u64::from(self.levels), u64::from(self.trials))
    }
}

/// `ceil(log2(k + m))`: bits for the `k + m` symbols `0..=k-1+m`.
pub fn bits_per_symbol(levels: u64, trials: u64) -> u32 {
    let symbols = levels + trials;
    if symbols <= 1 {
        0
    } else {
        u64::BITS - (symbols - 1).leading_zeros()
    }
}

/// Unrounded payload size, `d * ceil(log2(k + m))`.
pub fn payload_bits(dim: usize, levels: u64, trials: u64) -> u64 {
    dim as u64 * u64::from(bits_per_symbol(levels, trials))
}

pub fn payload_bytes(dim: usize, levels: u64, trials: u64) -> usize {
    payload_bits(dim, levels, trials).div_ceil(8) as usize
}

/// A decoded client message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub header: MessageHeader,
    pub values: Vec<u64>,
}

pub fn encode_message(values: &[u64], header: &MessageHeader) -> Result<Vec<u8>, WireError> {
    header.validate()?;
    if values.len() != header.dim as usize {
        return Err(WireError::ValueCountMismatch {
            expected: header.dim as usize,
            got: values.len(),
        });
    }
    let max = header.max_symbol();
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, &v)| v > max) {
        return Err(WireError::SymbolOutOfRange { index, value, max });
    }
    let payload_len = header.payload_bytes();
    let declared = u32::try_from(payload_len)
        .map_err(|_| WireError::InvalidHeader(format!("payload of {payload_len} bytes exceeds u32")))?;

    let mut out = Vec::with_capacity(HEADER_LEN + payload_len);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(if header.rotate { FLAG_ROTATE } else { 0 });
    out.extend_from_slice(&header.dim.to_le_bytes());
    out.extend_from_slice(&header.levels.to_le_bytes());
    out.extend_from_slice(&header.trials.to_le_bytes());
    out.extend_from_slice(&header.p.num.to_le_bytes());
    out.extend_from_slice(&header.p.den.to_le_bytes());
    out.extend_from_slice(&header.xmax.to_le_bytes());
    out.push(header.generator);
    out.extend_from_slice(&header.seed.to_le_bytes());
    out.extend_from_slice(&declared.to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_LEN);

    pack(values, header.bits_per_symbol(), &mut out);
    debug_assert_eq!(out.len(), HEADER_LEN + payload_len);
    Ok(out)
}

fn pack(values: &[u64], bits: u32, out: &mut Vec<u8>) {
    let mut acc: u128 = 0;
    let mut filled = 0u32;
    for &v in values {
        acc |= u128::from(v) << filled;
        filled += bits;
        while filled >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        out.push(acc as u8);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut buf = [0u8; N];
        buf.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        buf
    }

    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
}

pub fn decode_header(bytes: &[u8]) -> Result<(MessageHeader, usize), WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take::<2>();
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let version = r.u8();
    if version != VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    let flags = r.u8();
    if flags & !FLAG_ROTATE != 0 {
        return Err(WireError::UnknownFlags(flags));
    }
    let header = MessageHeader {
        rotate: flags & FLAG_ROTATE != 0,
        dim: r.u32(),
        levels: r.u32(),
        trials: r.u32(),
        p: Rational {
            num: r.u32(),
            den: r.u32(),
        },
        xmax: f64::from_le_bytes(r.take()),
        generator: r.u8(),
        seed: r.u64(),
    };
    let declared = r.u32() as usize;
    header.validate()?;
    let expected = header.payload_bytes();
    if declared != expected {
        return Err(WireError::PayloadLengthMismatch { declared, expected });
    }
    Ok((header, declared))
}

pub fn decode_message(bytes: &[u8]) -> Result<ClientMessage, WireError> {
    let (header, payload_len) = decode_header(bytes)?;
    let total = HEADER_LEN + payload_len;
    if bytes.len() < total {
        return Err(WireError::Truncated {
            needed: total,
            available: bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(WireError::TrailingBytes(bytes.len() - total));
    }
    let payload = &bytes[HEADER_LEN..];
    let bits = header.bits_per_symbol();
    let mask: u128 = (1u128 << bits) - 1;
    let max = header.max_symbol();

    let mut values = Vec::with_capacity(header.dim as usize);
    let mut acc: u128 = 0;
    let mut filled = 0u32;
    let mut bytes_iter = payload.iter();
    for index in 0..header.dim as usize {
        while filled < bits {
            // Length was checked against d * bits above.
            let b = *bytes_iter.next().expect("payload length verified");
            acc |= u128::from(b) << filled;
            filled += 8;
        }
        let value = (acc & mask) as u64;
        acc >>= bits;
        filled -= bits;
        if value > max {
            return Err(WireError::SymbolOutOfRange { index, value, max });
        }
        values.push(value);
    }
    if acc != 0 || bytes_iter.next().is_some() {
        return Err(WireError::NonZeroPadding);
    }
    Ok(ClientMessage { header, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(dim: u32, levels: u32, trials: u32) -> MessageHeader {
        MessageHeader {
            rotate: false,
            dim,
            levels,
            trials,
            p: Rational::HALF,
            xmax: 1.0,
            generator: 0,
            seed: 0,
        }
    }

    #[test]
    fn bit_widths() {
        assert_eq!(bits_per_symbol(4, 60), 6);
        assert_eq!(bits_per_symbol(2, 0), 1);
        assert_eq!(bits_per_symbol(3, 0), 2);
        assert_eq!(bits_per_symbol(4, 0), 2);
        assert_eq!(bits_per_symbol(5, 0), 3);
        assert_eq!(bits_per_symbol(u64::from(u32::MAX), u64::from(u32::MAX)), 33);
        assert_eq!(payload_bits(8, 4, 60), 48);
    }

    #[test]
    fn k4_m60_payload_is_six_bytes() {
        let h = header(8, 4, 60);
        let bytes = encode_message(&[0, 63, 1, 2, 3, 4, 5, 62], &h).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 6);
        assert_eq!(decode_message(&bytes).unwrap().values, vec![0, 63, 1, 2, 3, 4, 5, 62]);
    }

    #[test]
    fn one_bit_payload_is_raw_bits() {
        let h = header(8, 2, 0);
        let bytes = encode_message(&[1, 0, 1, 1, 0, 0, 0, 1], &h).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 1);
        assert_eq!(bytes[HEADER_LEN], 0b1000_1101);
    }

    #[test]
    fn header_layout_is_exact() {
        let h = MessageHeader {
            rotate: true,
            dim: 0x0102_0304,
            levels: 7,
            trials: 9,
            p: Rational { num: 3, den: 8 },
            xmax: 0.5,
            generator: GENERATOR_CHACHA20,
            seed: 0x1122_3344_5566_7788,
        };
        let mut bytes = Vec::new();
        // Build the header alone by encoding a 1-dim message and patching dim.
        let small = MessageHeader { dim: 1, ..h };
        bytes.extend(encode_message(&[3], &small).unwrap());
        assert_eq!(&bytes[0..4], &[0xC9, 0x5D, 1, 1]);
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &7u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &9u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &3u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &8u32.to_le_bytes());
        assert_eq!(&bytes[24..32], &0.5f64.to_le_bytes());
        assert_eq!(bytes[32], 1);
        assert_eq!(&bytes[33..41], &0x1122_3344_5566_7788u64.to_le_bytes());
        assert_eq!(&bytes[41..45], &1u32.to_le_bytes());
        assert_eq!(bytes[45], 3);
    }

    #[test]
    fn truncated_stream_rejected() {
        let bytes = encode_message(&[1, 2, 3, 4], &header(4, 4, 4)).unwrap();
        for cut in 0..bytes.len() {
            assert!(
                matches!(decode_message(&bytes[..cut]), Err(WireError::Truncated { .. })),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = encode_message(&[1, 2], &header(2, 4, 0)).unwrap();
        bytes[2] = 2;
        assert_eq!(decode_message(&bytes), Err(WireError::UnsupportedVersion(2)));
    }

    #[test]
    fn malformed_headers_rejected() {
        let good = encode_message(&[1, 2], &header(2, 4, 0)).unwrap();

        let mut b = good.clone();
        b[0] = 0;
        assert!(matches!(decode_message(&b), Err(WireError::BadMagic(_))));

        let mut b = good.clone();
        b[3] = 0x80;
        assert!(matches!(decode_message(&b), Err(WireError::UnknownFlags(_))));

        let mut b = good.clone();
        b[41] += 1;
        assert!(matches!(
            decode_message(&b),
            Err(WireError::PayloadLengthMismatch { .. })
        ));

        let mut b = good.clone();
        b.push(0);
        assert!(matches!(decode_message(&b), Err(WireError::TrailingBytes(1))));

        let mut b = good.clone();
        b[16..20].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_message(&b), Err(WireError::InvalidHeader(_))));

        // Rotation off but a seed present.
        let mut b = good;
        b[33] = 1;
        assert!(matches!(decode_message(&b), Err(WireError::InvalidHeader(_))));
    }

    #[test]
    fn out_of_range_symbols_rejected() {
        let h = header(3, 3, 2);
        assert!(matches!(
            encode_message(&[0, 5, 1], &h),
            Err(WireError::SymbolOutOfRange {
                index: 1,
                value: 5,
                max: 4
            })
        ));
        // k + m = 5 needs 3 bits; hand-craft the symbol 7.
        let mut bytes = encode_message(&[0, 4, 1], &h).unwrap();
        bytes[HEADER_LEN] |= 0b0000_0111;
        assert!(matches!(
            decode_message(&bytes),
            Err(WireError::SymbolOutOfRange { index: 0, value: 7, .. })
        ));
    }

    #[test]
    fn nonzero_padding_rejected() {
        let h = header(3, 2, 0);
        let mut bytes = encode_message(&[1, 0, 1], &h).unwrap();
        bytes[HEADER_LEN] |= 0b1000_0000;
        assert_eq!(decode_message(&bytes), Err(WireError::NonZeroPadding));
    }

    #[test]
    fn rational_helpers() {
        assert_eq!(Rational::approximate(0.5).unwrap(), Rational::HALF);
        assert!(Rational::probability(0, 2).is_err());
        assert!(Rational::probability(2, 2).is_err());
        assert!(Rational::approximate(1.0).is_err());
        let r = Rational::approximate(0.3).unwrap();
        assert!((r.value() - 0.3).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn encode_decode_bijection(
            levels in 2u32..5000,
            trials in 0u32..100_000,
            seed in any::<u64>(),
            raw in prop::collection::vec(any::<u64>(), 1..64),
            rotate in any::<bool>(),
        ) {
            let h = MessageHeader {
                rotate,
                generator: if rotate { GENERATOR_CHACHA20 } else { 0 },
                seed: if rotate { seed } else { 0 },
                ..header(raw.len() as u32, levels, trials)
            };
            let max = h.max_symbol();
            let values: Vec<u64> = raw.iter().map(|v| v % (max + 1)).collect();
            let bytes = encode_message(&values, &h).unwrap();
            prop_assert_eq!(bytes.len(), HEADER_LEN + h.payload_bytes());
            let msg = decode_message(&bytes).unwrap();
            prop_assert_eq!(msg.header, h);
            prop_assert_eq!(msg.values, values);
        }
    }
}
