//! Wire format for quantized uploads.
//!
//! ```text
//! offset  size  field
//!      0     8  d    (u64, little endian)
//!      8     8  l    (u64, little endian)
//!     16     8  B    (u64, little endian)
//!     24     8  lo   (f64, little endian)
//!     32     8  hi   (f64, little endian)
//!     40     ⌈B·d/8⌉  knob indices, B bits each, MSB first, zero padded
//! ```
//!
//! `lo` and `hi` are the interval offsets relative to the anchor, which the
//! receiver already knows.

use bitvec::prelude::*;

use super::{QuantizedVector, QuantizerState};

pub const HEADER_LEN: usize = 40;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("truncated message: need {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("message has {extra} unexpected trailing bytes")]
    Trailing { extra: usize },
    #[error("index {index} at position {position} is not below the level count {levels}")]
    IndexOutOfRange { position: usize, index: u64, levels: usize },
    #[error("header field `{field}` does not match the receiver's quantizer")]
    HeaderMismatch { field: &'static str },
}

pub fn payload_len(bits: u32, d: usize) -> usize {
    (bits as usize * d).div_ceil(8)
}

pub fn encode(q: &QuantizedVector) -> Result<Vec<u8>, CodecError> {
    let st = &q.state;
    let b = st.bits as usize;
    let mut out = Vec::with_capacity(HEADER_LEN + payload_len(st.bits, q.indices.len()));
    out.extend_from_slice(&(q.indices.len() as u64).to_le_bytes());
    out.extend_from_slice(&(st.levels as u64).to_le_bytes());
    out.extend_from_slice(&(st.bits as u64).to_le_bytes());
    out.extend_from_slice(&st.lo.to_le_bytes());
    out.extend_from_slice(&st.hi.to_le_bytes());

    let mut payload: BitVec<u8, Msb0> = BitVec::repeat(false, b * q.indices.len());
    for (position, &idx) in q.indices.iter().enumerate() {
        if idx as usize >= st.levels {
            return Err(CodecError::IndexOutOfRange { position, index: idx as u64, levels: st.levels });
        }
        payload[position * b..(position + 1) * b].store_be(idx as u64);
    }
    out.extend_from_slice(payload.as_raw_slice());
    Ok(out)
}

fn read_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte field"))
}

pub fn decode(bytes: &[u8], qs: &QuantizerState) -> Result<QuantizedVector, CodecError> {
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::Truncated { needed: HEADER_LEN, got: bytes.len() });
    }
    let d = read_u64(bytes, 0);
    let levels = read_u64(bytes, 8);
    let bits = read_u64(bytes, 16);
    let lo = f64::from_le_bytes(bytes[24..32].try_into().expect("8-byte field"));
    let hi = f64::from_le_bytes(bytes[32..40].try_into().expect("8-byte field"));
    if d != qs.dim() as u64 {
        return Err(CodecError::HeaderMismatch { field: "d" });
    }
    if levels != qs.levels as u64 {
        return Err(CodecError::HeaderMismatch { field: "l" });
    }
    if bits != qs.bits as u64 {
        return Err(CodecError::HeaderMismatch { field: "B" });
    }
    if lo.to_bits() != qs.lo.to_bits() {
        return Err(CodecError::HeaderMismatch { field: "lo" });
    }
    if hi.to_bits() != qs.hi.to_bits() {
        return Err(CodecError::HeaderMismatch { field: "hi" });
    }
    let d = d as usize;
    let b = bits as usize;
    let needed = HEADER_LEN + payload_len(qs.bits, d);
    if bytes.len() < needed {
        return Err(CodecError::Truncated { needed, got: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(CodecError::Trailing { extra: bytes.len() - needed });
    }
    let payload = bytes[HEADER_LEN..].view_bits::<Msb0>();
    let mut indices = Vec::with_capacity(d);
    for position in 0..d {
        let idx: u64 = payload[position * b..(position + 1) * b].load_be();
        if idx >= levels {
            return Err(CodecError::IndexOutOfRange { position, index: idx, levels: qs.levels });
        }
        indices.push(idx as u32);
    }
    Ok(QuantizedVector { indices, state: qs.clone() })
}
