//! MSB-first bit packing shared by the angle and codeword feedback payloads.

use bitvec::prelude::*;

use crate::error::{Error, Result};

/// Packed bit sequence, most significant bit first within each byte.
pub type BitStream = BitVec<u8, Msb0>;

/// Appends the low `width` bits of `value`, most significant first.
pub fn push_bits(stream: &mut BitStream, value: u32, width: u32) {
    debug_assert!(width <= 32);
    debug_assert!(width == 32 || value < (1u32 << width));
    for shift in (0..width).rev() {
        stream.push((value >> shift) & 1 == 1);
    }
}

/// Sequential reader over a [`BitStream`].
pub struct BitReader<'a> {
    bits: &'a BitSlice<u8, Msb0>,
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bits: &'a BitSlice<u8, Msb0>) -> Self {
        Self { bits, pos: 0 }
    }

    pub fn read(&mut self, width: u32) -> Result<u32> {
        let end = self.pos + width as usize;
        if end > self.bits.len() {
            return Err(Error::Framing(format!(
                "bitstream exhausted: need bits {}..{end}, have {}",
                self.pos,
                self.bits.len()
            )));
        }
        let v = self.bits[self.pos..end]
            .iter()
            .fold(0u32, |acc, b| (acc << 1) | u32::from(*b));
        self.pos = end;
        Ok(v)
    }

    pub fn remaining(&self) -> usize {
        self.bits.len() - self.pos
    }
}

/// Bytes with the trailing partial byte zero-padded.
pub fn to_padded_bytes(stream: &BitStream) -> Vec<u8> {
    let mut owned = stream.clone();
    owned.set_uninitialized(false);
    owned.into_vec()
}

/// Rebuilds a stream of exactly `len_bits` bits. Padding bits past
/// `len_bits` must be zero.
pub fn from_padded_bytes(bytes: &[u8], len_bits: usize) -> Result<BitStream> {
    let need = len_bits.div_ceil(8);
    if bytes.len() != need {
        return Err(Error::Framing(format!(
            "{len_bits} bits need {need} bytes, got {}",
            bytes.len()
        )));
    }
    let mut stream = BitStream::from_slice(bytes);
    if stream[len_bits..].any() {
        return Err(Error::Framing("non-zero padding bits".into()));
    }
    stream.truncate(len_bits);
    Ok(stream)
}
