//! Uniform mid-rise codeword quantizer on `[-1, 1]`.

use crate::bitpack::{push_bits, BitReader, BitStream};
use crate::error::{invalid, Error, Result};

/// Real-valued encoder output, every element in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codeword {
    pub values: Vec<f64>,
}

/// Packed codeword indices, `q` bits per element, MSB first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodewordBits {
    pub bits: BitStream,
    pub q: u32,
}

impl CodewordBits {
    pub fn length_bits(&self) -> usize {
        self.bits.len()
    }

    pub fn len_elements(&self) -> usize {
        self.bits.len() / self.q as usize
    }
}

fn check_q(q: u32) -> Result<()> {
    if (1..=16).contains(&q) {
        Ok(())
    } else {
        Err(invalid(format!("codeword bits q={q} outside 1..=16")))
    }
}

/// Index of `x` among `2^q` equal cells of `[-1, 1]`. Out-of-range inputs are
/// clamped to the end cells.
pub fn codeword_index(x: f64, q: u32) -> u32 {
    let levels = 1u32 << q;
    let k = ((x + 1.0) * 0.5 * f64::from(levels)).floor();
    if k.is_nan() || k <= 0.0 {
        0
    } else if k >= f64::from(levels - 1) {
        levels - 1
    } else {
        k as u32
    }
}

/// Midpoint of cell `index`.
pub fn codeword_level(index: u32, q: u32) -> f64 {
    (f64::from(index) + 0.5) * 2.0 / f64::from(1u32 << q) - 1.0
}

/// Quantizes a codeword. Returns the packed bits and the number of elements
/// that were outside `[-1, 1]` and got clipped.
pub fn quantize_codeword(c: &Codeword, q: u32) -> Result<(CodewordBits, usize)> {
    check_q(q)?;
    let mut bits = BitStream::with_capacity(c.values.len() * q as usize);
    let mut clipped = 0;
    for &x in &c.values {
        if !(-1.0..=1.0).contains(&x) {
            clipped += 1;
        }
        push_bits(&mut bits, codeword_index(x, q), q);
    }
    if clipped > 0 {
        log::warn!("{clipped} codeword elements outside [-1, 1] were clipped");
    }
    Ok((CodewordBits { bits, q }, clipped))
}

pub fn dequantize_codeword(bits: &CodewordBits, q: u32) -> Result<Codeword> {
    check_q(q)?;
    if bits.q != q {
        return Err(invalid(format!("bits were packed with q={}, asked for q={q}", bits.q)));
    }
    if !bits.length_bits().is_multiple_of(q as usize) {
        return Err(Error::Framing(format!(
            "{} bits is not a whole number of {q}-bit elements",
            bits.length_bits()
        )));
    }
    let mut r = BitReader::new(&bits.bits);
    let values = (0..bits.len_elements())
        .map(|_| r.read(q).map(|k| codeword_level(k, q)))
        .collect::<Result<_>>()?;
    Ok(Codeword { values })
}

/// `dequantize(quantize(x))` for one element.
pub fn quantize_value(x: f64, q: u32) -> f64 {
    codeword_level(codeword_index(x, q), q)
}
