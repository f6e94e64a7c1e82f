//! Compressed beamforming report (CBR) framing and sounding airtime.
//!
//! Frame layout, little-endian:
//!
//! ```text
//! scheme        u8    0 = Type 0 angles, 1 = Type 1 angles, 2 = EFNet codeword
//! nt            u8
//! ns            u8
//! ng            u8    subcarrier stride for angle reports, q for codewords
//! n_vs          u16
//! payload_bits  u32
//! payload       ceil(payload_bits / 8) bytes, MSB first, zero padded
//! ```
//!
//! A dump file is a sequence of frames, each preceded by its byte length as u32.

use std::io::Write;

use crate::binio::ByteCursor;
use crate::bitpack::{from_padded_bytes, to_padded_bytes, BitStream};
use crate::efnet::CodewordBits;
use crate::error::{Error, Result};
use crate::eval::ThroughputCfg;
use crate::givens::{AngleBits, QuantKind, QuantScheme};

pub const HEADER_BYTES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbrScheme {
    Angles(QuantKind),
    Efnet,
}

impl CbrScheme {
    fn id(self) -> u8 {
        match self {
            CbrScheme::Angles(QuantKind::Type0) => 0,
            CbrScheme::Angles(QuantKind::Type1) => 1,
            CbrScheme::Efnet => 2,
        }
    }

    fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(CbrScheme::Angles(QuantKind::Type0)),
            1 => Ok(CbrScheme::Angles(QuantKind::Type1)),
            2 => Ok(CbrScheme::Efnet),
            _ => Err(Error::Framing(format!("unknown scheme id {id}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CbrHeader {
    pub scheme: CbrScheme,
    pub nt: u8,
    pub ns: u8,
    /// Grouping stride for angle reports, bits per element for codewords.
    pub ng: u8,
    pub n_vs: u16,
    pub payload_bits: u32,
}

impl CbrHeader {
    /// Checks `payload_bits` against the scheme's size formula.
    pub fn validate(&self) -> Result<()> {
        let (nt, ns, ng, n_vs) = (self.nt as usize, self.ns as usize, self.ng as usize, self.n_vs as usize);
        if nt == 0 || ns == 0 || ns > nt || ng == 0 || n_vs == 0 {
            return Err(Error::Consistency(format!(
                "header fields nt={nt} ns={ns} ng={ng} n_vs={n_vs} are not a valid configuration"
            )));
        }
        match self.scheme {
            CbrScheme::Angles(kind) => {
                if nt < 2 {
                    return Err(Error::Consistency("angle reports need nt >= 2".into()));
                }
                let expect = n_vs.div_ceil(ng) * QuantScheme::new(kind).bits_per_subcarrier(nt, ns);
                if self.payload_bits as usize != expect {
                    return Err(Error::Consistency(format!(
                        "payload has {} bits, the angle report for this header has {expect}",
                        self.payload_bits
                    )));
                }
            }
            CbrScheme::Efnet => {
                if ng > 16 || self.payload_bits == 0 || !(self.payload_bits as usize).is_multiple_of(ng) {
                    return Err(Error::Consistency(format!(
                        "{} codeword bits are not a positive multiple of q={ng}",
                        self.payload_bits
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn frame_bytes(&self) -> usize {
        HEADER_BYTES + (self.payload_bits as usize).div_ceil(8)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CbrFrame {
    pub header: CbrHeader,
    pub payload: BitStream,
}

fn to_u8(v: usize, what: &str) -> Result<u8> {
    u8::try_from(v).map_err(|_| Error::Consistency(format!("{what}={v} does not fit in a u8 header field")))
}

impl CbrFrame {
    /// Angle report for `n_vs` subcarriers fed back with stride `ng`.
    pub fn standard(kind: QuantKind, nt: usize, ns: usize, n_vs: usize, ng: usize, bits: &AngleBits) -> Result<Self> {
        Self::build(CbrScheme::Angles(kind), nt, ns, n_vs, ng, bits.bits.clone())
    }

    pub fn efnet(nt: usize, ns: usize, n_vs: usize, bits: &CodewordBits) -> Result<Self> {
        Self::build(CbrScheme::Efnet, nt, ns, n_vs, bits.q as usize, bits.bits.clone())
    }

    fn build(scheme: CbrScheme, nt: usize, ns: usize, n_vs: usize, ng: usize, payload: BitStream) -> Result<Self> {
        let header = CbrHeader {
            scheme,
            nt: to_u8(nt, "nt")?,
            ns: to_u8(ns, "ns")?,
            ng: to_u8(ng, "ng")?,
            n_vs: u16::try_from(n_vs).map_err(|_| Error::Consistency(format!("n_vs={n_vs} does not fit in u16")))?,
            payload_bits: u32::try_from(payload.len())
                .map_err(|_| Error::Consistency("payload longer than u32::MAX bits".into()))?,
        };
        header.validate()?;
        Ok(Self { header, payload })
    }

    pub fn angle_bits(&self) -> Result<AngleBits> {
        match self.header.scheme {
            CbrScheme::Angles(_) => Ok(AngleBits { bits: self.payload.clone() }),
            CbrScheme::Efnet => Err(Error::Consistency("frame carries a codeword, not angles".into())),
        }
    }

    pub fn codeword_bits(&self) -> Result<CodewordBits> {
        match self.header.scheme {
            CbrScheme::Efnet => Ok(CodewordBits { bits: self.payload.clone(), q: u32::from(self.header.ng) }),
            CbrScheme::Angles(_) => Err(Error::Consistency("frame carries angles, not a codeword".into())),
        }
    }
}

pub fn pack_cbr(frame: &CbrFrame) -> Result<Vec<u8>> {
    let h = &frame.header;
    if frame.payload.len() != h.payload_bits as usize {
        return Err(Error::Consistency(format!(
            "header declares {} payload bits, frame holds {}",
            h.payload_bits,
            frame.payload.len()
        )));
    }
    h.validate()?;
    let mut out = Vec::with_capacity(h.frame_bytes());
    out.extend_from_slice(&[h.scheme.id(), h.nt, h.ns, h.ng]);
    out.extend_from_slice(&h.n_vs.to_le_bytes());
    out.extend_from_slice(&h.payload_bits.to_le_bytes());
    out.extend_from_slice(&to_padded_bytes(&frame.payload));
    Ok(out)
}

pub fn unpack_cbr(bytes: &[u8]) -> Result<CbrFrame> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Framing(format!("frame of {} bytes is shorter than the header", bytes.len())));
    }
    let mut c = ByteCursor::new(bytes);
    let scheme = CbrScheme::from_id(c.u8("scheme")?)?;
    let header = CbrHeader {
        scheme,
        nt: c.u8("nt")?,
        ns: c.u8("ns")?,
        ng: c.u8("ng")?,
        n_vs: c.u16("n_vs")?,
        payload_bits: c.u32("payload_bits")?,
    };
    if bytes.len() != header.frame_bytes() {
        return Err(Error::Framing(format!(
            "frame is {} bytes, header implies {}",
            bytes.len(),
            header.frame_bytes()
        )));
    }
    header.validate()?;
    let payload = from_padded_bytes(&bytes[HEADER_BYTES..], header.payload_bits as usize)?;
    Ok(CbrFrame { header, payload })
}

pub fn write_cbr_dump(frames: &[CbrFrame], mut w: impl Write) -> Result<()> {
    for f in frames {
        let bytes = pack_cbr(f)?;
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cbr_dump(bytes: &[u8]) -> Result<Vec<CbrFrame>> {
    let mut c = ByteCursor::new(bytes);
    let mut frames = Vec::new();
    while c.remaining() > 0 {
        let at = c.pos;
        let len = c.u32("frame length")? as usize;
        let body = c.take(len, "frame")?;
        frames.push(unpack_cbr(body).map_err(|e| Error::Framing(format!("frame at byte {at}: {e}")))?);
    }
    Ok(frames)
}

/// Airtime of one sounding exchange.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoundingTiming {
    /// NDPA + NDP + ACK + interframe spacing, seconds.
    pub t_fixed: f64,
    /// CBR payload at the BPSK feedback rate, seconds.
    pub cbr_seconds: f64,
}

impl SoundingTiming {
    pub fn total(&self) -> f64 {
        self.t_fixed + self.cbr_seconds
    }
}

pub fn sequence_overhead(payload_bits: usize, cfg: &ThroughputCfg) -> Result<SoundingTiming> {
    cfg.validate()?;
    Ok(SoundingTiming { t_fixed: cfg.t_fixed, cbr_seconds: payload_bits as f64 / cfg.bpsk_rate() })
}

pub fn frame_overhead(frame: &CbrFrame, cfg: &ThroughputCfg) -> Result<SoundingTiming> {
    sequence_overhead(frame.header.payload_bits as usize, cfg)
}
