//! Dataset assembly, persistence and CSV ingestion.
//!
//! File layout (all little-endian):
//!
//! ```text
//! "CSIDS1\0"                                   7 bytes
//! nt, nr, ns, n_fft, n_vs, n_samples           6 × u32
//! scale                                        f64
//! samples                                      n_samples × (2 · nt·ns · n_vs) × f32
//!     each sample: real plane, then imaginary plane, row-major (nt·ns) × n_vs
//! train, validation, test sizes                3 × u32
//! ```
//!
//! Samples are stored in split order: the training block first, then
//! validation, then test.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{
    beamformers, gen_channel, image_from_beamformers, max_abs_entry, packet_rng,
    ChannelModelCfg, ChannelRealization, VImage,
};
use crate::binio::ByteCursor;
use crate::error::{format_err, invalid, Error, Result};
use crate::linalg::ComplexMatrix;

pub const DATASET_MAGIC: &[u8; 7] = b"CSIDS1\0";

/// RNG stream reserved for the dataset shuffle; packet streams count up from 0.
const SHUFFLE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }

    pub fn train_range(&self) -> std::ops::Range<usize> {
        0..self.train
    }

    pub fn validation_range(&self) -> std::ops::Range<usize> {
        self.train..self.train + self.validation
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.train + self.validation..self.total()
    }
}

/// 8:1:1 split. Validation and test sizes are rounded to nearest; training
/// takes the remainder.
pub fn split_sizes(n_samples: usize) -> SplitSizes {
    let tenth = (n_samples as f64 / 10.0).round() as usize;
    SplitSizes {
        train: n_samples - 2 * tenth,
        validation: tenth,
        test: tenth,
    }
}

/// Packet indices in dataset order for a given seed.
pub fn shuffled_order(n_samples: usize, seed: u64) -> Vec<u64> {
    let mut order: Vec<u64> = (0..n_samples as u64).collect();
    order.shuffle(&mut packet_rng(seed, SHUFFLE_STREAM));
    order
}

/// Packet indices of the test split, in dataset order.
pub fn test_packets(n_samples: usize, seed: u64) -> Vec<u64> {
    let split = split_sizes(n_samples);
    shuffled_order(n_samples, seed)[split.test_range()].to_vec()
}

/// Where packet channels come from.
#[derive(Debug, Clone)]
pub enum ChannelSource {
    Synthetic(ChannelModelCfg),
    /// Externally captured CSI, one realization per packet.
    Captured {
        realizations: Vec<ChannelRealization>,
        n_fft: usize,
    },
}

impl ChannelSource {
    pub fn realization(&self, packet: u64) -> Result<ChannelRealization> {
        match self {
            ChannelSource::Synthetic(cfg) => gen_channel(cfg, packet),
            ChannelSource::Captured { realizations, .. } => realizations
                .get(packet as usize)
                .cloned()
                .ok_or_else(|| invalid(format!("captured source has no packet {packet}"))),
        }
    }

    /// Number of available packets, `None` when unbounded.
    pub fn len(&self) -> Option<usize> {
        match self {
            ChannelSource::Synthetic(_) => None,
            ChannelSource::Captured { realizations, .. } => Some(realizations.len()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    /// (nt, nr, n_fft, n_vs)
    pub fn dims(&self) -> Result<(usize, usize, usize, usize)> {
        match self {
            ChannelSource::Synthetic(c) => Ok((c.nt, c.nr, c.n_fft, c.n_vs)),
            ChannelSource::Captured { realizations, n_fft } => {
                let first = realizations
                    .first()
                    .ok_or_else(|| invalid("captured source is empty"))?;
                let (nr, nt) = first.h[0].shape();
                Ok((nt, nr, *n_fft, first.n_vs()))
            }
        }
    }
}

/// Normalized beamforming images split 8:1:1, sharing one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub nt: usize,
    pub nr: usize,
    pub ns: usize,
    pub n_fft: usize,
    pub n_vs: usize,
    pub scale: f64,
    pub images: Vec<VImage>,
    pub split: SplitSizes,
}

impl Dataset {
    pub fn train(&self) -> &[VImage] {
        &self.images[self.split.train_range()]
    }

    pub fn validation(&self) -> &[VImage] {
        &self.images[self.split.validation_range()]
    }

    pub fn test(&self) -> &[VImage] {
        &self.images[self.split.test_range()]
    }

    pub fn sample_bytes(&self) -> usize {
        2 * self.nt * self.ns * self.n_vs * 4
    }
}

/// Synthetic dataset; see [`build_dataset_from_source`].
pub fn build_dataset(cfg: &ChannelModelCfg, n_samples: usize, ns: usize) -> Result<(Dataset, usize)> {
    cfg.validate()?;
    build_dataset_from_source(&ChannelSource::Synthetic(cfg.clone()), n_samples, ns, cfg.seed)
}

/// Generates `n_samples` packets, shuffles them with `seed`, splits 8:1:1 and
/// normalizes every image by the largest absolute entry of the training
/// split. Returns the dataset and the number of clipped entries outside the
/// training split.
pub fn build_dataset_from_source(
    source: &ChannelSource,
    n_samples: usize,
    ns: usize,
    seed: u64,
) -> Result<(Dataset, usize)> {
    if n_samples < 10 {
        return Err(invalid(format!("need at least 10 samples, got {n_samples}")));
    }
    if let Some(avail) = source.len() {
        if avail < n_samples {
            return Err(invalid(format!("source holds {avail} packets, {n_samples} requested")));
        }
    }
    let (nt, nr, n_fft, n_vs) = source.dims()?;
    if ns == 0 || ns > nr.min(nt) {
        return Err(invalid(format!("ns={ns} exceeds min(nr={nr}, nt={nt})")));
    }
    let split = split_sizes(n_samples);
    let order = shuffled_order(n_samples, seed);

    let raw: Vec<Vec<ComplexMatrix>> = order
        .par_iter()
        .map(|&p| beamformers(&source.realization(p)?, ns))
        .collect::<Result<_>>()?;

    let scale = raw[split.train_range()]
        .iter()
        .map(|v| max_abs_entry(v))
        .fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };

    let built: Vec<(VImage, usize)> = raw
        .par_iter()
        .map(|v| image_from_beamformers(v, scale))
        .collect::<Result<_>>()?;
    let clipped = built.iter().map(|(_, c)| c).sum();
    if clipped > 0 {
        log::warn!("{clipped} image entries outside [-1, 1] were clipped");
    }
    let images = built.into_iter().map(|(img, _)| img).collect();
    Ok((
        Dataset { nt, nr, ns, n_fft, n_vs, scale, images, split },
        clipped,
    ))
}

fn u32_field(value: usize, name: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| invalid(format!("{name}={value} does not fit in u32")))
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(d, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset(d: &Dataset, w: &mut impl Write) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    for (v, name) in [
        (d.nt, "nt"),
        (d.nr, "nr"),
        (d.ns, "ns"),
        (d.n_fft, "n_fft"),
        (d.n_vs, "n_vs"),
        (d.images.len(), "n_samples"),
    ] {
        w.write_all(&u32_field(v, name)?.to_le_bytes())?;
    }
    w.write_all(&d.scale.to_le_bytes())?;
    let expect = 2 * d.nt * d.ns * d.n_vs;
    for img in &d.images {
        if img.as_planar().len() != expect {
            return Err(invalid("image shape disagrees with dataset header"));
        }
        for x in img.as_planar() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    for v in [d.split.train, d.split.validation, d.split.test] {
        w.write_all(&u32_field(v, "split")?.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    parse_dataset(&bytes)
}

pub fn parse_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut c = ByteCursor::new(bytes);
    if c.take(DATASET_MAGIC.len(), "magic")? != DATASET_MAGIC {
        return Err(format_err(0, "bad magic, not a CSIDS1 dataset"));
    }
    let mut dims = [0usize; 6];
    for (d, name) in dims.iter_mut().zip(["nt", "nr", "ns", "n_fft", "n_vs", "n_samples"]) {
        *d = c.u32(name)? as usize;
    }
    let [nt, nr, ns, n_fft, n_vs, n_samples] = dims;
    if nt == 0 || nr == 0 || ns == 0 || n_vs == 0 || ns > nt.min(nr) {
        return Err(format_err(7, format!("inconsistent header nt={nt} nr={nr} ns={ns} n_vs={n_vs}")));
    }
    let scale_at = c.pos as u64;
    let scale = c.f64("scale")?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(format_err(scale_at, format!("invalid scale {scale}")));
    }
    let per = 2 * nt * ns * n_vs;
    let body = per
        .checked_mul(4)
        .and_then(|b| b.checked_mul(n_samples))
        .ok_or_else(|| format_err(7, "sample count overflows"))?;
    let expected_len = c.pos + body + 12;
    if bytes.len() != expected_len {
        return Err(format_err(
            bytes.len().min(expected_len) as u64,
            format!("file is {} bytes, header implies {expected_len}", bytes.len()),
        ));
    }
    let mut images = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let raw = c.take(per * 4, "sample")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        images.push(
            VImage::from_planar(nt * ns, n_vs, data, scale)
                .map_err(|e| format_err(c.pos as u64, format!("sample {i}: {e}")))?,
        );
    }
    let split_at = c.pos as u64;
    let split = SplitSizes {
        train: c.u32("train size")? as usize,
        validation: c.u32("validation size")? as usize,
        test: c.u32("test size")? as usize,
    };
    if split.total() != n_samples {
        return Err(format_err(split_at, format!("split sizes sum to {}, not {n_samples}", split.total())));
    }
    Ok(Dataset { nt, nr, ns, n_fft, n_vs, scale, images, split })
}

/// Reads captured CSI: one CSV row per (packet, subcarrier), `n_vs` consecutive
/// rows per packet, `2·nr·nt` columns holding `re, im` pairs of `H[r][t]` in
/// row-major order. A non-numeric first row is treated as a header.
pub fn ingest_csv(path: impl AsRef<Path>, nt: usize, nr: usize, n_vs: usize) -> Result<Vec<ChannelRealization>> {
    let file = File::open(path)?;
    ingest_csv_reader(file, nt, nr, n_vs)
}

pub fn ingest_csv_reader(r: impl Read, nt: usize, nr: usize, n_vs: usize) -> Result<Vec<ChannelRealization>> {
    if nt == 0 || nr == 0 || n_vs == 0 {
        return Err(invalid("nt, nr and n_vs must be positive"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let width = 2 * nr * nt;
    let mut rows: Vec<ComplexMatrix> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if line == 0 => continue,
            Err(e) => return Err(invalid(format!("CSV line {}: {e}", line + 1))),
        };
        if values.len() != width {
            return Err(invalid(format!(
                "CSV line {}: expected {width} columns, got {}",
                line + 1,
                values.len()
            )));
        }
        let entries = values.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        rows.push(
            ComplexMatrix::new(nr, nt, entries)
                .map_err(|e| invalid(format!("CSV line {}: {e}", line + 1)))?,
        );
    }
    if !rows.len().is_multiple_of(n_vs) {
        return Err(Error::Framing(format!(
            "{} CSV rows is not a whole number of {n_vs}-subcarrier packets",
            rows.len()
        )));
    }
    Ok(rows
        .chunks_exact(n_vs)
        .map(|h| ChannelRealization { h: h.to_vec(), subcarrier_indices: (0..n_vs).collect() })
        .collect())
}
