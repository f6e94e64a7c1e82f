//! Synthetic frequency-selective MIMO-OFDM channels and beamforming images.
//!
//! Channels come from an exponential tapped-delay line with i.i.d. complex
//! Gaussian taps per antenna pair. The number of taps is the coherence knob:
//! one tap gives a frequency-flat channel, more taps decorrelate neighbouring
//! subcarriers.

pub mod dataset;

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{extract_beamforming, svd, ComplexMatrix};

pub use dataset::{
    build_dataset, build_dataset_from_source, ingest_csv, load_dataset, save_dataset,
    shuffled_order, split_sizes, test_packets, ChannelSource, Dataset, SplitSizes,
};

/// Tapped-delay-line channel model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModelCfg {
    /// AP transmit antennas.
    pub nt: usize,
    /// Station receive antennas.
    pub nr: usize,
    pub n_fft: usize,
    /// Valid subcarriers, taken with equal spacing from index 0.
    pub n_vs: usize,
    pub n_taps: usize,
    /// Power ratio between consecutive taps (tap `l` has power ∝ `decay^l`).
    pub decay: f64,
    pub seed: u64,
}

impl Default for ChannelModelCfg {
    fn default() -> Self {
        Self {
            nt: 3,
            nr: 2,
            n_fft: 64,
            n_vs: 28,
            n_taps: 8,
            decay: 0.3,
            seed: 0,
        }
    }
}

impl ChannelModelCfg {
    pub fn validate(&self) -> Result<()> {
        if self.nt == 0 || self.nr == 0 {
            return Err(invalid("antenna counts must be positive"));
        }
        if self.nt > crate::linalg::MAX_SVD_DIM || self.nr > crate::linalg::MAX_SVD_DIM {
            return Err(invalid("at most 8 antennas per side are supported"));
        }
        if self.n_vs == 0 || self.n_vs > self.n_fft {
            return Err(invalid(format!(
                "n_vs={} must be in 1..={}",
                self.n_vs, self.n_fft
            )));
        }
        if self.n_taps == 0 {
            return Err(invalid("n_taps must be at least 1"));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(invalid(format!("decay must be positive, got {}", self.decay)));
        }
        Ok(())
    }

    /// Normalized tap powers (sum to one).
    pub fn tap_powers(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.n_taps).map(|l| self.decay.powi(l as i32)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / total).collect()
    }
}

/// Equally spaced subcarrier indices starting at 0.
pub fn subcarrier_indices(n_fft: usize, n_vs: usize) -> Vec<usize> {
    let spacing = (n_fft / n_vs).max(1);
    (0..n_vs).map(|i| i * spacing).collect()
}

/// Per-subcarrier channel matrices of one packet.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Nr×Nt matrices, one per valid subcarrier.
    pub h: Vec<ComplexMatrix>,
    pub subcarrier_indices: Vec<usize>,
}

impl ChannelRealization {
    pub fn n_vs(&self) -> usize {
        self.h.len()
    }
}

/// Independent RNG stream for one packet.
pub(crate) fn packet_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn complex_gaussian(rng: &mut impl Rng, variance: f64) -> Complex64 {
    let sd = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * sd, im * sd)
}

/// Draws the channel of packet `packet_index`. Deterministic in `(cfg, packet_index)`.
pub fn gen_channel(cfg: &ChannelModelCfg, packet_index: u64) -> Result<ChannelRealization> {
    cfg.validate()?;
    let mut rng = packet_rng(cfg.seed, packet_index);
    let powers = cfg.tap_powers();
    // taps[l][(r, t)]
    let taps: Vec<Vec<Complex64>> = powers
        .iter()
        .map(|&p| (0..cfg.nr * cfg.nt).map(|_| complex_gaussian(&mut rng, p)).collect())
        .collect();

    let indices = subcarrier_indices(cfg.n_fft, cfg.n_vs);
    let h = indices
        .iter()
        .map(|&k| {
            let mut acc = vec![Complex64::new(0.0, 0.0); cfg.nr * cfg.nt];
            for (l, tap) in taps.iter().enumerate() {
                let w = Complex64::from_polar(1.0, -TAU * (k * l) as f64 / cfg.n_fft as f64);
                for (a, t) in acc.iter_mut().zip(tap) {
                    *a += t * w;
                }
            }
            ComplexMatrix::new(cfg.nr, cfg.nt, acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelRealization { h, subcarrier_indices: indices })
}

/// `y = H·x + n` with circular complex Gaussian noise of per-entry variance
/// `noise_power` (watts).
pub fn apply_channel(
    x: &ComplexMatrix,
    h: &ComplexMatrix,
    noise_power: f64,
    rng: &mut impl Rng,
) -> Result<ComplexMatrix> {
    if x.cols() != 1 || h.cols() != x.rows() {
        return Err(invalid(format!(
            "cannot send a {}x{} signal through a {}x{} channel",
            x.rows(),
            x.cols(),
            h.rows(),
            h.cols()
        )));
    }
    if !(noise_power >= 0.0) {
        return Err(invalid("noise power must be non-negative"));
    }
    let mut y = h.matmul(x)?;
    if noise_power > 0.0 {
        for r in 0..y.rows() {
            y[(r, 0)] += complex_gaussian(rng, noise_power);
        }
    }
    Ok(y)
}

/// Real-valued beamforming image: `(Nt·Ns) × Nvs` with a real and an
/// imaginary plane, stored planar and row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VImage {
    rows: usize,
    n_vs: usize,
    data: Vec<f32>,
    /// Normalization factor; `data * scale` gives the raw beamformer entries.
    pub scale: f64,
}

impl VImage {
    pub fn from_planar(rows: usize, n_vs: usize, data: Vec<f32>, scale: f64) -> Result<Self> {
        if rows == 0 || n_vs == 0 || data.len() != 2 * rows * n_vs {
            return Err(invalid(format!(
                "image {rows}x{n_vs}x2 cannot hold {} values",
                data.len()
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!("image scale must be positive, got {scale}")));
        }
        Ok(Self { rows, n_vs, data, scale })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn n_vs(&self) -> usize {
        self.n_vs
    }

    pub fn as_planar(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, plane: usize, row: usize, col: usize) -> f32 {
        self.data[(plane * self.rows + row) * self.n_vs + col]
    }

    /// De-normalized per-subcarrier beamformers, Nt×Ns each.
    pub fn to_beamformers(&self, nt: usize, ns: usize) -> Result<Vec<ComplexMatrix>> {
        if nt * ns != self.rows {
            return Err(invalid(format!(
                "image with {} rows cannot hold {nt}x{ns} beamformers",
                self.rows
            )));
        }
        (0..self.n_vs)
            .map(|k| {
                let mut m = ComplexMatrix::zeros(nt, ns);
                for s in 0..ns {
                    for t in 0..nt {
                        let r = s * nt + t;
                        m[(t, s)] = Complex64::new(
                            f64::from(self.get(0, r, k)) * self.scale,
                            f64::from(self.get(1, r, k)) * self.scale,
                        );
                    }
                }
                Ok(m)
            })
            .collect()
    }
}

/// Phase-normalized beamformers (first `ns` right singular vectors) per subcarrier.
pub fn beamformers(realization: &ChannelRealization, ns: usize) -> Result<Vec<ComplexMatrix>> {
    let first = realization.h.first().ok_or_else(|| invalid("empty channel realization"))?;
    let (nr, nt) = first.shape();
    if ns == 0 || ns > nr.min(nt) {
        return Err(invalid(format!("ns={ns} exceeds min(nr={nr}, nt={nt})")));
    }
    realization
        .h
        .iter()
        .map(|h| extract_beamforming(&svd(h)?, ns))
        .collect()
}

/// Largest absolute real or imaginary part over a beamformer sequence.
pub fn max_abs_entry(v_seq: &[ComplexMatrix]) -> f64 {
    v_seq
        .iter()
        .flat_map(|m| m.as_slice().iter())
        .map(|z| z.re.abs().max(z.im.abs()))
        .fold(0.0, f64::max)
}

/// Packs beamformers into a normalized image. Column `k` holds the column-major
/// vectorization of subcarrier `k`'s Nt×Ns matrix. Entries that land outside
/// `[-1, 1]` are clipped; the number clipped is returned alongside the image.
pub fn image_from_beamformers(v_seq: &[ComplexMatrix], scale: f64) -> Result<(VImage, usize)> {
    let first = v_seq.first().ok_or_else(|| invalid("empty beamformer sequence"))?;
    let (nt, ns) = first.shape();
    if v_seq.iter().any(|m| m.shape() != (nt, ns)) {
        return Err(invalid("beamformers have inconsistent shapes"));
    }
    let rows = nt * ns;
    let n_vs = v_seq.len();
    let mut data = vec![0f32; 2 * rows * n_vs];
    let mut clipped = 0;
    for (k, m) in v_seq.iter().enumerate() {
        for s in 0..ns {
            for t in 0..nt {
                let r = s * nt + t;
                let z = m[(t, s)] / scale;
                for (plane, x) in [z.re, z.im].into_iter().enumerate() {
                    let y = if x.abs() > 1.0 {
                        clipped += 1;
                        x.clamp(-1.0, 1.0)
                    } else {
                        x
                    };
                    data[(plane * rows + r) * n_vs + k] = y as f32;
                }
            }
        }
    }
    Ok((VImage::from_planar(rows, n_vs, data, scale)?, clipped))
}

/// Beamforming image of one packet. With `scale == None` the image is
/// normalized by its own largest absolute entry.
pub fn build_vimage(
    realization: &ChannelRealization,
    ns: usize,
    scale: Option<f64>,
) -> Result<(VImage, usize)> {
    let v_seq = beamformers(realization, ns)?;
    let scale = match scale {
        Some(s) => s,
        None => {
            let m = max_abs_entry(&v_seq);
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    image_from_beamformers(&v_seq, scale)
}
