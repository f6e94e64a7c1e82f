//! 802.11 compressed beamforming: Givens-rotation angle codec, Type 0/1 angle
//! quantization and subcarrier grouping.
//!
//! A phase-normalized Nt×Ns beamforming matrix is factored as
//!
//! ```text
//! V = Π_{i=1}^{min(Ns,Nt-1)} ( D_i(φ_{i..Nt-1,i}) · Π_{l=i+1}^{Nt} G_{l,i}ᵀ(ψ_{l,i}) ) · I_{Nt×Ns}
//! ```
//!
//! where `D_i` puts phases `e^{jφ}` on diagonal entries `i..Nt-1` and `G_{l,i}`
//! is a real plane rotation of rows `i` and `l`. Feedback carries the φ angles
//! (range `[0, 2π)`) and ψ angles (range `[0, π/2]`).

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;

use crate::bitpack::{push_bits, BitReader, BitStream};
use crate::error::{invalid, Error, Result};
use crate::linalg::ComplexMatrix;

/// Number of φ angles (equal to the number of ψ angles) for an Nt×Ns matrix.
pub fn angle_count(nt: usize, ns: usize) -> usize {
    (1..=ns.min(nt.saturating_sub(1))).map(|i| nt - i).sum()
}

/// Angle set of one subcarrier.
///
/// Both lists are ordered by decomposition step `i`; within step `i`, φ runs
/// over rows `i..Nt-1` and ψ over rows `i+1..Nt` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct GivensAngles {
    pub nt: usize,
    pub ns: usize,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl GivensAngles {
    fn check_counts(&self) -> Result<()> {
        if self.nt < 1 || self.ns < 1 || self.ns > self.nt {
            return Err(invalid(format!("invalid dimensions nt={} ns={}", self.nt, self.ns)));
        }
        let n = angle_count(self.nt, self.ns);
        if self.phi.len() != n || self.psi.len() != n {
            return Err(invalid(format!(
                "nt={} ns={} needs {n} φ and {n} ψ angles, got {} and {}",
                self.nt,
                self.ns,
                self.phi.len(),
                self.psi.len()
            )));
        }
        Ok(())
    }

    /// True when every φ is in `[0, 2π)` and every ψ in `[0, π/2]`.
    pub fn in_range(&self) -> bool {
        self.phi.iter().all(|&p| (0.0..TAU).contains(&p))
            && self.psi.iter().all(|&p| (0.0..=FRAC_PI_2).contains(&p))
    }

    /// Angles of decomposition step `step` (0-based): (φ slice, ψ slice).
    fn step_ranges(nt: usize, ns: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
        let steps = ns.min(nt.saturating_sub(1));
        let mut start = 0;
        (0..steps).map(move |i| {
            let len = nt - 1 - i;
            let r = start..start + len;
            start += len;
            r
        })
    }
}

/// Tolerance on the phase-normalization precondition of [`givens_decompose`].
const NORMALIZATION_TOL: f64 = 1e-8;

/// Factors a phase-normalized beamforming matrix into Givens angles.
pub fn givens_decompose(v: &ComplexMatrix) -> Result<GivensAngles> {
    let (nt, ns) = v.shape();
    if ns > nt {
        return Err(invalid(format!("beamforming matrix {nt}x{ns} has more streams than antennas")));
    }
    for c in 0..ns {
        let last = v[(nt - 1, c)];
        if last.im.abs() > NORMALIZATION_TOL || last.re < -NORMALIZATION_TOL {
            return Err(Error::Precondition(format!(
                "column {c} last-row entry {last} is not real non-negative"
            )));
        }
        let norm = v.column_norm(c);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Precondition(format!("column {c} has norm {norm}, expected 1")));
        }
    }

    let mut w = v.clone();
    let mut phi = Vec::with_capacity(angle_count(nt, ns));
    let mut psi = Vec::with_capacity(angle_count(nt, ns));
    for i in 0..ns.min(nt - 1) {
        for l in i..nt - 1 {
            let angle = w[(l, i)].arg().rem_euclid(TAU);
            // rem_euclid can round up to exactly 2π for tiny negative arguments.
            let angle = if angle >= TAU { 0.0 } else { angle };
            phi.push(angle);
            let rot = Complex64::from_polar(1.0, -angle);
            for c in 0..ns {
                w[(l, c)] *= rot;
            }
        }
        for l in i + 1..nt {
            let x = w[(i, i)].re.max(0.0);
            let y = w[(l, i)].re.max(0.0);
            let angle = y.atan2(x);
            psi.push(angle);
            let (s, c) = angle.sin_cos();
            for col in 0..ns {
                let wi = w[(i, col)];
                let wl = w[(l, col)];
                w[(i, col)] = wi * c + wl * s;
                w[(l, col)] = wl * c - wi * s;
            }
        }
    }
    Ok(GivensAngles { nt, ns, phi, psi })
}

/// Rebuilds the Nt×Ns beamforming matrix from its angles.
pub fn givens_reconstruct(angles: &GivensAngles) -> Result<ComplexMatrix> {
    angles.check_counts()?;
    let (nt, ns) = (angles.nt, angles.ns);
    let mut x = ComplexMatrix::identity(nt, ns);
    let steps: Vec<_> = GivensAngles::step_ranges(nt, ns).collect();
    for (i, range) in steps.iter().enumerate().rev() {
        let psi = &angles.psi[range.clone()];
        let phi = &angles.phi[range.clone()];
        // G_{l,i}ᵀ for l = Nt down to i+1, applied right to left.
        for (k, &angle) in psi.iter().enumerate().rev() {
            let l = i + 1 + k;
            let (s, c) = angle.sin_cos();
            for col in 0..ns {
                let xi = x[(i, col)];
                let xl = x[(l, col)];
                x[(i, col)] = xi * c - xl * s;
                x[(l, col)] = xi * s + xl * c;
            }
        }
        for (k, &angle) in phi.iter().enumerate() {
            let rot = Complex64::from_polar(1.0, angle);
            for col in 0..ns {
                x[(i + k, col)] *= rot;
            }
        }
    }
    Ok(x)
}

/// Standard angle quantization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum QuantKind {
    Type0,
    Type1,
}

/// Bit widths for ψ and φ, fixed by the scheme kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantScheme {
    kind: QuantKind,
    bits_psi: u32,
    bits_phi: u32,
}

impl QuantScheme {
    pub const TYPE0: Self = Self { kind: QuantKind::Type0, bits_psi: 5, bits_phi: 7 };
    pub const TYPE1: Self = Self { kind: QuantKind::Type1, bits_psi: 7, bits_phi: 9 };

    pub fn new(kind: QuantKind) -> Self {
        match kind {
            QuantKind::Type0 => Self::TYPE0,
            QuantKind::Type1 => Self::TYPE1,
        }
    }

    pub fn kind(&self) -> QuantKind {
        self.kind
    }

    pub fn bits_psi(&self) -> u32 {
        self.bits_psi
    }

    pub fn bits_phi(&self) -> u32 {
        self.bits_phi
    }

    /// Feedback bits for one subcarrier of an Nt×Ns matrix.
    pub fn bits_per_subcarrier(&self, nt: usize, ns: usize) -> usize {
        angle_count(nt, ns) * (self.bits_phi + self.bits_psi) as usize
    }

    pub fn phi_step(&self) -> f64 {
        TAU / f64::from(1u32 << self.bits_phi)
    }

    pub fn psi_step(&self) -> f64 {
        FRAC_PI_2 / f64::from(1u32 << self.bits_psi)
    }

    pub fn phi_index(&self, phi: f64) -> u32 {
        uniform_index(phi, self.phi_step(), self.bits_phi)
    }

    pub fn psi_index(&self, psi: f64) -> u32 {
        uniform_index(psi, self.psi_step(), self.bits_psi)
    }

    /// `kπ/2^{bφ-1} + π/2^{bφ}`
    pub fn phi_level(&self, index: u32) -> f64 {
        let b = self.bits_phi as i32;
        f64::from(index) * PI / 2f64.powi(b - 1) + PI / 2f64.powi(b)
    }

    /// `kπ/2^{bψ+1} + π/2^{bψ+2}`
    pub fn psi_level(&self, index: u32) -> f64 {
        let b = self.bits_psi as i32;
        f64::from(index) * PI / 2f64.powi(b + 1) + PI / 2f64.powi(b + 2)
    }
}

fn uniform_index(x: f64, step: f64, bits: u32) -> u32 {
    let top = (1u32 << bits) - 1;
    let k = (x / step).floor();
    if k <= 0.0 {
        0
    } else if k >= f64::from(top) {
        top
    } else {
        k as u32
    }
}

/// Packed angle indices for a run of fed-back subcarriers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AngleBits {
    pub bits: BitStream,
}

impl AngleBits {
    pub fn length_bits(&self) -> usize {
        self.bits.len()
    }
}

/// Quantizes the angle sets of consecutive subcarriers into one bitstream.
///
/// Per subcarrier and per decomposition step, the step's φ indices are written
/// before its ψ indices, each MSB first.
pub fn quantize_angles(angles: &[GivensAngles], scheme: QuantScheme) -> Result<AngleBits> {
    let mut bits = BitStream::new();
    for (k, a) in angles.iter().enumerate() {
        a.check_counts()?;
        if !a.in_range() {
            return Err(invalid(format!("subcarrier {k}: angle out of range")));
        }
        for range in GivensAngles::step_ranges(a.nt, a.ns) {
            for &p in &a.phi[range.clone()] {
                push_bits(&mut bits, scheme.phi_index(p), scheme.bits_phi);
            }
            for &p in &a.psi[range] {
                push_bits(&mut bits, scheme.psi_index(p), scheme.bits_psi);
            }
        }
    }
    Ok(AngleBits { bits })
}

/// Inverse of [`quantize_angles`]: angles at the quantizer midpoints.
pub fn dequantize_angles(
    bits: &AngleBits,
    scheme: QuantScheme,
    nt: usize,
    ns: usize,
) -> Result<Vec<GivensAngles>> {
    let per = scheme.bits_per_subcarrier(nt, ns);
    if per == 0 {
        return Err(invalid(format!("nt={nt} ns={ns} carries no angles")));
    }
    let len = bits.length_bits();
    if !len.is_multiple_of(per) {
        return Err(Error::Framing(format!(
            "{len} bits is not a whole number of {per}-bit subcarriers"
        )));
    }
    let mut reader = BitReader::new(&bits.bits);
    let mut out = Vec::with_capacity(len / per);
    for _ in 0..len / per {
        let mut phi = Vec::new();
        let mut psi = Vec::new();
        for range in GivensAngles::step_ranges(nt, ns) {
            for _ in range.clone() {
                phi.push(scheme.phi_level(reader.read(scheme.bits_phi)?));
            }
            for _ in range {
                psi.push(scheme.psi_level(reader.read(scheme.bits_psi)?));
            }
        }
        out.push(GivensAngles { nt, ns, phi, psi });
    }
    Ok(out)
}

/// Grouping factors allowed by the standard.
pub const VALID_NG: [usize; 3] = [1, 2, 4];

fn check_ng(ng: usize) -> Result<()> {
    if VALID_NG.contains(&ng) {
        Ok(())
    } else {
        Err(invalid(format!("subcarrier grouping Ng={ng} is not one of 1, 2, 4")))
    }
}

/// Keeps the first subcarrier of every group of `ng`.
pub fn group_subcarriers<T: Clone>(items: &[T], ng: usize) -> Result<Vec<T>> {
    check_ng(ng)?;
    group_with_stride(items, ng)
}

/// Piecewise-constant expansion back to `total` subcarriers.
pub fn expand_groups<T: Clone>(grouped: &[T], ng: usize, total: usize) -> Result<Vec<T>> {
    check_ng(ng)?;
    expand_with_stride(grouped, ng, total)
}

/// [`group_subcarriers`] for an arbitrary positive stride, used to fit the
/// standard codec under a bit budget.
pub fn group_with_stride<T: Clone>(items: &[T], stride: usize) -> Result<Vec<T>> {
    if stride == 0 {
        return Err(invalid("grouping stride must be positive"));
    }
    Ok(items.iter().step_by(stride).cloned().collect())
}

pub fn expand_with_stride<T: Clone>(grouped: &[T], stride: usize, total: usize) -> Result<Vec<T>> {
    if stride == 0 {
        return Err(invalid("grouping stride must be positive"));
    }
    if grouped.len() != total.div_ceil(stride) {
        return Err(Error::Framing(format!(
            "{} group representatives cannot expand to {total} subcarriers with stride {stride}",
            grouped.len()
        )));
    }
    Ok(grouped
        .iter()
        .flat_map(|g| std::iter::repeat_n(g, stride))
        .take(total)
        .cloned()
        .collect())
}

/// Full standard feedback path for one packet: group, decompose, quantize on
/// the station side; dequantize, reconstruct, expand on the AP side.
///
/// Returns the feedback payload and the AP's per-subcarrier reconstruction.
pub fn standard_feedback(
    v_seq: &[ComplexMatrix],
    scheme: QuantScheme,
    stride: usize,
) -> Result<(AngleBits, Vec<ComplexMatrix>)> {
    let first = v_seq.first().ok_or_else(|| invalid("empty subcarrier sequence"))?;
    let (nt, ns) = first.shape();
    let kept = group_with_stride(v_seq, stride)?;
    let angles = kept.iter().map(givens_decompose).collect::<Result<Vec<_>>>()?;
    let bits = quantize_angles(&angles, scheme)?;
    let rebuilt = dequantize_angles(&bits, scheme, nt, ns)?
        .iter()
        .map(givens_reconstruct)
        .collect::<Result<Vec<_>>>()?;
    let expanded = expand_with_stride(&rebuilt, stride, v_seq.len())?;
    Ok((bits, expanded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{extract_beamforming, svd};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_beamformer(rng: &mut impl Rng, nt: usize, ns: usize) -> ComplexMatrix {
        let data = (0..nt * nt)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let h = ComplexMatrix::new(nt, nt, data).unwrap();
        extract_beamforming(&svd(&h).unwrap(), ns).unwrap()
    }

    #[test]
    fn angle_counts_follow_loop_bounds() {
        assert_eq!(angle_count(2, 1), 1);
        assert_eq!(angle_count(3, 1), 2);
        assert_eq!(angle_count(3, 2), 3);
        assert_eq!(angle_count(4, 2), 5);
        assert_eq!(angle_count(2, 2), 1);
        assert_eq!(angle_count(1, 1), 0);
    }

    #[test]
    fn unit_vector_e1() {
        let v = ComplexMatrix::identity(3, 1);
        let a = givens_decompose(&v).unwrap();
        assert_eq!(a.phi.len(), 2);
        assert_eq!(a.psi.len(), 2);
        assert!(givens_reconstruct(&a).unwrap().max_abs_diff(&v) <= 1e-15);
    }

    #[test]
    fn unit_vector_last_row() {
        let mut v = ComplexMatrix::zeros(3, 1);
        v[(2, 0)] = c(1.0, 0.0);
        let a = givens_decompose(&v).unwrap();
        // ψ_{2,1} = 0 (nothing in row 2), ψ_{3,1} = π/2 rotates everything to row 3.
        assert_eq!(a.psi, vec![0.0, FRAC_PI_2]);
        assert!(givens_reconstruct(&a).unwrap().max_abs_diff(&v) <= 1e-15);
    }

    #[test]
    fn zero_angles_give_padded_identity() {
        for (nt, ns) in [(2, 1), (3, 1), (3, 2), (4, 2), (2, 2)] {
            let n = angle_count(nt, ns);
            let a = GivensAngles { nt, ns, phi: vec![0.0; n], psi: vec![0.0; n] };
            let v = givens_reconstruct(&a).unwrap();
            assert_eq!(v, ComplexMatrix::identity(nt, ns));
        }
    }

    #[test]
    fn two_by_one_closed_form() {
        let (theta, alpha) = (1.1, 0.4);
        let a = GivensAngles { nt: 2, ns: 1, phi: vec![theta], psi: vec![alpha] };
        let v = givens_reconstruct(&a).unwrap();
        let expected = Complex64::from_polar(alpha.cos(), theta);
        assert!((v[(0, 0)] - expected).norm() < 1e-15);
        assert!((v[(1, 0)] - c(alpha.sin(), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn reconstruct_rejects_bad_counts() {
        let a = GivensAngles { nt: 3, ns: 1, phi: vec![0.0], psi: vec![0.0, 0.0] };
        assert!(matches!(givens_reconstruct(&a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn decompose_rejects_unnormalized_phase() {
        let mut v = ComplexMatrix::zeros(2, 1);
        v[(1, 0)] = c(0.0, 1.0);
        assert!(matches!(givens_decompose(&v), Err(Error::Precondition(_))));
        v[(1, 0)] = c(-1.0, 0.0);
        assert!(matches!(givens_decompose(&v), Err(Error::Precondition(_))));
    }

    #[test]
    fn random_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (nt, ns) in [(2, 1), (3, 1), (4, 1), (3, 2), (4, 2), (2, 2), (3, 3)] {
            for _ in 0..300 {
                let v = random_beamformer(&mut rng, nt, ns);
                let a = givens_decompose(&v).unwrap();
                assert!(a.in_range());
                let back = givens_reconstruct(&a).unwrap();
                assert!(back.max_abs_diff(&v) <= 1e-10, "nt={nt} ns={ns}");
            }
        }
    }

    #[test]
    fn table_overheads_per_subcarrier() {
        assert_eq!(QuantScheme::TYPE0.bits_per_subcarrier(3, 1) * 28, 672);
        assert_eq!(QuantScheme::TYPE1.bits_per_subcarrier(3, 1) * 28, 896);
        assert_eq!(QuantScheme::TYPE1.bits_per_subcarrier(2, 1) * 52, 832);
    }

    #[test]
    fn quantized_stream_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let angles: Vec<_> = (0..28)
            .map(|_| givens_decompose(&random_beamformer(&mut rng, 3, 1)).unwrap())
            .collect();
        let bits = quantize_angles(&angles, QuantScheme::TYPE0).unwrap();
        assert_eq!(bits.length_bits(), 672);
    }

    #[test]
    fn phi_zero_maps_to_first_midpoint() {
        let q = QuantScheme::TYPE0;
        assert_eq!(q.phi_index(0.0), 0);
        let level = q.phi_level(0);
        assert!((level - PI / 128.0).abs() < 1e-15);
        assert!(level <= q.phi_step() / 2.0 + 1e-15);
        // Top of both ranges clamps to the last index.
        assert_eq!(q.psi_index(FRAC_PI_2), 31);
        assert_eq!(q.phi_index(TAU - 1e-12), 127);
    }

    #[test]
    fn quantization_error_is_half_step() {
        for q in [QuantScheme::TYPE0, QuantScheme::TYPE1] {
            let n = 10_000;
            let mut worst_phi: f64 = 0.0;
            let mut worst_psi: f64 = 0.0;
            for k in 0..=n {
                let phi = TAU * k as f64 / (n as f64 + 1.0);
                let psi = FRAC_PI_2 * k as f64 / n as f64;
                worst_phi = worst_phi.max((q.phi_level(q.phi_index(phi)) - phi).abs());
                worst_psi = worst_psi.max((q.psi_level(q.psi_index(psi)) - psi).abs());
            }
            assert!(worst_phi <= q.phi_step() / 2.0 + 1e-12);
            assert!(worst_psi <= q.psi_step() / 2.0 + 1e-12);
        }
        assert!((QuantScheme::TYPE0.psi_step() / 2.0 - PI / 128.0).abs() < 1e-15);
        assert!(QuantScheme::TYPE1.psi_step() < QuantScheme::TYPE0.psi_step());
        assert!(QuantScheme::TYPE1.phi_step() < QuantScheme::TYPE0.phi_step());
    }

    #[test]
    fn dequantize_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for q in [QuantScheme::TYPE0, QuantScheme::TYPE1] {
            let angles: Vec<_> = (0..13)
                .map(|_| givens_decompose(&random_beamformer(&mut rng, 4, 2)).unwrap())
                .collect();
            let bits = quantize_angles(&angles, q).unwrap();
            let back = dequantize_angles(&bits, q, 4, 2).unwrap();
            assert_eq!(back.len(), 13);
            assert_eq!(quantize_angles(&back, q).unwrap(), bits);
        }
    }

    #[test]
    fn dequantize_rejects_partial_subcarrier() {
        let mut bits = BitStream::new();
        push_bits(&mut bits, 0, 11);
        let r = dequantize_angles(&AngleBits { bits }, QuantScheme::TYPE0, 2, 1);
        assert!(matches!(r, Err(Error::Framing(_))));
    }

    #[test]
    fn type1_round_trip_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut total = 0.0;
        let n = 1000;
        for _ in 0..n {
            let v = random_beamformer(&mut rng, 3, 1);
            let (_, vhat) = standard_feedback(std::slice::from_ref(&v), QuantScheme::TYPE1, 1).unwrap();
            let inner: Complex64 = (0..3).map(|r| vhat[0][(r, 0)].conj() * v[(r, 0)]).sum();
            total += inner.norm() / (vhat[0].column_norm(0) * v.column_norm(0));
        }
        assert!(total / n as f64 >= 0.999);
    }

    #[test]
    fn grouping_counts() {
        let xs: Vec<usize> = (0..52).collect();
        let g4 = group_subcarriers(&xs, 4).unwrap();
        assert_eq!(g4.len(), 13);
        assert_eq!(g4[1], 4);
        assert_eq!(g4.len() * QuantScheme::TYPE0.bits_per_subcarrier(2, 1), 156);
        let g2 = group_subcarriers(&xs, 2).unwrap();
        assert_eq!(g2.len() * QuantScheme::TYPE1.bits_per_subcarrier(2, 1), 416);
        assert_eq!(group_subcarriers(&xs, 1).unwrap(), xs);
        assert!(group_subcarriers(&xs, 3).is_err());
        // ceil for lengths not divisible by the group size
        assert_eq!(group_subcarriers(&xs[..7], 4).unwrap(), vec![0, 4]);
    }

    #[test]
    fn expansion_replicates() {
        assert_eq!(expand_groups(&['a', 'b'], 2, 4).unwrap(), vec!['a', 'a', 'b', 'b']);
        assert_eq!(expand_groups(&['a', 'b'], 4, 7).unwrap(), vec!['a', 'a', 'a', 'a', 'b', 'b', 'b']);
        assert_eq!(expand_groups(&[1, 2, 3], 1, 3).unwrap(), vec![1, 2, 3]);
        assert!(matches!(expand_groups(&[1, 2, 3], 2, 4), Err(Error::Framing(_))));
    }
}
