//! Metric chain: cosine similarity, simulated EVM, EVM → bits per subcarrier,
//! gross and net throughput, and per-scheme evaluation.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{beamformers, build_vimage, packet_rng, ChannelRealization};
use crate::efnet::EfnetModel;
use crate::error::{invalid, Error, Result};
use crate::givens::{standard_feedback, QuantKind, QuantScheme, VALID_NG};
use crate::linalg::ComplexMatrix;

/// Reported EVM never goes below this.
pub const EVM_FLOOR_DB: f64 = -60.0;

// ---------------------------------------------------------------------------
// Cosine similarity

/// `|v̂ᴴv| / (‖v̂‖‖v‖)` for single-column beamformers; `None` when either
/// vector has zero norm.
pub fn vector_similarity(v_hat: &ComplexMatrix, v: &ComplexMatrix) -> Result<Option<f64>> {
    if v_hat.cols() != 1 || v.cols() != 1 {
        return Err(invalid("cosine similarity is defined for single-stream beamformers"));
    }
    if v_hat.rows() != v.rows() {
        return Err(invalid(format!("vector lengths differ: {} vs {}", v_hat.rows(), v.rows())));
    }
    let inner: Complex64 = v_hat.as_slice().iter().zip(v.as_slice()).map(|(a, b)| a.conj() * b).sum();
    let na = v_hat.frobenius_norm_sqr().sqrt();
    let nb = v.frobenius_norm_sqr().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(None);
    }
    Ok(Some((inner.norm() / (na * nb)).min(1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    /// Mean over samples of the per-sample subcarrier mean.
    pub rho: f64,
    /// Zero-norm vectors left out of the means.
    pub excluded: usize,
}

/// Per-sample mean over subcarriers, skipping zero-norm vectors.
fn sample_similarity(v_hat: &[ComplexMatrix], v: &[ComplexMatrix]) -> Result<(Option<f64>, usize)> {
    if v_hat.len() != v.len() {
        return Err(invalid(format!("{} reconstructed vs {} true subcarriers", v_hat.len(), v.len())));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut excluded = 0;
    for (a, b) in v_hat.iter().zip(v) {
        match vector_similarity(a, b)? {
            Some(r) => {
                sum += r;
                n += 1;
            }
            None => excluded += 1,
        }
    }
    Ok(((n > 0).then(|| sum / n as f64), excluded))
}

/// Mean cosine similarity over subcarriers, then over samples.
pub fn cosine_similarity(v_hat: &[Vec<ComplexMatrix>], v: &[Vec<ComplexMatrix>]) -> Result<Similarity> {
    if v_hat.len() != v.len() || v.is_empty() {
        return Err(invalid("cosine similarity needs equally many, non-empty samples"));
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut excluded = 0;
    for (a, b) in v_hat.iter().zip(v) {
        let (r, e) = sample_similarity(a, b)?;
        excluded += e;
        if let Some(r) = r {
            total += r;
            counted += 1;
        }
    }
    if excluded > 0 {
        log::warn!("{excluded} zero-norm vectors excluded from cosine similarity");
    }
    if counted == 0 {
        return Err(invalid("every vector had zero norm"));
    }
    Ok(Similarity { rho: total / counted as f64, excluded })
}

// ---------------------------------------------------------------------------
// EVM

/// Link parameters for the EVM simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvmCfg {
    pub tx_power_dbm: f64,
    /// Noise power per receive antenna; `-inf` gives a noiseless link.
    pub noise_floor_dbm: f64,
    /// Large-scale loss applied on top of the unit-gain fading channel.
    pub path_loss_db: f64,
    /// QPSK symbols sent per subcarrier.
    pub n_symbols: usize,
}

impl Default for EvmCfg {
    fn default() -> Self {
        Self { tx_power_dbm: 30.0, noise_floor_dbm: -85.0, path_loss_db: DEFAULT_PATH_LOSS_DB, n_symbols: 64 }
    }
}

/// Puts single-stream perfect feedback on the default 3×2, 8-tap channel
/// near -18 dB EVM.
pub const DEFAULT_PATH_LOSS_DB: f64 = 103.0;

impl EvmCfg {
    pub fn validate(&self) -> Result<()> {
        if !self.tx_power_dbm.is_finite() || !self.path_loss_db.is_finite() || self.noise_floor_dbm.is_nan() || self.noise_floor_dbm == f64::INFINITY {
            return Err(invalid("EVM link budget must be finite (noise floor may be -inf)"));
        }
        if self.n_symbols == 0 {
            return Err(invalid("n_symbols must be at least 1"));
        }
        Ok(())
    }

    /// Received power scale (linear, relative to the noise reference of 1 mW).
    fn rx_power_mw(&self) -> f64 {
        10f64.powf((self.tx_power_dbm - self.path_loss_db) / 10.0)
    }

    fn noise_mw(&self) -> f64 {
        10f64.powf(self.noise_floor_dbm / 10.0)
    }
}

/// Accumulated error and reference energy; combine across samples before
/// converting to dB.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvmAccumulator {
    pub error_energy: f64,
    pub symbol_energy: f64,
}

impl EvmAccumulator {
    pub fn merge(&mut self, other: &EvmAccumulator) {
        self.error_energy += other.error_energy;
        self.symbol_energy += other.symbol_energy;
    }

    pub fn evm_db(&self) -> f64 {
        if self.symbol_energy == 0.0 {
            return EVM_FLOOR_DB;
        }
        let ratio = self.error_energy / self.symbol_energy;
        if ratio <= 0.0 {
            EVM_FLOOR_DB
        } else {
            (10.0 * ratio.log10()).max(EVM_FLOOR_DB)
        }
    }
}

const QPSK: [Complex64; 4] = [
    Complex64::new(std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    Complex64::new(-std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    Complex64::new(-std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
    Complex64::new(std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
];

/// Sends `n_symbols` QPSK symbols per subcarrier along the (unit-normalized)
/// column of `v_hat` over the true channel, adds noise and combines with the
/// known effective channel.
pub fn simulate_evm_energy(
    v_hat: &[ComplexMatrix],
    h: &[ComplexMatrix],
    cfg: &EvmCfg,
    rng: &mut impl rand::Rng,
) -> Result<EvmAccumulator> {
    use crate::channel::complex_gaussian;
    cfg.validate()?;
    if v_hat.len() != h.len() {
        return Err(invalid(format!("{} beamformers for {} subcarriers", v_hat.len(), h.len())));
    }
    let amp = cfg.rx_power_mw().sqrt();
    let noise = cfg.noise_mw();
    let mut acc = EvmAccumulator::default();
    for (v, hk) in v_hat.iter().zip(h) {
        if v.cols() != 1 || v.rows() != hk.cols() {
            return Err(invalid(format!(
                "beamformer {}x{} does not fit channel {}x{}",
                v.rows(),
                v.cols(),
                hk.rows(),
                hk.cols()
            )));
        }
        let norm = v.frobenius_norm_sqr().sqrt();
        let g = hk.matmul(v)?;
        let g: Vec<Complex64> = g.as_slice().iter().map(|z| z * (amp / norm.max(f64::MIN_POSITIVE))).collect();
        let gain: f64 = g.iter().map(|z| z.norm_sqr()).sum();
        for _ in 0..cfg.n_symbols {
            let s = QPSK[rng.random_range(0..4)];
            acc.symbol_energy += s.norm_sqr();
            if norm == 0.0 || gain == 0.0 {
                // Nothing reaches the receiver.
                acc.error_energy += s.norm_sqr();
                continue;
            }
            let mut combined = Complex64::new(0.0, 0.0);
            for gr in &g {
                let n = if noise > 0.0 { complex_gaussian(rng, noise) } else { Complex64::new(0.0, 0.0) };
                combined += gr.conj() * (gr * s + n);
            }
            acc.error_energy += (combined / gain - s).norm_sqr();
        }
    }
    Ok(acc)
}

/// EVM in dB for one packet.
pub fn simulate_evm(v_hat: &[ComplexMatrix], h: &[ComplexMatrix], cfg: &EvmCfg, rng: &mut impl rand::Rng) -> Result<f64> {
    Ok(simulate_evm_energy(v_hat, h, cfg, rng)?.evm_db())
}

/// Expected EVM of the combiner, `N0 / (P‖Hv̂‖²)` averaged over subcarriers.
pub fn analytic_evm_db(v_hat: &[ComplexMatrix], h: &[ComplexMatrix], cfg: &EvmCfg) -> Result<f64> {
    let p = cfg.rx_power_mw();
    let mut sum = 0.0;
    for (v, hk) in v_hat.iter().zip(h) {
        let g = hk.matmul(v)?;
        sum += cfg.noise_mw() / (p * g.frobenius_norm_sqr() / v.frobenius_norm_sqr());
    }
    Ok(10.0 * (sum / h.len() as f64).log10())
}

// ---------------------------------------------------------------------------
// MCS ladder and throughput

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub evm_threshold_db: f64,
    /// Information bits per subcarrier.
    pub gamma: f64,
    pub label: String,
}

/// EVM requirements ordered from the most robust to the fastest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsTable {
    pub entries: Vec<McsEntry>,
}

impl Default for McsTable {
    fn default() -> Self {
        let e = |t: f64, g: f64, l: &str| McsEntry { evm_threshold_db: t, gamma: g, label: l.to_string() };
        Self {
            entries: vec![
                e(-5.0, 0.5, "BPSK 1/2"),
                e(-10.0, 1.0, "QPSK 1/2"),
                e(-13.0, 1.5, "QPSK 3/4"),
                e(-16.0, 2.0, "16-QAM 1/2"),
                e(-19.0, 3.0, "16-QAM 3/4"),
                e(-22.0, 4.0, "64-QAM 2/3"),
                e(-25.0, 4.5, "64-QAM 3/4"),
                e(-27.0, 5.0, "64-QAM 5/6"),
            ],
        }
    }
}

impl McsTable {
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(invalid("MCS table is empty"));
        }
        for w in self.entries.windows(2) {
            if !(w[1].evm_threshold_db < w[0].evm_threshold_db) || !(w[1].gamma > w[0].gamma) {
                return Err(invalid(format!(
                    "MCS entries '{}' and '{}' are not ordered by falling threshold and rising gamma",
                    w[0].label, w[1].label
                )));
            }
        }
        if self.entries.iter().any(|e| !e.evm_threshold_db.is_finite() || !(e.gamma > 0.0)) {
            return Err(invalid("MCS thresholds must be finite and gammas positive"));
        }
        Ok(())
    }

    /// Gamma of the fastest entry whose threshold the EVM meets; 0 if none.
    pub fn gamma_of_evm(&self, evm_db: f64) -> f64 {
        self.entries
            .iter()
            .filter(|e| evm_db <= e.evm_threshold_db)
            .map(|e| e.gamma)
            .next_back()
            .unwrap_or(0.0)
    }
}

pub fn gamma_of_evm(evm_db: f64, table: &McsTable) -> f64 {
    table.gamma_of_evm(evm_db)
}

/// OFDM numerology and sounding constants for the throughput model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThroughputCfg {
    pub n_vs: usize,
    pub n_fft: usize,
    pub n_cp: usize,
    /// Sampling rate in samples per second.
    pub sample_rate: f64,
    pub packet_bytes: usize,
    /// Lumped NDPA + NDP + ACK + interframe time in seconds.
    pub t_fixed: f64,
}

impl Default for ThroughputCfg {
    fn default() -> Self {
        Self::mhz40()
    }
}

impl ThroughputCfg {
    /// 28 of 64 subcarriers, 16-sample prefix, 40 MS/s.
    pub fn mhz40() -> Self {
        Self { n_vs: 28, n_fft: 64, n_cp: 16, sample_rate: 40e6, packet_bytes: 300, t_fixed: 131.7e-6 }
    }

    /// 52 of 64 subcarriers, 16-sample prefix, 20 MS/s.
    pub fn mhz20() -> Self {
        Self { n_vs: 52, n_fft: 64, n_cp: 16, sample_rate: 20e6, packet_bytes: 300, t_fixed: 142.1e-6 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vs == 0 || self.n_fft == 0 || self.packet_bytes == 0 {
            return Err(invalid("throughput counts must be positive"));
        }
        if self.n_cp >= self.n_fft {
            return Err(invalid(format!("cyclic prefix {} must be shorter than FFT {}", self.n_cp, self.n_fft)));
        }
        if self.n_vs > self.n_fft {
            return Err(invalid(format!("{} valid subcarriers exceed FFT size {}", self.n_vs, self.n_fft)));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) || !(self.t_fixed >= 0.0 && self.t_fixed.is_finite()) {
            return Err(invalid("sample rate must be positive and t_fixed non-negative"));
        }
        Ok(())
    }

    /// Subcarrier-symbols per second: `n_vs / (n_fft + n_cp) · b`.
    pub fn subcarrier_rate(&self) -> f64 {
        self.n_vs as f64 / (self.n_fft + self.n_cp) as f64 * self.sample_rate
    }

    /// Rate of the feedback frame: rate-1/2 BPSK.
    pub fn bpsk_rate(&self) -> f64 {
        self.subcarrier_rate() * 0.5
    }
}

/// `r = n_vs/(n_fft + n_cp) · b · γ` in bits per second.
pub fn gross_throughput(gamma: f64, cfg: &ThroughputCfg) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(invalid(format!("gamma must be non-negative, got {gamma}")));
    }
    Ok(cfg.subcarrier_rate() * gamma)
}

/// Airtime of the whole sounding exchange, in seconds.
pub fn overhead_seconds(overhead_bits: usize, cfg: &ThroughputCfg) -> f64 {
    cfg.t_fixed + overhead_bits as f64 / cfg.bpsk_rate()
}

/// `r̄ = T / (T + T_overhead) · r` with `T` the data packet airtime.
pub fn net_throughput(r: f64, overhead_bits: usize, cfg: &ThroughputCfg) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(invalid(format!("gross rate must be positive, got {r}")));
    }
    let t = (cfg.packet_bytes * 8) as f64 / r;
    Ok(t / (t + overhead_seconds(overhead_bits, cfg)) * r)
}

/// Feedback bits of the standard report: `ceil(n_vs/ng)` subcarriers times
/// the per-subcarrier angle bits.
pub fn standard_overhead_bits(nt: usize, ns: usize, n_vs: usize, ng: usize, kind: QuantKind) -> Result<usize> {
    if !VALID_NG.contains(&ng) {
        return Err(invalid(format!("subcarrier grouping Ng={ng} is not one of 1, 2, 4")));
    }
    strided_overhead_bits(nt, ns, n_vs, ng, kind)
}

fn strided_overhead_bits(nt: usize, ns: usize, n_vs: usize, stride: usize, kind: QuantKind) -> Result<usize> {
    if nt < 2 || ns == 0 || ns > nt || n_vs == 0 {
        return Err(invalid(format!("no standard report for nt={nt} ns={ns} n_vs={n_vs}")));
    }
    Ok(n_vs.div_ceil(stride) * QuantScheme::new(kind).bits_per_subcarrier(nt, ns))
}

/// Smallest subcarrier stride whose standard report fits in `budget` bits.
pub fn budget_stride(nt: usize, ns: usize, n_vs: usize, kind: QuantKind, budget: usize) -> Result<usize> {
    let per = QuantScheme::new(kind).bits_per_subcarrier(nt, ns);
    if per == 0 || per > budget {
        return Err(invalid(format!("a {budget}-bit budget cannot hold one {per}-bit subcarrier report")));
    }
    (1..=n_vs)
        .find(|&s| n_vs.div_ceil(s) * per <= budget)
        .ok_or_else(|| invalid("no stride fits the budget"))
}

// ---------------------------------------------------------------------------
// Schemes

/// A feedback scheme to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    /// Standard report with grouping `ng`.
    Standard { kind: QuantKind, ng: usize },
    /// Standard report thinned to fit a bit budget by uniform subcarrier
    /// truncation.
    StandardBudget { kind: QuantKind, budget_bits: usize },
    Efnet,
    /// Unquantized beamformers at the AP.
    Perfect,
    /// Recorded operating point; only the throughput chain is applied.
    FixedReference { label: String, overhead_bits: usize, evm_db: f64 },
}

fn kind_tag(k: QuantKind) -> &'static str {
    match k {
        QuantKind::Type0 => "T0",
        QuantKind::Type1 => "T1",
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Standard { kind, ng } => write!(f, "{}G{ng}", kind_tag(*kind)),
            Scheme::StandardBudget { kind, budget_bits } => write!(f, "{}B{budget_bits}", kind_tag(*kind)),
            Scheme::Efnet => f.write_str("EFNet"),
            Scheme::Perfect => f.write_str("Perfect"),
            Scheme::FixedReference { label, .. } => f.write_str(label),
        }
    }
}

/// Accepted forms: `T0G1`, `T1G4`, `T0B100`, `efnet`, `perfect`,
/// `ref:LABEL:OVERHEAD_BITS:EVM_DB`.
impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || invalid(format!("unknown scheme '{s}'"));
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "efnet" => return Ok(Scheme::Efnet),
            "perfect" => return Ok(Scheme::Perfect),
            _ => {}
        }
        if lower.starts_with("ref:") {
            let parts: Vec<&str> = s.splitn(4, ':').collect();
            if parts.len() != 4 || parts[1].is_empty() {
                return Err(invalid(format!("reference scheme '{s}' must be ref:LABEL:BITS:EVM_DB")));
            }
            let overhead_bits = parts[2].parse().map_err(|_| bad())?;
            let evm_db: f64 = parts[3].parse().map_err(|_| bad())?;
            if !evm_db.is_finite() {
                return Err(bad());
            }
            return Ok(Scheme::FixedReference { label: parts[1].to_string(), overhead_bits, evm_db });
        }
        let kind = match lower.get(..2) {
            Some("t0") => QuantKind::Type0,
            Some("t1") => QuantKind::Type1,
            _ => return Err(bad()),
        };
        let n: usize = lower.get(3..).and_then(|x| x.parse().ok()).ok_or_else(bad)?;
        match lower.as_bytes().get(2) {
            Some(b'g') if VALID_NG.contains(&n) => Ok(Scheme::Standard { kind, ng: n }),
            Some(b'g') => Err(invalid(format!("subcarrier grouping Ng={n} is not one of 1, 2, 4"))),
            Some(b'b') if n > 0 => Ok(Scheme::StandardBudget { kind, budget_bits: n }),
            _ => Err(bad()),
        }
    }
}

/// One row of a comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: String,
    pub overhead_bits: usize,
    /// Absent for recorded reference points.
    pub rho: Option<f64>,
    pub evm_db: f64,
    pub gross_mbps: f64,
    pub net_mbps: f64,
}

/// Side information from an evaluation run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalDiagnostics {
    pub excluded_vectors: usize,
    pub clipped_entries: usize,
    pub samples: usize,
}

/// Everything the metric chain needs besides the scheme and data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalCfg {
    pub throughput: ThroughputCfg,
    pub mcs: McsTable,
    pub evm: EvmCfg,
    /// Seeds the per-sample symbol and noise streams.
    pub seed: u64,
}

impl EvalCfg {
    pub fn validate(&self) -> Result<()> {
        self.throughput.validate()?;
        self.mcs.validate()?;
        self.evm.validate()
    }
}

/// Applies the EVM → γ → gross → net chain.
pub fn rates_for(evm_db: f64, overhead_bits: usize, cfg: &EvalCfg) -> Result<(f64, f64)> {
    let gamma = cfg.mcs.gamma_of_evm(evm_db);
    let gross = gross_throughput(gamma, &cfg.throughput)?;
    let net = if gross > 0.0 { net_throughput(gross, overhead_bits, &cfg.throughput)? } else { 0.0 };
    Ok((gross, net))
}

struct SampleOutcome {
    rho: Option<f64>,
    excluded: usize,
    clipped: usize,
    evm: EvmAccumulator,
    overhead_bits: usize,
}

fn reconstruct_for(
    scheme: &Scheme,
    real: &ChannelRealization,
    v: &[ComplexMatrix],
    model: Option<&EfnetModel>,
) -> Result<(Vec<ComplexMatrix>, usize, usize)> {
    let (nt, ns) = v[0].shape();
    match scheme {
        Scheme::Perfect => Ok((v.to_vec(), 0, 0)),
        Scheme::Standard { kind, ng } => {
            let expect = standard_overhead_bits(nt, ns, v.len(), *ng, *kind)?;
            let (bits, rec) = standard_feedback(v, QuantScheme::new(*kind), *ng)?;
            debug_assert_eq!(bits.length_bits(), expect);
            Ok((rec, bits.length_bits(), 0))
        }
        Scheme::StandardBudget { kind, budget_bits } => {
            let stride = budget_stride(nt, ns, v.len(), *kind, *budget_bits)?;
            let (bits, rec) = standard_feedback(v, QuantScheme::new(*kind), stride)?;
            Ok((rec, bits.length_bits(), 0))
        }
        Scheme::Efnet => {
            let model = model.ok_or_else(|| invalid("the EFNet scheme needs a trained model"))?;
            let c = &model.config;
            if (c.nt, c.ns, c.n_vs) != (nt, ns, v.len()) {
                return Err(invalid(format!(
                    "model expects nt={} ns={} n_vs={}, data has nt={nt} ns={ns} n_vs={}",
                    c.nt,
                    c.ns,
                    c.n_vs,
                    v.len()
                )));
            }
            let (img, clipped) = build_vimage(real, ns, Some(model.scale))?;
            let (bits, out) = model.feedback(&img)?;
            Ok((out.to_beamformers(nt, ns)?, bits.length_bits(), clipped))
        }
        Scheme::FixedReference { .. } => unreachable!("handled by caller"),
    }
}

/// Runs one scheme over a set of test channels.
pub fn evaluate_scheme(
    scheme: &Scheme,
    test: &[ChannelRealization],
    ns: usize,
    model: Option<&EfnetModel>,
    cfg: &EvalCfg,
) -> Result<(SchemeResult, EvalDiagnostics)> {
    cfg.validate()?;
    if let Scheme::FixedReference { label, overhead_bits, evm_db } = scheme {
        let (gross, net) = rates_for(*evm_db, *overhead_bits, cfg)?;
        let r = SchemeResult {
            scheme: label.clone(),
            overhead_bits: *overhead_bits,
            rho: None,
            evm_db: *evm_db,
            gross_mbps: gross / 1e6,
            net_mbps: net / 1e6,
        };
        return Ok((r, EvalDiagnostics::default()));
    }
    if test.is_empty() {
        return Err(invalid("empty test set"));
    }
    if matches!(scheme, Scheme::Efnet) && model.is_none() {
        return Err(invalid("the EFNet scheme needs a trained model"));
    }
    let outcomes: Vec<SampleOutcome> = test
        .par_iter()
        .enumerate()
        .map(|(i, real)| {
            let v = beamformers(real, ns)?;
            let (v_hat, overhead_bits, clipped) = reconstruct_for(scheme, real, &v, model)?;
            let (rho, excluded) = if ns == 1 { sample_similarity(&v_hat, &v)? } else { (None, 0) };
            let mut rng = packet_rng(cfg.seed, i as u64);
            let evm = if ns == 1 {
                simulate_evm_energy(&v_hat, &real.h, &cfg.evm, &mut rng)?
            } else {
                EvmAccumulator::default()
            };
            Ok(SampleOutcome { rho, excluded, clipped, evm, overhead_bits })
        })
        .collect::<Result<_>>()?;

    let overhead_bits = outcomes[0].overhead_bits;
    if outcomes.iter().any(|o| o.overhead_bits != overhead_bits) {
        return Err(Error::Consistency("feedback size varies across packets".into()));
    }
    let mut diag = EvalDiagnostics { samples: outcomes.len(), ..Default::default() };
    let mut evm = EvmAccumulator::default();
    let (mut rho_sum, mut rho_n) = (0.0, 0usize);
    for o in &outcomes {
        diag.excluded_vectors += o.excluded;
        diag.clipped_entries += o.clipped;
        evm.merge(&o.evm);
        if let Some(r) = o.rho {
            rho_sum += r;
            rho_n += 1;
        }
    }
    if diag.excluded_vectors > 0 {
        log::warn!("{}: {} zero-norm vectors excluded from cosine similarity", scheme, diag.excluded_vectors);
    }
    if diag.clipped_entries > 0 {
        log::warn!("{}: {} input entries clipped to [-1, 1]", scheme, diag.clipped_entries);
    }
    let evm_db = evm.evm_db();
    let (gross, net) = rates_for(evm_db, overhead_bits, cfg)?;
    let result = SchemeResult {
        scheme: scheme.to_string(),
        overhead_bits,
        rho: (rho_n > 0).then(|| rho_sum / rho_n as f64),
        evm_db,
        gross_mbps: gross / 1e6,
        net_mbps: net / 1e6,
    };
    Ok((result, diag))
}

// ---------------------------------------------------------------------------
// Report files

pub const REPORT_COLUMNS: [&str; 6] = ["scheme", "overhead_bits", "rho", "evm_db", "gross_mbps", "net_mbps"];

pub fn write_report_csv(rows: &[SchemeResult], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    if rows.is_empty() {
        out.write_record(REPORT_COLUMNS)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_report_csv(r: impl Read) -> Result<Vec<SchemeResult>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(REPORT_COLUMNS) {
        return Err(Error::Consistency(format!(
            "report columns {:?} differ from {:?}",
            headers.iter().collect::<Vec<_>>(),
            REPORT_COLUMNS
        )));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{gen_channel, ChannelModelCfg};
    use crate::linalg::phase_normalize_columns;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vec_of(xs: &[(f64, f64)]) -> ComplexMatrix {
        ComplexMatrix::column_vector(xs.iter().map(|&(a, b)| Complex64::new(a, b)).collect()).unwrap()
    }

    #[test]
    fn similarity_basics() {
        let v = vec_of(&[(0.6, 0.0), (0.0, 0.8)]);
        assert!((vector_similarity(&v, &v).unwrap().unwrap() - 1.0).abs() < 1e-15);
        let rotated = v.scale(Complex64::from_polar(2.5, 1.1));
        assert!((vector_similarity(&rotated, &v).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let orth = vec_of(&[(0.0, 0.8), (0.6, 0.0)]);
        assert!(vector_similarity(&orth, &v).unwrap().unwrap().abs() < 1e-15);
        assert_eq!(vector_similarity(&ComplexMatrix::zeros(2, 1), &v).unwrap(), None);
        assert!(vector_similarity(&ComplexMatrix::zeros(2, 2), &ComplexMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn zero_vectors_are_excluded() {
        let v = vec_of(&[(1.0, 0.0), (0.0, 0.0)]);
        let half = vec_of(&[(1.0, 0.0), (1.0, 0.0)]);
        let s = cosine_similarity(
            &[vec![v.clone(), ComplexMatrix::zeros(2, 1)], vec![half.clone()]],
            &[vec![v.clone(), v.clone()], vec![v.clone()]],
        )
        .unwrap();
        assert_eq!(s.excluded, 1);
        // Sample means 1.0 and 1/√2.
        assert!((s.rho - (1.0 + std::f64::consts::FRAC_1_SQRT_2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn mcs_examples() {
        let t = McsTable::default();
        t.validate().unwrap();
        assert_eq!(t.gamma_of_evm(-17.85), 2.0);
        assert_eq!(t.gamma_of_evm(-13.54), 1.5);
        assert_eq!(t.gamma_of_evm(-12.29), 1.0);
        assert_eq!(t.gamma_of_evm(-3.0), 0.0);
        assert_eq!(t.gamma_of_evm(-40.0), 5.0);
        assert_eq!(t.gamma_of_evm(-16.0), 2.0);
        let mut prev = 0.0;
        for i in 0..400 {
            let g = t.gamma_of_evm(-(i as f64) * 0.1);
            assert!(g >= prev);
            prev = g;
        }
        let mut bad = t.clone();
        bad.entries.swap(0, 1);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn gross_examples() {
        let a = gross_throughput(2.0, &ThroughputCfg::mhz40()).unwrap();
        assert!((a - 28e6).abs() < 1e-6);
        let b = gross_throughput(2.0, &ThroughputCfg::mhz20()).unwrap();
        assert!((b - 26e6).abs() < 1e-6);
        assert_eq!(gross_throughput(0.0, &ThroughputCfg::mhz40()).unwrap(), 0.0);
    }

    #[test]
    fn net_examples() {
        let free = ThroughputCfg { t_fixed: 0.0, ..ThroughputCfg::mhz40() };
        assert_eq!(net_throughput(28e6, 0, &free).unwrap(), 28e6);
        let t0 = net_throughput(28e6, 672, &ThroughputCfg::mhz40()).unwrap() / 1e6;
        assert!((t0 - 7.66).abs() < 0.05, "{t0}");
        let ef = net_throughput(26e6, 120, &ThroughputCfg::mhz20()).unwrap() / 1e6;
        assert!((ef - 9.49).abs() < 0.05, "{ef}");
        assert!(net_throughput(0.0, 10, &free).is_err());
        let c = ThroughputCfg::mhz40();
        assert!(net_throughput(28e6, 101, &c).unwrap() < net_throughput(28e6, 100, &c).unwrap());
        assert!(net_throughput(21e6, 100, &c).unwrap() < net_throughput(28e6, 100, &c).unwrap());
    }

    #[test]
    fn overhead_examples() {
        use QuantKind::*;
        assert_eq!(standard_overhead_bits(3, 1, 28, 1, Type1).unwrap(), 896);
        assert_eq!(standard_overhead_bits(3, 1, 28, 1, Type0).unwrap(), 672);
        assert_eq!(standard_overhead_bits(2, 1, 52, 2, Type0).unwrap(), 312);
        assert_eq!(standard_overhead_bits(2, 1, 52, 4, Type1).unwrap(), 208);
        assert!(standard_overhead_bits(2, 1, 52, 3, Type1).is_err());
        assert_eq!(budget_stride(3, 1, 28, Type0, 100).unwrap(), 7);
        assert_eq!(strided_overhead_bits(3, 1, 28, 7, Type0).unwrap(), 96);
        assert!(budget_stride(3, 1, 28, Type1, 20).is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in ["T0G1", "T1G4", "T0B100", "EFNet", "Perfect"] {
            assert_eq!(s.parse::<Scheme>().unwrap().to_string(), s);
        }
        let r: Scheme = "ref:LB-SciFi:136:-14.38".parse().unwrap();
        assert_eq!(r, Scheme::FixedReference { label: "LB-SciFi".into(), overhead_bits: 136, evm_db: -14.38 });
        for bad in ["T2G1", "T0G3", "T0B0", "ref:x:1", "foo", "T0G"] {
            assert!(bad.parse::<Scheme>().is_err(), "{bad}");
        }
    }

    #[test]
    fn fixed_reference_row() {
        let cfg = EvalCfg { throughput: ThroughputCfg::mhz20(), ..EvalCfg::default() };
        let s: Scheme = "ref:LB-SciFi:136:-14.38".parse().unwrap();
        let (r, _) = evaluate_scheme(&s, &[], 1, None, &cfg).unwrap();
        assert!((r.net_mbps - 8.39).abs() < 0.05, "{}", r.net_mbps);
        assert_eq!(r.gross_mbps, 19.5);
        assert_eq!(r.rho, None);
    }

    fn random_link(rng: &mut impl Rng) -> (ComplexMatrix, ComplexMatrix) {
        let h = ComplexMatrix::new(
            2,
            3,
            (0..6).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect(),
        )
        .unwrap();
        let mut v = crate::linalg::extract_beamforming(&crate::linalg::svd(&h).unwrap(), 1).unwrap();
        phase_normalize_columns(&mut v);
        (h, v)
    }

    #[test]
    fn noiseless_link_hits_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (h, v) = random_link(&mut rng);
        let cfg = EvmCfg { noise_floor_dbm: f64::NEG_INFINITY, ..EvmCfg::default() };
        let evm = simulate_evm(&[v], &[h], &cfg, &mut rng).unwrap();
        assert_eq!(evm, EVM_FLOOR_DB);
    }

    #[test]
    fn monte_carlo_matches_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let links: Vec<_> = (0..4).map(|_| random_link(&mut rng)).collect();
        let (h, v): (Vec<_>, Vec<_>) = links.into_iter().unzip();
        let cfg = EvmCfg { n_symbols: 25_000, ..EvmCfg::default() };
        let sim = simulate_evm(&v, &h, &cfg, &mut rng).unwrap();
        let expect = analytic_evm_db(&v, &h, &cfg).unwrap();
        assert!((sim - expect).abs() < 0.5, "simulated {sim} analytic {expect}");
    }

    #[test]
    fn coarse_feedback_is_worse() {
        let ch = ChannelModelCfg { seed: 4, ..ChannelModelCfg::default() };
        let test: Vec<_> = (0..40).map(|p| gen_channel(&ch, p).unwrap()).collect();
        let cfg = EvalCfg::default();
        let (perfect, _) = evaluate_scheme(&Scheme::Perfect, &test, 1, None, &cfg).unwrap();
        let (coarse, _) = evaluate_scheme(&"T0G4".parse().unwrap(), &test, 1, None, &cfg).unwrap();
        assert_eq!(perfect.rho, Some(1.0));
        assert_eq!(perfect.overhead_bits, 0);
        assert!(coarse.evm_db > perfect.evm_db);
        assert!(coarse.rho.unwrap() < 1.0);
        assert_eq!(coarse.overhead_bits, 7 * 24);
    }

    #[test]
    fn perfect_feedback_calibration() {
        // Default link budget lands single-stream perfect feedback within 1 dB of -18 dB.
        let ch = ChannelModelCfg { seed: 5, ..ChannelModelCfg::default() };
        let test: Vec<_> = (0..300).map(|p| gen_channel(&ch, p).unwrap()).collect();
        let (r, _) = evaluate_scheme(&Scheme::Perfect, &test, 1, None, &EvalCfg::default()).unwrap();
        assert!((r.evm_db + 18.06).abs() < 1.0, "{}", r.evm_db);
    }

    #[test]
    fn efnet_without_model_is_an_error() {
        let ch = ChannelModelCfg::default();
        let test = vec![gen_channel(&ch, 0).unwrap()];
        assert!(evaluate_scheme(&Scheme::Efnet, &test, 1, None, &EvalCfg::default()).is_err());
    }

    #[test]
    fn report_round_trip() {
        let rows = vec![
            SchemeResult { scheme: "T0G1".into(), overhead_bits: 672, rho: Some(0.99), evm_db: -17.85, gross_mbps: 28.0, net_mbps: 7.66 },
            SchemeResult { scheme: "LB".into(), overhead_bits: 136, rho: None, evm_db: -14.0, gross_mbps: 19.5, net_mbps: 8.4 },
        ];
        let mut buf = Vec::new();
        write_report_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scheme,overhead_bits,rho,evm_db,gross_mbps,net_mbps\n"));
        assert!(text.contains("LB,136,,"));
        assert_eq!(read_report_csv(buf.as_slice()).unwrap(), rows);
        assert!(read_report_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
