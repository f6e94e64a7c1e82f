use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    leaky_backward, leaky_map, CaRefineBlock, Conv2d, Dense, ParamAllocator, ParamGroup, ParamKind,
    RefineCache,
};
use super::quant::{dequantize_codeword, quantize_codeword, quantize_value, Codeword, CodewordBits};
use super::tensor::Tensor;
use crate::channel::VImage;
use crate::error::{invalid, Result};

pub const REFINE_BLOCKS: usize = 4;

/// Architecture, codeword and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfnetConfig {
    pub nt: usize,
    pub ns: usize,
    pub n_vs: usize,
    /// Codeword length.
    pub m: usize,
    /// Bits per codeword element.
    pub q: u32,
    pub conv_channels: usize,
    /// Attention reduction factor.
    pub tau: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Quantize the codeword in the training forward pass and pass gradients
    /// straight through the quantizer.
    pub straight_through: bool,
}

impl Default for EfnetConfig {
    fn default() -> Self {
        Self {
            nt: 3,
            ns: 1,
            n_vs: 28,
            m: 25,
            q: 4,
            conv_channels: 16,
            tau: 2,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 500,
            batch_size: 200,
            seed: 0,
            straight_through: false,
        }
    }
}

impl EfnetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nt == 0 || self.ns == 0 || self.ns > self.nt || self.n_vs == 0 {
            return Err(invalid(format!(
                "invalid image dimensions nt={} ns={} n_vs={}",
                self.nt, self.ns, self.n_vs
            )));
        }
        if self.m == 0 {
            return Err(invalid("codeword length m must be at least 1"));
        }
        if !(1..=16).contains(&self.q) {
            return Err(invalid(format!("q={} outside 1..=16", self.q)));
        }
        if self.tau == 0 || self.conv_channels == 0 || !self.conv_channels.is_multiple_of(self.tau) {
            return Err(invalid(format!(
                "tau={} must divide conv_channels={}",
                self.tau, self.conv_channels
            )));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(invalid("invalid Adam hyperparameters"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        Ok(())
    }

    /// Image height `Nt·Ns`.
    pub fn height(&self) -> usize {
        self.nt * self.ns
    }

    /// Feedback payload `M·q` in bits.
    pub fn feedback_bits(&self) -> usize {
        self.m * self.q as usize
    }
}

/// Layer graph; parameters live in [`EfnetModel::params`].
#[derive(Debug, Clone)]
pub(crate) struct Network {
    enc_conv: Conv2d,
    enc_fc: Dense,
    dec_fc: Dense,
    dec_conv_in: Conv2d,
    blocks: Vec<CaRefineBlock>,
    dec_conv_out: Conv2d,
    groups: Vec<ParamGroup>,
    n_params: usize,
    h: usize,
    w: usize,
}

impl Network {
    fn new(cfg: &EfnetConfig) -> Self {
        let (h, w, ch) = (cfg.height(), cfg.n_vs, cfg.conv_channels);
        let dense = (ParamKind::DenseWeight, ParamKind::DenseBias);
        let mut a = ParamAllocator::default();
        let enc_conv = Conv2d::new(&mut a, "encoder.conv", 2, ch, 3, 5);
        let enc_fc = Dense::new(&mut a, "encoder.fc", h * w * ch, cfg.m, dense);
        let dec_fc = Dense::new(&mut a, "decoder.fc", cfg.m, h * w * 2, dense);
        let dec_conv_in = Conv2d::new(&mut a, "decoder.conv_in", 2, ch, 3, 3);
        let blocks = (0..REFINE_BLOCKS)
            .map(|i| CaRefineBlock::new(&mut a, &format!("decoder.block{i}"), ch, cfg.tau))
            .collect();
        let dec_conv_out = Conv2d::new(&mut a, "decoder.conv_out", ch, 2, 3, 3);
        let n_params = a.total();
        Self {
            enc_conv,
            enc_fc,
            dec_fc,
            dec_conv_in,
            blocks,
            dec_conv_out,
            groups: a.groups,
            n_params,
            h,
            w,
        }
    }
}

/// Trained (or freshly initialized) EFNet.
#[derive(Debug, Clone)]
pub struct EfnetModel {
    pub config: EfnetConfig,
    /// Dataset normalization factor the model was trained with.
    pub scale: f64,
    params: Vec<f64>,
    net: Network,
}

impl PartialEq for EfnetModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.scale == other.scale && self.params == other.params
    }
}

struct EncoderCache {
    z: Tensor,
    a_flat: Vec<f64>,
    codeword: Vec<f64>,
}

struct DecoderCache {
    code: Vec<f64>,
    t0: Tensor,
    z_in: Tensor,
    block_inputs: Vec<Tensor>,
    block_caches: Vec<RefineCache>,
    out: Tensor,
}

impl EfnetModel {
    /// Seeded initialization: every weight and bias drawn from
    /// `U(-1/√fan_in, 1/√fan_in)`.
    pub fn init(config: EfnetConfig, scale: f64) -> Result<Self> {
        config.validate()?;
        let net = Network::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let mut params = vec![0.0; net.n_params];
        for g in &net.groups {
            let bound = 1.0 / (g.fan_in as f64).sqrt();
            for p in &mut params[g.start..g.start + g.len] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Self::from_params(config, scale, params)
    }

    pub fn from_params(config: EfnetConfig, scale: f64, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!("model scale must be positive, got {scale}")));
        }
        let net = Network::new(&config);
        if params.len() != net.n_params {
            return Err(invalid(format!(
                "configuration needs {} parameters, got {}",
                net.n_params,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("non-finite parameter"));
        }
        Ok(Self { config, scale, params, net })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params
    }

    /// Named parameter blocks in storage order.
    pub fn param_groups(&self) -> &[ParamGroup] {
        &self.net.groups
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if (x.h, x.w, x.c) != (self.net.h, self.net.w, 2) {
            return Err(invalid(format!(
                "input {}x{}x{} does not match model {}x{}x2",
                x.h, x.w, x.c, self.net.h, self.net.w
            )));
        }
        Ok(())
    }

    fn encode_cached(&self, x: &Tensor) -> EncoderCache {
        let p = &self.params;
        let z = self.net.enc_conv.forward(p, x);
        let a = leaky_map(&z);
        let codeword = self.net.enc_fc.forward(p, &a.data).into_iter().map(f64::tanh).collect();
        EncoderCache { z, a_flat: a.data, codeword }
    }

    fn decode_cached(&self, code: &[f64]) -> DecoderCache {
        let p = &self.params;
        let (h, w) = (self.net.h, self.net.w);
        let t0 = Tensor { h, w, c: 2, data: self.net.dec_fc.forward(p, code) };
        let z_in = self.net.dec_conv_in.forward(p, &t0);
        let mut x = leaky_map(&z_in);
        let mut block_inputs = Vec::with_capacity(self.net.blocks.len());
        let mut block_caches = Vec::with_capacity(self.net.blocks.len());
        for b in &self.net.blocks {
            let (y, cache) = b.forward(p, &x);
            block_inputs.push(std::mem::replace(&mut x, y));
            block_caches.push(cache);
        }
        block_inputs.push(x);
        let mut out = self.net.dec_conv_out.forward(p, block_inputs.last().expect("pushed above"));
        out.data.iter_mut().for_each(|v| *v = v.tanh());
        DecoderCache { code: code.to_vec(), t0, z_in, block_inputs, block_caches, out }
    }

    pub fn encode_tensor(&self, x: &Tensor) -> Result<Codeword> {
        self.check_input(x)?;
        Ok(Codeword { values: self.encode_cached(x).codeword })
    }

    pub fn decode_tensor(&self, c: &Codeword) -> Result<Tensor> {
        if c.values.len() != self.config.m {
            return Err(invalid(format!(
                "codeword has {} elements, model expects {}",
                c.values.len(),
                self.config.m
            )));
        }
        Ok(self.decode_cached(&c.values).out)
    }

    /// Unquantized reconstruction, as used by the training objective.
    pub fn reconstruct_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.encode_tensor(x)?;
        self.decode_tensor(&c)
    }

    /// Station encodes and quantizes, AP dequantizes and decodes.
    pub fn feedback(&self, img: &VImage) -> Result<(CodewordBits, VImage)> {
        let c = encoder_forward(self, img)?;
        let (bits, _) = quantize_codeword(&c, self.config.q)?;
        let c_hat = dequantize_codeword(&bits, self.config.q)?;
        Ok((bits, decoder_forward(self, &c_hat)?))
    }

    /// Adds `weight · ∂L/∂θ` for one sample into `grad` and returns the
    /// sample's loss `L = ‖v̂ − v‖²`.
    pub(crate) fn accumulate_gradient(&self, x: &Tensor, weight: f64, grad: &mut [f64]) -> f64 {
        self.accumulate_gradient_to(x, x, weight, grad)
    }

    /// As [`Self::accumulate_gradient`] with an explicit reconstruction target.
    fn accumulate_gradient_to(&self, x: &Tensor, target: &Tensor, weight: f64, grad: &mut [f64]) -> f64 {
        let p = &self.params;
        let enc = self.encode_cached(x);
        let code: Vec<f64> = if self.config.straight_through {
            enc.codeword.iter().map(|&v| quantize_value(v, self.config.q)).collect()
        } else {
            enc.codeword.clone()
        };
        let dec = self.decode_cached(&code);

        let mut loss = 0.0;
        let mut d = dec.out.clone();
        for (dv, (&y, &t)) in d.data.iter_mut().zip(dec.out.data.iter().zip(&target.data)) {
            let e = y - t;
            loss += e * e;
            *dv = 2.0 * e * weight * (1.0 - y * y);
        }
        let net = &self.net;
        let mut d = net
            .dec_conv_out
            .backward(p, dec.block_inputs.last().expect("non-empty"), &d, grad, true)
            .expect("requested dx");
        for (i, b) in net.blocks.iter().enumerate().rev() {
            d = b.backward(p, &dec.block_inputs[i], &dec.block_caches[i], &d, grad);
        }
        leaky_backward(&dec.z_in, &mut d);
        let d = net.dec_conv_in.backward(p, &dec.t0, &d, grad, true).expect("requested dx");
        let dcode = net.dec_fc.backward(p, &dec.code, &d.data, grad, true).expect("requested dx");

        // Straight-through: the quantizer's gradient is taken as identity.
        let du: Vec<f64> = dcode
            .iter()
            .zip(&enc.codeword)
            .map(|(g, c)| g * (1.0 - c * c))
            .collect();
        let dflat = net.enc_fc.backward(p, &enc.a_flat, &du, grad, true).expect("requested dx");
        let mut da = Tensor { data: dflat, ..enc.z.clone() };
        leaky_backward(&enc.z, &mut da);
        net.enc_conv.backward(p, x, &da, grad, false);
        loss
    }
}

/// Encoder: conv 3×5 → leaky ReLU → flatten → FC → tanh.
pub fn encoder_forward(model: &EfnetModel, v: &VImage) -> Result<Codeword> {
    model.encode_tensor(&Tensor::from_image(v))
}

/// Decoder: FC → reshape → conv 3×3 → leaky ReLU → 4 CA-refine blocks →
/// conv 3×3 → tanh. The output carries the model's scale.
pub fn decoder_forward(model: &EfnetModel, c: &Codeword) -> Result<VImage> {
    model.decode_tensor(c)?.to_image(model.scale)
}

/// Per-sample squared error summed over all entries.
pub fn sample_loss(v_hat: &Tensor, v: &Tensor) -> Result<f64> {
    if !v_hat.same_shape(v) {
        return Err(invalid("loss operands differ in shape"));
    }
    Ok(v_hat.data.iter().zip(&v.data).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Mean over the batch of per-sample squared error `‖v̂ − v‖²`.
pub fn mse_loss(v_hat: &[VImage], v: &[VImage]) -> Result<f64> {
    if v_hat.len() != v.len() || v.is_empty() {
        return Err(invalid("loss needs equally sized, non-empty batches"));
    }
    let mut total = 0.0;
    for (a, b) in v_hat.iter().zip(v) {
        total += sample_loss(&Tensor::from_image(a), &Tensor::from_image(b))?;
    }
    Ok(total / v.len() as f64)
}

/// Fixed partition count for batch reductions: results do not depend on the
/// number of worker threads.
const REDUCTION_CHUNKS: usize = 8;

/// Batch loss (mean per-sample loss) and its gradient with respect to every
/// parameter.
pub fn backward(model: &EfnetModel, batch: &[Tensor]) -> Result<(f64, Vec<f64>)> {
    use rayon::prelude::*;
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    for x in batch {
        model.check_input(x)?;
    }
    let weight = 1.0 / batch.len() as f64;
    let chunk = batch.len().div_ceil(REDUCTION_CHUNKS);
    let partials: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(chunk)
        .map(|xs| {
            let mut g = vec![0.0; model.n_params()];
            let loss = xs.iter().map(|x| model.accumulate_gradient(x, weight, &mut g)).sum::<f64>();
            (loss, g)
        })
        .collect();
    let mut grad = vec![0.0; model.n_params()];
    let mut loss = 0.0;
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss * weight, grad))
}
