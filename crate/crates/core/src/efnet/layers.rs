//! Layers with hand-written backward passes.
//!
//! Layers do not own parameters. Each one records offsets into the model's flat
//! parameter vector; `forward` reads from that vector and `backward`
//! accumulates into a gradient vector of the same layout.

use super::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.3;

#[inline]
pub fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
pub fn leaky_grad(pre: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn leaky_map(t: &Tensor) -> Tensor {
    Tensor { data: t.data.iter().map(|&x| leaky(x)).collect(), ..*t }
}

/// `d_pre = d_post * leaky'(pre)`, in place on `d`.
pub fn leaky_backward(pre: &Tensor, d: &mut Tensor) {
    for (g, &z) in d.data.iter_mut().zip(&pre.data) {
        *g *= leaky_grad(z);
    }
}

/// What a parameter block belongs to. Used for initialization and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    DenseWeight,
    DenseBias,
    AttentionWeight,
    AttentionBias,
}

#[derive(Debug, Clone)]
pub struct ParamGroup {
    pub name: String,
    pub kind: ParamKind,
    pub start: usize,
    pub len: usize,
    pub fan_in: usize,
}

/// Hands out consecutive ranges of the flat parameter vector.
#[derive(Debug, Default)]
pub struct ParamAllocator {
    pub groups: Vec<ParamGroup>,
    next: usize,
}

impl ParamAllocator {
    pub fn alloc(&mut self, name: String, kind: ParamKind, len: usize, fan_in: usize) -> usize {
        let start = self.next;
        self.groups.push(ParamGroup { name, kind, start, len, fan_in });
        self.next += len;
        start
    }

    pub fn total(&self) -> usize {
        self.next
    }
}

/// Same-padded 2-D convolution. Weights are laid out `[ky][kx][in][out]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    weight: usize,
    bias: usize,
}

impl Conv2d {
    pub fn new(alloc: &mut ParamAllocator, name: &str, in_c: usize, out_c: usize, kh: usize, kw: usize) -> Self {
        let fan_in = kh * kw * in_c;
        let weight = alloc.alloc(format!("{name}.weight"), ParamKind::ConvWeight, fan_in * out_c, fan_in);
        let bias = alloc.alloc(format!("{name}.bias"), ParamKind::ConvBias, out_c, fan_in);
        Self { in_c, out_c, kh, kw, weight, bias }
    }

    /// Valid kernel taps for output row/col `o` along an axis of length `n`
    /// with kernel size `k`: yields (kernel index, input index).
    #[inline]
    fn taps(o: usize, k: usize, n: usize) -> impl Iterator<Item = (usize, usize)> {
        let pad = k / 2;
        (0..k).filter_map(move |kk| {
            let i = (o + kk).checked_sub(pad)?;
            (i < n).then_some((kk, i))
        })
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> Tensor {
        debug_assert_eq!(x.c, self.in_c);
        let (h, w, ic, oc) = (x.h, x.w, self.in_c, self.out_c);
        let bias = &p[self.bias..self.bias + oc];
        let wts = &p[self.weight..self.weight + self.kh * self.kw * ic * oc];
        let mut out = Tensor::zeros(h, w, oc);
        for oy in 0..h {
            for ox in 0..w {
                let o = &mut out.data[(oy * w + ox) * oc..][..oc];
                o.copy_from_slice(bias);
                for (ky, iy) in Self::taps(oy, self.kh, h) {
                    for (kx, ix) in Self::taps(ox, self.kw, w) {
                        let xin = &x.data[(iy * w + ix) * ic..][..ic];
                        let wk = &wts[(ky * self.kw + kx) * ic * oc..][..ic * oc];
                        for (xv, wrow) in xin.iter().zip(wk.chunks_exact(oc)) {
                            for (acc, wv) in o.iter_mut().zip(wrow) {
                                *acc += xv * wv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `g`; returns the input gradient
    /// when `need_dx`.
    pub fn backward(&self, p: &[f64], x: &Tensor, dy: &Tensor, g: &mut [f64], need_dx: bool) -> Option<Tensor> {
        let (h, w, ic, oc) = (x.h, x.w, self.in_c, self.out_c);
        let nw = self.kh * self.kw * ic * oc;
        let wts = &p[self.weight..self.weight + nw];
        let mut dx = need_dx.then(|| Tensor::zeros(h, w, ic));
        for oy in 0..h {
            for ox in 0..w {
                let d = &dy.data[(oy * w + ox) * oc..][..oc];
                for (gb, dv) in g[self.bias..self.bias + oc].iter_mut().zip(d) {
                    *gb += dv;
                }
                for (ky, iy) in Self::taps(oy, self.kh, h) {
                    for (kx, ix) in Self::taps(ox, self.kw, w) {
                        let base = (iy * w + ix) * ic;
                        let xin = &x.data[base..base + ic];
                        let koff = (ky * self.kw + kx) * ic * oc;
                        let gk = &mut g[self.weight + koff..self.weight + koff + ic * oc];
                        for (xv, grow) in xin.iter().zip(gk.chunks_exact_mut(oc)) {
                            for (gv, dv) in grow.iter_mut().zip(d) {
                                *gv += xv * dv;
                            }
                        }
                        if let Some(dx) = dx.as_mut() {
                            let wk = &wts[koff..koff + ic * oc];
                            for (dxv, wrow) in dx.data[base..base + ic].iter_mut().zip(wk.chunks_exact(oc)) {
                                *dxv += wrow.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Fully connected layer, weights `[out][in]` followed by the bias.
#[derive(Debug, Clone)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    weight: usize,
    bias: usize,
}

impl Dense {
    pub fn new(alloc: &mut ParamAllocator, name: &str, n_in: usize, n_out: usize, kinds: (ParamKind, ParamKind)) -> Self {
        let weight = alloc.alloc(format!("{name}.weight"), kinds.0, n_in * n_out, n_in);
        let bias = alloc.alloc(format!("{name}.bias"), kinds.1, n_out, n_in);
        Self { n_in, n_out, weight, bias }
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_in);
        let wts = &p[self.weight..self.weight + self.n_in * self.n_out];
        wts.chunks_exact(self.n_in)
            .zip(&p[self.bias..self.bias + self.n_out])
            .map(|(row, b)| b + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }

    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64], need_dx: bool) -> Option<Vec<f64>> {
        let n = self.n_in * self.n_out;
        for (gb, d) in g[self.bias..self.bias + self.n_out].iter_mut().zip(dy) {
            *gb += d;
        }
        for (grow, d) in g[self.weight..self.weight + n].chunks_exact_mut(self.n_in).zip(dy) {
            if *d != 0.0 {
                for (gv, xv) in grow.iter_mut().zip(x) {
                    *gv += d * xv;
                }
            }
        }
        need_dx.then(|| {
            let mut dx = vec![0.0; self.n_in];
            for (row, d) in p[self.weight..self.weight + n].chunks_exact(self.n_in).zip(dy) {
                if *d != 0.0 {
                    for (dxv, wv) in dx.iter_mut().zip(row) {
                        *dxv += d * wv;
                    }
                }
            }
            dx
        })
    }
}

/// Squeeze-and-excitation style channel attention: global average pool,
/// FC down to `C/τ` with leaky ReLU, FC back to `C` with sigmoid, then
/// per-channel rescaling of the input.
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    pub fc1: Dense,
    pub fc2: Dense,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pooled: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ChannelAttention {
    pub fn new(alloc: &mut ParamAllocator, name: &str, channels: usize, tau: usize) -> Self {
        let kinds = (ParamKind::AttentionWeight, ParamKind::AttentionBias);
        let reduced = channels / tau;
        Self {
            fc1: Dense::new(alloc, &format!("{name}.fc1"), channels, reduced, kinds),
            fc2: Dense::new(alloc, &format!("{name}.fc2"), reduced, channels, kinds),
        }
    }

    pub fn forward(&self, p: &[f64], f: &Tensor) -> (Tensor, AttentionCache) {
        let c = f.c;
        let hw = (f.h * f.w) as f64;
        let mut pooled = vec![0.0; c];
        for px in f.data.chunks_exact(c) {
            for (s, v) in pooled.iter_mut().zip(px) {
                *s += v;
            }
        }
        pooled.iter_mut().for_each(|s| *s /= hw);
        let z1 = self.fc1.forward(p, &pooled);
        let a1: Vec<f64> = z1.iter().map(|&z| leaky(z)).collect();
        let weights: Vec<f64> = self.fc2.forward(p, &a1).into_iter().map(sigmoid).collect();
        let mut out = f.clone();
        for px in out.data.chunks_exact_mut(c) {
            for (v, s) in px.iter_mut().zip(&weights) {
                *v *= s;
            }
        }
        (out, AttentionCache { pooled, z1, a1, weights })
    }

    pub fn backward(&self, p: &[f64], f: &Tensor, cache: &AttentionCache, dout: &Tensor, g: &mut [f64]) -> Tensor {
        let c = f.c;
        let hw = (f.h * f.w) as f64;
        let mut dweights = vec![0.0; c];
        let mut df = dout.clone();
        for (dpx, fpx) in df.data.chunks_exact_mut(c).zip(f.data.chunks_exact(c)) {
            for ((d, fv), (dw, s)) in dpx.iter_mut().zip(fpx).zip(dweights.iter_mut().zip(&cache.weights)) {
                *dw += *d * fv;
                *d *= s;
            }
        }
        let dz2: Vec<f64> = dweights
            .iter()
            .zip(&cache.weights)
            .map(|(d, s)| d * s * (1.0 - s))
            .collect();
        let da1 = self.fc2.backward(p, &cache.a1, &dz2, g, true).expect("requested dx");
        let dz1: Vec<f64> = da1.iter().zip(&cache.z1).map(|(d, &z)| d * leaky_grad(z)).collect();
        let dpooled = self.fc1.backward(p, &cache.pooled, &dz1, g, true).expect("requested dx");
        for dpx in df.data.chunks_exact_mut(c) {
            for (d, dp) in dpx.iter_mut().zip(&dpooled) {
                *d += dp / hw;
            }
        }
        df
    }
}

/// conv3×3 → leaky → attention → conv3×3 → leaky → attention, plus identity skip.
#[derive(Debug, Clone)]
pub struct CaRefineBlock {
    pub conv1: Conv2d,
    pub att1: ChannelAttention,
    pub conv2: Conv2d,
    pub att2: ChannelAttention,
}

#[derive(Debug, Clone)]
pub struct RefineCache {
    z1: Tensor,
    a1: Tensor,
    att1: AttentionCache,
    c1: Tensor,
    z2: Tensor,
    a2: Tensor,
    att2: AttentionCache,
}

impl CaRefineBlock {
    pub fn new(alloc: &mut ParamAllocator, name: &str, channels: usize, tau: usize) -> Self {
        Self {
            conv1: Conv2d::new(alloc, &format!("{name}.conv1"), channels, channels, 3, 3),
            att1: ChannelAttention::new(alloc, &format!("{name}.att1"), channels, tau),
            conv2: Conv2d::new(alloc, &format!("{name}.conv2"), channels, channels, 3, 3),
            att2: ChannelAttention::new(alloc, &format!("{name}.att2"), channels, tau),
        }
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> (Tensor, RefineCache) {
        let z1 = self.conv1.forward(p, x);
        let a1 = leaky_map(&z1);
        let (c1, att1) = self.att1.forward(p, &a1);
        let z2 = self.conv2.forward(p, &c1);
        let a2 = leaky_map(&z2);
        let (mut out, att2) = self.att2.forward(p, &a2);
        for (o, xv) in out.data.iter_mut().zip(&x.data) {
            *o += xv;
        }
        (out, RefineCache { z1, a1, att1, c1, z2, a2, att2 })
    }

    pub fn backward(&self, p: &[f64], x: &Tensor, cache: &RefineCache, dout: &Tensor, g: &mut [f64]) -> Tensor {
        let mut d = self.att2.backward(p, &cache.a2, &cache.att2, dout, g);
        leaky_backward(&cache.z2, &mut d);
        let d = self.conv2.backward(p, &cache.c1, &d, g, true).expect("requested dx");
        let mut d = self.att1.backward(p, &cache.a1, &cache.att1, &d, g);
        leaky_backward(&cache.z1, &mut d);
        let mut dx = self.conv1.backward(p, x, &d, g, true).expect("requested dx");
        for (a, b) in dx.data.iter_mut().zip(&dout.data) {
            *a += b;
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn random_tensor(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> Tensor {
        Tensor::from_vec(h, w, c, random_vec(rng, h * w * c)).unwrap()
    }

    /// Scalar probe `Σ r ⊙ f(x)` so every output entry feeds the gradient.
    fn probe(out: &Tensor, r: &[f64]) -> f64 {
        out.data.iter().zip(r).map(|(a, b)| a * b).sum()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn conv_identity_kernel() {
        let mut alloc = ParamAllocator::default();
        let conv = Conv2d::new(&mut alloc, "c", 1, 1, 3, 5);
        let mut p = vec![0.0; alloc.total()];
        // Centre tap of the 3×5 kernel.
        p[conv.weight + 5 + 2] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_tensor(&mut rng, 3, 7, 1);
        assert_eq!(conv.forward(&p, &x), x);
    }

    #[test]
    fn attention_with_zero_params_halves_input() {
        let mut alloc = ParamAllocator::default();
        let att = ChannelAttention::new(&mut alloc, "a", 4, 2);
        let p = vec![0.0; alloc.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, 2, 3, 4);
        let (y, cache) = att.forward(&p, &x);
        assert!(cache.weights.iter().all(|&w| w == 0.5));
        for (a, b) in y.data.iter().zip(&x.data) {
            assert_eq!(*a, b / 2.0);
        }
    }

    #[test]
    fn attention_weights_in_open_unit_interval() {
        let mut alloc = ParamAllocator::default();
        let att = ChannelAttention::new(&mut alloc, "a", 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: Vec<f64> = (0..alloc.total()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x = random_tensor(&mut rng, 3, 5, 8);
        let (_, cache) = att.forward(&p, &x);
        assert!(cache.weights.iter().all(|&w| w > 0.0 && w < 1.0));
    }

    #[test]
    fn attention_weight_tracks_channel_scaling() {
        let mut alloc = ParamAllocator::default();
        let att = ChannelAttention::new(&mut alloc, "a", 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_vec(&mut rng, alloc.total());
        let x = random_tensor(&mut rng, 2, 4, 4);
        let mut doubled = x.clone();
        for px in doubled.data.chunks_exact_mut(4) {
            px[1] *= 2.0;
        }
        let (_, a) = att.forward(&p, &x);
        let (_, b) = att.forward(&p, &doubled);
        assert!((a.weights[1] - b.weights[1]).abs() > 1e-9);
    }

    #[test]
    fn refine_block_zero_params_is_identity() {
        let mut alloc = ParamAllocator::default();
        let block = CaRefineBlock::new(&mut alloc, "b", 4, 2);
        let p = vec![0.0; alloc.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&mut rng, 3, 6, 4);
        let (y, _) = block.forward(&p, &x);
        assert_eq!(y, x);
    }

    /// Central differences on both parameters and inputs of a refine block.
    #[test]
    fn refine_block_gradients_match_finite_differences() {
        let mut alloc = ParamAllocator::default();
        let block = CaRefineBlock::new(&mut alloc, "b", 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<f64> = (0..alloc.total()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let x = random_tensor(&mut rng, 3, 5, 4);
        let r = random_vec(&mut rng, x.data.len());

        let (y, cache) = block.forward(&p, &x);
        assert!(y.same_shape(&x));
        let dout = Tensor { data: r.clone(), ..y.clone() };
        let mut g = vec![0.0; p.len()];
        let dx = block.backward(&p, &x, &cache, &dout, &mut g);

        let h = 1e-5;
        for i in (0..p.len()).step_by(7) {
            let mut pp = p.clone();
            pp[i] += h;
            let fp = probe(&block.forward(&pp, &x).0, &r);
            pp[i] -= 2.0 * h;
            let fm = probe(&block.forward(&pp, &x).0, &r);
            let num = (fp - fm) / (2.0 * h);
            assert!(rel_err(g[i], num) < 1e-4, "param {i}: {} vs {num}", g[i]);
        }
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let fp = probe(&block.forward(&p, &xp).0, &r);
            xp.data[i] -= 2.0 * h;
            let fm = probe(&block.forward(&p, &xp).0, &r);
            let num = (fp - fm) / (2.0 * h);
            assert!(rel_err(dx.data[i], num) < 1e-4, "input {i}");
        }
    }
}
