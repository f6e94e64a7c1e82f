//! Model and training-state files.
//!
//! Model layout (little-endian):
//!
//! ```text
//! "EFNET1\0"                                        7 bytes
//! nt, ns, n_vs, m, q, conv_channels, tau            7 × u32
//! lr, beta1, beta2, eps                             4 × f64
//! epochs, batch_size                                2 × u32
//! seed                                              u64
//! straight_through                                  u8
//! scale                                             f64
//! parameter count                                   u32
//! parameters                                        count × f64
//! CRC32 of the parameter bytes                      u32
//! ```
//!
//! Parameters follow [`EfnetModel::param_groups`]: encoder conv weight and
//! bias, encoder FC, decoder FC, decoder input conv, then for each refine
//! block conv1, attention 1 (fc1, fc2), conv2, attention 2, and finally the
//! output conv. Conv weights are `[ky][kx][in][out]`, FC weights
//! `[out][in]`; the decoder FC output is reshaped row-major as
//! (height, width, channel).
//!
//! The training-state file wraps a model with the optimizer moments, best
//! parameters and the log so far, and is covered by a CRC32 over everything
//! before it.

use std::path::Path;

use super::adam::AdamState;
use super::model::{EfnetConfig, EfnetModel};
use super::train::{EpochRecord, TrainState, TrainingLog};
use crate::binio::{put_f64s, ByteCursor};
use crate::error::{format_err, invalid, Error, Result};

pub const MODEL_MAGIC: &[u8; 7] = b"EFNET1\0";
pub const STATE_MAGIC: &[u8; 7] = b"EFTRN1\0";

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| invalid(format!("{what}={v} does not fit in u32")))
}

fn put_config(out: &mut Vec<u8>, c: &EfnetConfig) -> Result<()> {
    for (v, name) in [
        (c.nt, "nt"),
        (c.ns, "ns"),
        (c.n_vs, "n_vs"),
        (c.m, "m"),
        (c.q as usize, "q"),
        (c.conv_channels, "conv_channels"),
        (c.tau, "tau"),
    ] {
        out.extend_from_slice(&u32_of(v, name)?.to_le_bytes());
    }
    put_f64s(out, &[c.lr, c.beta1, c.beta2, c.eps]);
    out.extend_from_slice(&u32_of(c.epochs, "epochs")?.to_le_bytes());
    out.extend_from_slice(&u32_of(c.batch_size, "batch_size")?.to_le_bytes());
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.push(u8::from(c.straight_through));
    Ok(())
}

fn read_config(c: &mut ByteCursor) -> Result<EfnetConfig> {
    let at = c.pos as u64;
    let mut dims = [0usize; 7];
    for (d, name) in dims.iter_mut().zip(["nt", "ns", "n_vs", "m", "q", "conv_channels", "tau"]) {
        *d = c.u32(name)? as usize;
    }
    let [nt, ns, n_vs, m, q, conv_channels, tau] = dims;
    let cfg = EfnetConfig {
        nt,
        ns,
        n_vs,
        m,
        q: q as u32,
        conv_channels,
        tau,
        lr: c.f64("lr")?,
        beta1: c.f64("beta1")?,
        beta2: c.f64("beta2")?,
        eps: c.f64("eps")?,
        epochs: c.u32("epochs")? as usize,
        batch_size: c.u32("batch_size")? as usize,
        seed: c.u64("seed")?,
        straight_through: match c.u8("straight_through")? {
            0 => false,
            1 => true,
            v => return Err(format_err(c.pos as u64 - 1, format!("straight_through flag {v} is not 0 or 1"))),
        },
    };
    cfg.validate().map_err(|e| format_err(at, format!("invalid config block: {e}")))?;
    Ok(cfg)
}

pub fn model_to_bytes(model: &EfnetModel) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(128 + 8 * model.n_params());
    out.extend_from_slice(MODEL_MAGIC);
    put_config(&mut out, &model.config)?;
    out.extend_from_slice(&model.scale.to_le_bytes());
    out.extend_from_slice(&u32_of(model.n_params(), "parameter count")?.to_le_bytes());
    let start = out.len();
    put_f64s(&mut out, model.params());
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn read_model(c: &mut ByteCursor) -> Result<EfnetModel> {
    if c.take(MODEL_MAGIC.len(), "magic")? != MODEL_MAGIC {
        return Err(format_err(c.pos as u64 - 7, "bad magic, not an EFNET1 model"));
    }
    let config = read_config(c)?;
    let scale_at = c.pos as u64;
    let scale = c.f64("scale")?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(format_err(scale_at, format!("invalid scale {scale}")));
    }
    let count_at = c.pos as u64;
    let count = c.u32("parameter count")? as usize;
    let params_at = c.pos;
    let raw = c.take(count.checked_mul(8).ok_or_else(|| format_err(count_at, "count overflows"))?, "parameters")?;
    let crc_at = c.pos as u64;
    let stored = c.u32("checksum")?;
    if crc32fast::hash(raw) != stored {
        return Err(format_err(crc_at, "parameter checksum mismatch"));
    }
    let params = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    EfnetModel::from_params(config, scale, params)
        .map_err(|e| format_err(if matches!(e, Error::InvalidInput(_)) { count_at } else { params_at as u64 }, e.to_string()))
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<EfnetModel> {
    let mut c = ByteCursor::new(bytes);
    let m = read_model(&mut c)?;
    if c.remaining() != 0 {
        return Err(format_err(c.pos as u64, format!("{} trailing bytes", c.remaining())));
    }
    Ok(m)
}

pub fn save_model(model: &EfnetModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EfnetModel> {
    model_from_bytes(&std::fs::read(path)?)
}

pub fn state_to_bytes(s: &TrainState) -> Result<Vec<u8>> {
    let n = s.model.n_params();
    let mut out = Vec::new();
    out.extend_from_slice(STATE_MAGIC);
    out.extend_from_slice(&model_to_bytes(&s.model)?);
    out.extend_from_slice(&s.adam.t.to_le_bytes());
    put_f64s(&mut out, &s.adam.m);
    put_f64s(&mut out, &s.adam.v);
    debug_assert_eq!(s.adam.m.len(), n);
    out.extend_from_slice(&(s.epoch as u64).to_le_bytes());
    put_f64s(&mut out, &[s.initial_val_mse, s.best_val_mse]);
    out.extend_from_slice(&(s.best_epoch as u64).to_le_bytes());
    put_f64s(&mut out, &s.best_params);
    out.extend_from_slice(&(s.log.records.len() as u64).to_le_bytes());
    for r in &s.log.records {
        out.extend_from_slice(&(r.epoch as u64).to_le_bytes());
        put_f64s(&mut out, &[r.train_mse, r.val_mse, r.wall_seconds]);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn state_from_bytes(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < STATE_MAGIC.len() + 4 {
        return Err(format_err(0, "file too short for a training state"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(format_err(body.len() as u64, "training state checksum mismatch"));
    }
    let mut c = ByteCursor::new(body);
    if c.take(STATE_MAGIC.len(), "magic")? != STATE_MAGIC {
        return Err(format_err(0, "bad magic, not an EFTRN1 training state"));
    }
    let model = read_model(&mut c)?;
    let n = model.n_params();
    let adam = AdamState { t: c.u64("adam step")?, m: c.f64_vec(n, "first moments")?, v: c.f64_vec(n, "second moments")? };
    let epoch = c.u64("epoch")? as usize;
    let initial_val_mse = c.f64("initial validation loss")?;
    let best_val_mse = c.f64("best validation loss")?;
    let best_epoch = c.u64("best epoch")? as usize;
    let best_params = c.f64_vec(n, "best parameters")?;
    let n_records = c.u64("log length")? as usize;
    if n_records != epoch || n_records.saturating_mul(32) > c.remaining() {
        return Err(format_err(c.pos as u64, format!("log length {n_records} inconsistent with epoch {epoch}")));
    }
    let mut records = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        records.push(EpochRecord {
            epoch: c.u64("log epoch")? as usize,
            train_mse: c.f64("train loss")?,
            val_mse: c.f64("validation loss")?,
            wall_seconds: c.f64("wall time")?,
        });
    }
    if c.remaining() != 0 {
        return Err(format_err(c.pos as u64, format!("{} trailing bytes", c.remaining())));
    }
    Ok(TrainState { model, adam, epoch, initial_val_mse, best_val_mse, best_epoch, best_params, log: TrainingLog { records } })
}

pub fn save_train_state(s: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    // Write then rename so an interrupted save leaves the previous state intact.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, state_to_bytes(s)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_train_state(path: impl AsRef<Path>) -> Result<TrainState> {
    state_from_bytes(&std::fs::read(path)?)
}
