//! Run configuration file.
//!
//! ```toml
//! samples = 10000
//! ns = 1
//! schemes = ["T0G1", "T1G1", "efnet", "perfect"]
//!
//! [channel]      # tapped-delay-line model
//! nt = 3
//! nr = 2
//! n_taps = 8
//!
//! [efnet]        # architecture and optimizer
//! m = 25
//! q = 4
//! epochs = 60
//!
//! [eval]
//! seed = 0
//! [eval.throughput]
//! t_fixed = 131.7e-6
//! [eval.evm]
//! path_loss_db = 103.0
//!
//! [output]
//! dataset = "dataset.bin"
//! model = "model.efnet"
//! ```
//!
//! Every section and key is optional; absent values take their defaults.

use std::path::{Path, PathBuf};

use csifb_core::channel::ChannelModelCfg;
use csifb_core::efnet::EfnetConfig;
use csifb_core::eval::{EvalCfg, Scheme};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub log: PathBuf,
    pub report: PathBuf,
    /// Training state written after every epoch, for `train --resume`.
    pub state: PathBuf,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            dataset: "dataset.bin".into(),
            model: "model.efnet".into(),
            log: "train_log.csv".into(),
            report: "report.csv".into(),
            state: "train_state.bin".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Packets in the dataset before the 8:1:1 split.
    pub samples: usize,
    /// Spatial streams.
    pub ns: usize,
    /// Captured CSI (CSV) to use instead of the synthetic channel model.
    pub capture_csv: Option<PathBuf>,
    pub schemes: Vec<String>,
    pub channel: ChannelModelCfg,
    pub efnet: EfnetConfig,
    pub eval: EvalCfg,
    pub output: OutputPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            ns: 1,
            capture_csv: None,
            schemes: ["T0G1", "T1G1", "T0G2", "T0G4", "efnet", "perfect"].map(String::from).to_vec(),
            channel: ChannelModelCfg::default(),
            efnet: EfnetConfig::default(),
            eval: EvalCfg::default(),
            output: OutputPaths::default(),
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `--seed` to every seeded component.
    pub fn set_seed(&mut self, seed: u64) {
        self.channel.seed = seed;
        self.efnet.seed = seed;
        self.eval.seed = seed;
    }

    pub fn parsed_schemes(&self) -> Result<Vec<Scheme>, CliError> {
        self.schemes
            .iter()
            .map(|s| s.parse::<Scheme>().map_err(|e| cfg_err(e.to_string())))
            .collect()
    }

    /// Cross-field checks; nothing touches the filesystem.
    pub fn validate(&self) -> Result<(), CliError> {
        let c = &self.channel;
        c.validate().map_err(|e| cfg_err(format!("[channel] {e}")))?;
        self.efnet.validate().map_err(|e| cfg_err(format!("[efnet] {e}")))?;
        self.eval.validate().map_err(|e| cfg_err(format!("[eval] {e}")))?;
        if self.samples < 10 {
            return Err(cfg_err(format!("samples={} is below the minimum of 10", self.samples)));
        }
        if self.ns == 0 || self.ns > c.nt.min(c.nr) {
            return Err(cfg_err(format!("ns={} must be in 1..={}", self.ns, c.nt.min(c.nr))));
        }
        let e = &self.efnet;
        if (e.nt, e.ns, e.n_vs) != (c.nt, self.ns, c.n_vs) {
            return Err(cfg_err(format!(
                "[efnet] nt={} ns={} n_vs={} disagree with channel nt={} ns={} n_vs={}",
                e.nt, e.ns, e.n_vs, c.nt, self.ns, c.n_vs
            )));
        }
        let t = &self.eval.throughput;
        if t.n_vs != c.n_vs || t.n_fft != c.n_fft {
            return Err(cfg_err(format!(
                "[eval.throughput] n_vs={} n_fft={} disagree with channel n_vs={} n_fft={}",
                t.n_vs, t.n_fft, c.n_vs, c.n_fft
            )));
        }
        for s in self.parsed_schemes()? {
            match s {
                Scheme::Standard { .. } | Scheme::StandardBudget { .. } if c.nt < 2 => {
                    return Err(cfg_err(format!("scheme {s} needs nt >= 2, channel has nt={}", c.nt)));
                }
                Scheme::StandardBudget { kind, budget_bits } => {
                    csifb_core::eval::budget_stride(c.nt, self.ns, c.n_vs, kind, budget_bits)
                        .map_err(|e| cfg_err(format!("scheme {s}: {e}")))?;
                }
                _ => {}
            }
        }
        Ok(())
    }
}
