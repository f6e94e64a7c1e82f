use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use csifb_core::channel::{
    build_dataset_from_source, build_vimage, ingest_csv, load_dataset, save_dataset, test_packets, ChannelRealization,
    ChannelSource, Dataset,
};
use csifb_core::efnet::checkpoint::{load_model, load_train_state, save_model, save_train_state};
use csifb_core::efnet::{EfnetConfig, EfnetModel, Trainer};
use csifb_core::eval::{evaluate_scheme, read_report_csv, write_report_csv, Scheme, SchemeResult};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn core_err(path: &Path) -> impl FnOnce(csifb_core::Error) -> CliError + '_ {
    move |e| CliError::from_core(path.display(), e)
}

/// Config echo written next to an artifact.
fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".toml");
    artifact.with_file_name(name)
}

fn write_sidecar(artifact: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let p = sidecar_path(artifact);
    std::fs::write(&p, cfg.to_toml()).map_err(|e| io_err(&p, e))
}

fn channel_source(cfg: &RunConfig) -> Result<ChannelSource, CliError> {
    match &cfg.capture_csv {
        Some(p) => {
            let c = &cfg.channel;
            let realizations = ingest_csv(p, c.nt, c.nr, c.n_vs).map_err(core_err(p))?;
            Ok(ChannelSource::Captured { realizations, n_fft: c.n_fft })
        }
        None => Ok(ChannelSource::Synthetic(cfg.channel.clone())),
    }
}

pub fn gen_data(cfg: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let out = out.unwrap_or(&cfg.output.dataset);
    let source = channel_source(cfg)?;
    let (d, clipped) = build_dataset_from_source(&source, cfg.samples, cfg.ns, cfg.channel.seed)
        .map_err(|e| CliError::from_core("dataset generation", e))?;
    save_dataset(&d, out).map_err(core_err(out))?;
    write_sidecar(out, cfg)?;
    println!("{}/{}/{}", d.split.train, d.split.validation, d.split.test);
    println!(
        "wrote {} samples ({} x {} x 2, scale {:.6}) to {}",
        d.images.len(),
        d.nt * d.ns,
        d.n_vs,
        d.scale,
        out.display()
    );
    if clipped > 0 {
        println!("clipped entries outside the training range: {clipped}");
    }
    Ok(())
}

fn load_checked_dataset(cfg: &RunConfig, path: &Path) -> Result<Dataset, CliError> {
    let d = load_dataset(path).map_err(core_err(path))?;
    let c = &cfg.channel;
    if (d.nt, d.nr, d.ns, d.n_vs) != (c.nt, c.nr, cfg.ns, c.n_vs) {
        return Err(CliError::Config(format!(
            "{}: dataset is nt={} nr={} ns={} n_vs={}, config says nt={} nr={} ns={} n_vs={}",
            path.display(),
            d.nt,
            d.nr,
            d.ns,
            d.n_vs,
            c.nt,
            c.nr,
            cfg.ns,
            c.n_vs
        )));
    }
    Ok(d)
}

pub fn train(cfg: &RunConfig, dataset: Option<&Path>, resume: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let data_path = dataset.unwrap_or(&cfg.output.dataset);
    let model_path = out.unwrap_or(&cfg.output.model);
    let d = load_checked_dataset(cfg, data_path)?;
    let mut trainer = match resume {
        Some(p) => {
            let mut state = load_train_state(p).map_err(core_err(p))?;
            // Only the epoch count may change, which extends or ends the run.
            let saved = EfnetConfig { epochs: cfg.efnet.epochs, ..state.model.config.clone() };
            if saved != cfg.efnet {
                return Err(CliError::Config(format!(
                    "{}: saved state was trained with a different [efnet] configuration",
                    p.display()
                )));
            }
            if cfg.efnet.epochs < state.epoch {
                return Err(CliError::Config(format!(
                    "{}: state has {} epochs, more than the configured {}",
                    p.display(),
                    state.epoch,
                    cfg.efnet.epochs
                )));
            }
            state.model.config.epochs = cfg.efnet.epochs;
            log::info!("resuming after epoch {}", state.epoch);
            Trainer::resume(state, &d).map_err(core_err(p))?
        }
        None => Trainer::new(cfg.efnet.clone(), &d).map_err(|e| CliError::from_core("training setup", e))?,
    };
    let state_path = &cfg.output.state;
    while !trainer.is_done() {
        if let Err(e) = trainer.step_epoch() {
            let last = trainer.state().epoch;
            return Err(CliError::Runtime(format!("training stopped: {e}; last good epoch {last}")));
        }
        save_train_state(trainer.state(), state_path).map_err(core_err(state_path))?;
    }
    let outcome = trainer.finish().map_err(|e| CliError::from_core("training", e))?;
    save_model(&outcome.model, model_path).map_err(core_err(model_path))?;
    write_sidecar(model_path, cfg)?;
    let log_path = &cfg.output.log;
    outcome.log.save_csv(log_path).map_err(core_err(log_path))?;
    println!(
        "trained {} epochs: initial val {:.5}, best val {:.5} at epoch {}",
        outcome.log.records.len(),
        outcome.initial_val_mse,
        outcome.best_val_mse,
        outcome.best_epoch
    );
    println!("model: {}  log: {}", model_path.display(), log_path.display());
    Ok(())
}

/// Channels of the test split, regenerated from the configured source.
fn test_channels(cfg: &RunConfig) -> Result<Vec<ChannelRealization>, CliError> {
    let source = channel_source(cfg)?;
    test_packets(cfg.samples, cfg.channel.seed)
        .into_iter()
        .map(|p| source.realization(p).map_err(|e| CliError::from_core("test channels", e)))
        .collect()
}

/// Report metadata written as JSON next to the CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportMeta {
    pub t_fixed_us: f64,
    pub seed: u64,
    pub test_samples: usize,
    pub config: RunConfig,
}

fn meta_path(report: &Path) -> PathBuf {
    report.with_extension("json")
}

pub fn eval(cfg: &RunConfig, dataset: Option<&Path>, model: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let schemes = cfg.parsed_schemes()?;
    let needs_model = schemes.iter().any(|s| matches!(s, Scheme::Efnet));
    let model: Option<EfnetModel> = match (needs_model, model) {
        (true, None) => return Err(CliError::Config("scheme efnet needs --model".into())),
        (true, Some(p)) => Some(load_model(p).map_err(core_err(p))?),
        (false, _) => None,
    };
    let test = test_channels(cfg)?;
    if let Some(p) = dataset {
        // The regenerated channels must reproduce the stored test images.
        let d = load_checked_dataset(cfg, p)?;
        let (img, _) = build_vimage(&test[0], cfg.ns, Some(d.scale)).map_err(core_err(p))?;
        if d.test().first() != Some(&img) {
            return Err(CliError::Config(format!(
                "{}: stored test split does not match channels regenerated from the configuration",
                p.display()
            )));
        }
    }
    let mut rows = Vec::with_capacity(schemes.len());
    for s in &schemes {
        let (r, diag) = evaluate_scheme(s, &test, cfg.ns, model.as_ref(), &cfg.eval)
            .map_err(|e| CliError::from_core(format!("scheme {s}"), e))?;
        if diag.excluded_vectors > 0 || diag.clipped_entries > 0 {
            println!(
                "{s}: {} zero-norm vectors excluded, {} entries clipped",
                diag.excluded_vectors, diag.clipped_entries
            );
        }
        rows.push(r);
    }
    let report = out.unwrap_or(&cfg.output.report);
    let f = File::create(report).map_err(|e| io_err(report, e))?;
    write_report_csv(&rows, BufWriter::new(f)).map_err(core_err(report))?;
    let meta = ReportMeta {
        t_fixed_us: cfg.eval.throughput.t_fixed * 1e6,
        seed: cfg.eval.seed,
        test_samples: test.len(),
        config: cfg.clone(),
    };
    let mp = meta_path(report);
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    std::fs::write(&mp, json).map_err(|e| io_err(&mp, e))?;
    print!("{}", format_table(&rows));
    println!("t_fixed = {:.1} us; report: {}", meta.t_fixed_us, report.display());
    Ok(())
}

pub fn format_table(rows: &[SchemeResult]) -> String {
    let mut s = format!(
        "{:<16} {:>9} {:>8} {:>8} {:>8} {:>8}\n",
        "scheme", "overhead", "rho", "evm_db", "gross", "net"
    );
    for r in rows {
        let rho = r.rho.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        s.push_str(&format!(
            "{:<16} {:>9} {:>8} {:>8.2} {:>8.2} {:>8.2}\n",
            r.scheme, r.overhead_bits, rho, r.evm_db, r.gross_mbps, r.net_mbps
        ));
    }
    s
}

/// Merges reports. Rows are keyed by scheme label and written in label order;
/// identical repeats collapse silently, conflicting repeats are flagged and
/// the first one kept.
pub fn merge_reports(reports: &[Vec<SchemeResult>]) -> (Vec<SchemeResult>, Vec<String>) {
    let mut merged: BTreeMap<String, SchemeResult> = BTreeMap::new();
    let mut conflicts = Vec::new();
    for rows in reports {
        for r in rows {
            match merged.get(&r.scheme) {
                Some(existing) if existing != r => conflicts.push(r.scheme.clone()),
                Some(_) => {}
                None => {
                    merged.insert(r.scheme.clone(), r.clone());
                }
            }
        }
    }
    (merged.into_values().collect(), conflicts)
}

pub fn compare(reports: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let mut all = Vec::with_capacity(reports.len());
    let mut t_fixed: Vec<(f64, &Path)> = Vec::new();
    for p in reports {
        let f = File::open(p).map_err(|e| io_err(p, e))?;
        let rows = read_report_csv(f).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        all.push(rows);
        let mp = meta_path(p);
        if let Ok(text) = std::fs::read_to_string(&mp) {
            match serde_json::from_str::<ReportMeta>(&text) {
                Ok(m) => t_fixed.push((m.t_fixed_us, p)),
                Err(e) => log::warn!("{}: unreadable metadata: {e}", mp.display()),
            }
        }
    }
    if let Some(&(first, fp)) = t_fixed.first() {
        for &(t, p) in &t_fixed[1..] {
            if t != first {
                let msg = format!(
                    "warning: t_fixed differs: {} uses {first} us, {} uses {t} us",
                    fp.display(),
                    p.display()
                );
                log::warn!("{msg}");
                eprintln!("{msg}");
            }
        }
    }
    let (rows, conflicts) = merge_reports(&all);
    for c in &conflicts {
        eprintln!("warning: conflicting rows for scheme {c}; keeping the first");
    }
    print!("{}", format_table(&rows));
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("compare.csv"));
    let mut w = csv::Writer::from_path(&out).map_err(|e| io_err(&out, e))?;
    w.write_record(["scheme", "overhead_bits", "rho", "net_mbps"]).map_err(|e| io_err(&out, e))?;
    for r in &rows {
        w.write_record([
            r.scheme.clone(),
            r.overhead_bits.to_string(),
            r.rho.map(|x| x.to_string()).unwrap_or_default(),
            r.net_mbps.to_string(),
        ])
        .map_err(|e| io_err(&out, e))?;
    }
    w.flush().map_err(|e| io_err(&out, e))?;
    println!("plot data: {}", out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(s: &str, net: f64) -> SchemeResult {
        SchemeResult { scheme: s.into(), overhead_bits: 10, rho: Some(0.9), evm_db: -15.0, gross_mbps: 21.0, net_mbps: net }
    }

    #[test]
    fn merge_with_self_has_no_conflicts() {
        let a = vec![row("T1G1", 7.0), row("EFNet", 9.0)];
        let (m, c) = merge_reports(&[a.clone(), a]);
        assert!(c.is_empty());
        assert_eq!(m.iter().map(|r| r.scheme.as_str()).collect::<Vec<_>>(), ["EFNet", "T1G1"]);
    }

    #[test]
    fn conflicting_rows_are_flagged() {
        let (m, c) = merge_reports(&[vec![row("T0G1", 7.0)], vec![row("T0G1", 7.5)]]);
        assert_eq!(c, ["T0G1"]);
        assert_eq!(m[0].net_mbps, 7.0);
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar_path(Path::new("a/model.efnet")), Path::new("a/model.efnet.toml"));
        assert_eq!(meta_path(Path::new("r/report.csv")), Path::new("r/report.json"));
    }
}
