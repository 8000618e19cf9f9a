//! Writing experiment results: CSV tables and JSON summaries.
//!
//! Every CSV starts with a `# config_hash: <hex>` line, and every summary
//! carries the same hash. Nothing time-dependent is written, so a rerun with
//! the same config produces identical files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::{BlockSummary, ExperimentConfig, ForecastReport, RegimeReport, ScalingReport};
use crate::kernel::BlockKernel;
use crate::error::{Error, Result};
use crate::kernel::{write_kernel, write_matrix_csv};
use crate::quantizer::StateId;
use crate::scaling::write_curves_csv;
use crate::sim::Trajectory;

pub const CONFIG_HASH_PREFIX: &str = "# config_hash: ";

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn csv(dir: &Path, name: &str, hash: &str) -> Result<BufWriter<File>> {
    let mut w = create(dir, name)?;
    writeln!(w, "{CONFIG_HASH_PREFIX}{hash}")?;
    Ok(w)
}

fn json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn save_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let mut w = create(dir, "config.toml")?;
    w.write_all(cfg.to_toml()?.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// `train_<r>.csv` per run.
pub fn write_training(dir: &Path, cfg: &ExperimentConfig, trajs: &[Trajectory]) -> Result<()> {
    let hash = cfg.hash();
    for (r, t) in trajs.iter().enumerate() {
        let mut w = csv(dir, &format!("train_{r}.csv"), &hash)?;
        t.write_csv(&mut w)?;
        w.flush()?;
    }
    save_config(dir, cfg)
}

pub fn write_regime(dir: &Path, cfg: &ExperimentConfig, report: &RegimeReport) -> Result<()> {
    let mut w = csv(dir, "regime_pdf.csv", &report.config_hash)?;
    writeln!(w, "case,coordinate,state,theta,prob")?;
    for (name, case) in [("over", &report.over), ("under", &report.under)] {
        for c in &case.coordinates {
            let precision = c.codec.precision;
            for (s, p) in c.pdf.iter().enumerate() {
                let theta = c.codec.decode(StateId::new(s as u32, precision)?);
                writeln!(w, "{name},{},{s},{theta},{p}", c.coordinate + 1)?;
            }
        }
    }
    w.flush()?;
    for (name, case) in [("over", &report.over), ("under", &report.under)] {
        let mut w = csv(dir, &format!("regime_{name}_sgd.csv"), &report.config_hash)?;
        case.trajectory.write_csv(&mut w)?;
        w.flush()?;
    }
    json(dir, "summary.json", report)?;
    save_config(dir, cfg)
}

fn write_blocks(dir: &Path, hash: &str, kernel: &BlockKernel) -> Result<()> {
    for (i, block) in kernel.diagonal().iter().enumerate() {
        let mut w = csv(dir, &format!("block_{}.csv", i + 1), hash)?;
        write_matrix_csv(block, &mut w)?;
        w.flush()?;
    }
    let mut w = create(dir, "kernel.bin")?;
    write_kernel(kernel, &mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EstimateSummary<'a> {
    config_hash: String,
    blocks: &'a [BlockSummary],
}

/// Training runs, `block_<i>.csv` per coordinate and the binary kernel.
pub fn write_estimate(
    dir: &Path,
    cfg: &ExperimentConfig,
    trajs: &[Trajectory],
    kernel: &BlockKernel,
    blocks: &[BlockSummary],
) -> Result<()> {
    let hash = cfg.hash();
    write_training(dir, cfg, trajs)?;
    write_blocks(dir, &hash, kernel)?;
    json(dir, "summary.json", &EstimateSummary { config_hash: hash, blocks })
}

pub fn write_forecast(dir: &Path, cfg: &ExperimentConfig, report: &ForecastReport) -> Result<()> {
    write_training(dir, cfg, &report.training)?;
    for (r, run) in report.forecasts.iter().enumerate() {
        let mut w = csv(dir, &format!("forecast_{r}.csv"), &report.config_hash)?;
        run.write_csv(&mut w)?;
        w.flush()?;
    }
    write_blocks(dir, &report.config_hash, &report.block_kernel)?;
    json(dir, "summary.json", report)
}

pub fn write_scaling(dir: &Path, cfg: &ExperimentConfig, report: &ScalingReport) -> Result<()> {
    let mut w = csv(dir, "scaling.csv", &report.config_hash)?;
    write_curves_csv(&report.curves, &mut w)?;
    w.flush()?;
    let mut w = csv(dir, "mixing.csv", &report.config_hash)?;
    writeln!(w, "p,q,rho,rate,points_used")?;
    for m in &report.mixing {
        writeln!(w, "{},{},{},{},{}", m.p, m.q, m.rho, m.rate, m.points_used)?;
    }
    w.flush()?;
    json(dir, "summary.json", report)?;
    save_config(dir, cfg)
}
