//! The `collect`, `run`, `sweep` and `report` commands as library calls.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::sim::{Summary, metrics};
use crate::trajectory::{TrajectoryData, hankel};
use crate::linalg::numerical_rank;

/// Process exit code for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parse(_) | Error::DataTooShort { .. } => 2,
        _ => 1,
    }
}

fn echo_lines(cfg: &ExperimentConfig) -> String {
    cfg.echo().lines().map(|l| format!("# {l}\n")).collect()
}

/// Persistency-of-excitation certificate of collected data.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectReport {
    pub path: PathBuf,
    pub samples: usize,
    pub order: usize,
    pub rank: usize,
    pub required: usize,
}

/// Generates the offline experiment and writes `out/data.csv`.
pub fn cmd_collect(cfg: &ExperimentConfig, out: &Path) -> Result<CollectReport> {
    let sys = cfg.validate()?;
    let order = cfg.pe_order(&sys)?;
    let data = cfg.collect(&sys)?;
    let rank = numerical_rank(&hankel(&data.inputs, order)?.matrix);
    std::fs::create_dir_all(out)?;
    let path = out.join("data.csv");
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    buf.extend_from_slice(echo_lines(cfg).as_bytes());
    std::fs::write(&path, buf)?;
    Ok(CollectReport { path, samples: data.len(), order, rank, required: sys.input_dim() * order })
}

fn offline_data(cfg: &ExperimentConfig, sys: &crate::model::LtiSystem, out: &Path) -> Result<TrajectoryData> {
    let data = cfg.collect(sys)?;
    if cfg.data.file.is_none() {
        std::fs::create_dir_all(out)?;
        let mut buf = Vec::new();
        data.write_csv(&mut buf)?;
        buf.extend_from_slice(echo_lines(cfg).as_bytes());
        std::fs::write(out.join("data.csv"), buf)?;
    }
    Ok(data)
}

/// Runs one closed loop and writes `trajectory.csv`, `audit.csv`,
/// `summary.txt` and the resolved `config.toml` into `out`.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let sys = cfg.validate()?;
    let data = offline_data(cfg, &sys, out)?;
    let ctrl = cfg.build_controller(&sys, &data)?;
    let run = cfg.run_with(&sys, &ctrl, cfg.seed)?;
    let resolved = cfg.with_resolved_gain(&sys)?;
    run.save(out, &resolved.echo())?;
    std::fs::write(out.join("config.toml"), resolved.echo())?;
    Ok(metrics(&run))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub seed: u64,
    /// `Err` holds the failure message of a cell that did not run.
    pub outcome: std::result::Result<Summary, String>,
}

/// Runs every `(sigma, seed)` cell on shared offline data, with seeds
/// `cfg.seed..cfg.seed + seeds`. Writes `sweep.csv` and `sweep_means.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig, sigmas: &[f64], seeds: usize, out: &Path) -> Result<Vec<SweepRow>> {
    if sigmas.is_empty() {
        return Err(Error::Config("sigma list is empty".into()));
    }
    if seeds == 0 {
        return Err(Error::Config("need at least one seed".into()));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
        return Err(Error::Config(format!("sigma must lie in (0, 1), got {s}")));
    }
    let sys = cfg.validate()?;
    let data = offline_data(cfg, &sys, out)?;
    let base = cfg.build_controller(&sys, &data)?;
    let cells: Vec<(f64, u64)> = sigmas
        .iter()
        .flat_map(|&s| (0..seeds as u64).map(move |k| (s, cfg.seed + k)))
        .collect();
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(sigma, seed)| {
            let outcome = base
                .with_sigma(sigma)
                .and_then(|c| cfg.run_with(&sys, &c, seed))
                .map(|r| metrics(&r))
                .map_err(|e| e.to_string());
            SweepRow { sigma, seed, outcome }
        })
        .collect();
    std::fs::create_dir_all(out)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("sweep.csv"))?);
    writeln!(f, "sigma,seed,status,packets,measurements,mean_inter_trigger,terminal_error,audit_violations,failures")?;
    for r in &rows {
        match &r.outcome {
            Ok(s) => writeln!(
                f,
                "{},{},{},{},{},{},{:e},{},{}",
                r.sigma,
                r.seed,
                if s.feasibility_violated() { "feasibility-violated" } else { "ok" },
                s.packets,
                s.measurements,
                s.mean_inter_trigger,
                s.terminal_error,
                s.audit_violations,
                s.failures
            )?,
            Err(msg) => writeln!(f, "{},{},error,,,,,,\"{}\"", r.sigma, r.seed, msg.replace('"', "'"))?,
        }
    }
    f.write_all(echo_lines(cfg).as_bytes())?;
    let mut means = String::from("sigma,runs,mean_packets,mean_measurements,mean_terminal_error\n");
    for m in sweep_means(&rows) {
        let _ = writeln!(means, "{},{},{},{},{:e}", m.sigma, m.runs, m.mean_packets, m.mean_measurements, m.mean_terminal_error);
    }
    means.push_str(&echo_lines(cfg));
    std::fs::write(out.join("sweep_means.csv"), means)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepMean {
    pub sigma: f64,
    pub runs: usize,
    pub mean_packets: f64,
    pub mean_measurements: f64,
    pub mean_terminal_error: f64,
}

/// Per-sigma means over the successful cells, in first-seen sigma order.
pub fn sweep_means(rows: &[SweepRow]) -> Vec<SweepMean> {
    let mut sigmas: Vec<f64> = Vec::new();
    for r in rows {
        if !sigmas.contains(&r.sigma) {
            sigmas.push(r.sigma);
        }
    }
    sigmas
        .into_iter()
        .map(|sigma| {
            let ok: Vec<&Summary> = rows.iter().filter(|r| r.sigma == sigma).filter_map(|r| r.outcome.as_ref().ok()).collect();
            let n = ok.len().max(1) as f64;
            SweepMean {
                sigma,
                runs: ok.len(),
                mean_packets: ok.iter().map(|s| s.packets as f64).sum::<f64>() / n,
                mean_measurements: ok.iter().map(|s| s.measurements as f64).sum::<f64>() / n,
                mean_terminal_error: ok.iter().map(|s| s.terminal_error).sum::<f64>() / n,
            }
        })
        .collect()
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} not found", path.display()),
        )));
    }
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).flexible(true).from_path(path)?;
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Writes whitespace-separated series for plotting: `outputs.dat`
/// (`t y0 y1 ..`), `inter_trigger.dat` (`t_l tau_l`) and `cost.dat`
/// (`l J*`).
pub fn cmd_report(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let (header, rows) = read_table(&run_dir.join("trajectory.csv"))?;
    let (_, audit) = read_table(&run_dir.join("audit.csv"))?;
    let y_cols: Vec<usize> = header.iter().enumerate().filter(|(_, h)| h.starts_with('y')).map(|(i, _)| i).collect();
    let mut outputs = String::from("# t");
    for &c in &y_cols {
        outputs.push(' ');
        outputs.push_str(&header[c]);
    }
    outputs.push('\n');
    for r in &rows {
        outputs.push_str(&r[0]);
        for &c in &y_cols {
            outputs.push(' ');
            outputs.push_str(&r[c]);
        }
        outputs.push('\n');
    }
    let mut stems = String::from("# t_l tau_l\n");
    let mut cost = String::from("# l J\n");
    for (l, r) in audit.iter().enumerate() {
        let _ = writeln!(stems, "{} {}", r[0], r[1]);
        let _ = writeln!(cost, "{l} {}", r[2]);
    }
    // Carry the run's config and seed trailer into every series.
    let trailer: String = std::fs::read_to_string(run_dir.join("trajectory.csv"))?
        .lines()
        .filter(|l| l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let files = [("outputs.dat", outputs), ("inter_trigger.dat", stems), ("cost.dat", cost)]
        .map(|(name, body)| (name, body + &trailer));
    let mut written = Vec::new();
    for (name, body) in files {
        let p = run_dir.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
    }
    Ok(written)
}
