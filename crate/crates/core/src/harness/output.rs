use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::experiment::{ExperimentOutcome, ExperimentReport, Scenario};
use super::propagation::{ConvergenceRow, MonteCarlo, Propagation};
use crate::{Error, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(io_err(path))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(io_err(path))?;
    finish(w, path)
}

/// CSV with a leading `# config_hash=` comment line.
fn write_csv(path: &Path, hash: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# config_hash={hash}").map_err(io_err(path))?;
    {
        let mut out = csv::Writer::from_writer(&mut w);
        out.write_record(header)?;
        for r in rows {
            out.write_record(r)?;
        }
        out.flush().map_err(io_err(path))?;
    }
    finish(w, path)
}

fn strings<T: ToString>(items: impl IntoIterator<Item = T>) -> Vec<String> {
    items.into_iter().map(|v| v.to_string()).collect()
}

/// `propagate/`: Galerkin moments on the grid.
pub fn write_propagation(dir: &Path, prop: &Propagation, hash: &str) -> Result<Vec<PathBuf>> {
    let moments = dir.join("moments.csv");
    let mut w = create(&moments)?;
    prop.moments.write_csv(&mut w, hash)?;
    finish(w, &moments)?;
    let summary = dir.join("summary.json");
    write_json(
        &summary,
        &json!({
            "config_hash": hash,
            "n_modes": prop.prior.layout.n_modes,
            "order": prop.state.basis.order(),
            "basis_size": prop.state.basis.len(),
            "steps": prop.state.steps,
            "residual": prop.state.residual,
        }),
    )?;
    let timing = dir.join("timing.json");
    write_json(
        &timing,
        &json!({
            "config_hash": hash,
            "field_seconds": prop.field_seconds,
            "solve_seconds": prop.solve_seconds,
        }),
    )?;
    Ok(vec![moments, summary, timing])
}

/// `mc/`: Monte Carlo moments and bookkeeping.
pub fn write_monte_carlo(dir: &Path, mc: &MonteCarlo, hash: &str) -> Result<Vec<PathBuf>> {
    let moments = dir.join("moments.csv");
    let mut w = create(&moments)?;
    mc.moments.write_csv(&mut w, hash)?;
    finish(w, &moments)?;
    let summary = dir.join("summary.json");
    write_json(
        &summary,
        &json!({
            "config_hash": hash,
            "n_modes": mc.n_modes,
            "requested": mc.requested,
            "used": mc.used,
            "redrawn": mc.redrawn,
            "failures": mc.failures,
            "failure_rate": mc.failure_rate(),
            "kl_method": mc.kl_method,
        }),
    )?;
    let timing = dir.join("timing.json");
    write_json(
        &timing,
        &json!({ "config_hash": hash, "seconds": mc.seconds }),
    )?;
    Ok(vec![moments, summary, timing])
}

const CONVERGENCE_HEADER: [&str; 5] = ["n_modes", "order", "cpu_time", "l1_mean_err", "l1_var_err"];

fn convergence_row(r: &ConvergenceRow) -> Vec<String> {
    vec![
        r.n_modes.to_string(),
        r.order.to_string(),
        r.cpu_time.to_string(),
        r.l1_mean_err.to_string(),
        r.l1_var_err.to_string(),
    ]
}

/// `convergence/`: one file per cell, the merged table and the reference moments.
pub fn write_convergence(
    dir: &Path,
    rows: &[ConvergenceRow],
    reference: &MonteCarlo,
    hash: &str,
) -> Result<Vec<PathBuf>> {
    let header = strings(CONVERGENCE_HEADER);
    let mut paths = Vec::new();
    for r in rows {
        let p = dir
            .join("cells")
            .join(format!("modes{}_order{}.csv", r.n_modes, r.order));
        write_csv(&p, hash, &header, &[convergence_row(r)])?;
        paths.push(p);
    }
    let table = dir.join("convergence.csv");
    write_csv(
        &table,
        hash,
        &header,
        &rows.iter().map(convergence_row).collect::<Vec<_>>(),
    )?;
    paths.push(table);
    paths.extend(write_monte_carlo(&dir.join("reference"), reference, hash)?);
    Ok(paths)
}

/// `calibrate/<scenario>/`: report, timing and per-run curves and chains.
pub fn write_experiment(dir: &Path, outcome: &ExperimentOutcome) -> Result<Vec<PathBuf>> {
    let report = &outcome.report;
    let hash = report.config_hash.as_str();
    let mut paths = Vec::new();
    let p = dir.join("report.json");
    write_json(&p, report)?;
    paths.push(p);
    let p = dir.join("timing.json");
    write_json(&p, &json!({ "config_hash": hash, "timing": report.timing }))?;
    paths.push(p);
    for (run, chain) in report.runs.iter().zip(&outcome.chains) {
        let run_dir = dir.join(&run.label);
        let a = &run.area;
        let mut header = strings(["x", "truth", "prior_mean", "posterior_mean"]);
        header.extend(a.posterior.levels.iter().map(|q| format!("q{q}")));
        let rows: Vec<Vec<String>> = (0..a.truth.len())
            .map(|g| {
                let mut row = strings([
                    a.posterior.x[g],
                    a.truth[g],
                    a.prior_mean[g],
                    a.posterior.mean[g],
                ]);
                row.extend(a.posterior.bands.iter().map(|b| b[g].to_string()));
                row
            })
            .collect();
        let p = run_dir.join("area.csv");
        write_csv(&p, hash, &header, &rows)?;
        paths.push(p);

        let header = strings([
            "name",
            "bin_lo",
            "bin_hi",
            "prior_density",
            "posterior_density",
        ]);
        let mut rows = Vec::new();
        for h in &run.hypers {
            let hist = &h.histogram;
            for (i, e) in hist.edges.windows(2).enumerate() {
                rows.push(vec![
                    h.name.clone(),
                    e[0].to_string(),
                    e[1].to_string(),
                    hist.prior_density[i].to_string(),
                    hist.posterior_density[i].to_string(),
                ]);
            }
        }
        let p = run_dir.join("hypers.csv");
        write_csv(&p, hash, &header, &rows)?;
        paths.push(p);

        let p = run_dir.join("chain.csv");
        let mut w = create(&p)?;
        chain.write_csv(&mut w, Some(hash))?;
        finish(w, &p)?;
        paths.push(p);
    }
    Ok(paths)
}

/// `report/`: cross-scenario summary of every report found under
/// `calibrate/`.
pub fn write_summary(out_dir: &Path, hash: &str) -> Result<Vec<PathBuf>> {
    let mut reports: Vec<ExperimentReport> = Vec::new();
    for s in Scenario::ALL {
        let p = out_dir.join("calibrate").join(s.name()).join("report.json");
        if p.exists() {
            let text = fs::read_to_string(&p).map_err(io_err(&p))?;
            reports.push(serde_json::from_str(&text)?);
        }
    }
    if reports.is_empty() {
        return Err(Error::Config(format!(
            "no calibration reports under {}; run `calibrate <scenario>` first",
            out_dir.join("calibrate").display()
        )));
    }
    let header = strings([
        "scenario",
        "run",
        "config_hash",
        "prior_l2",
        "posterior_l2",
        "acceptance_rate",
        "verdicts",
    ]);
    let mut rows = Vec::new();
    let mut verdicts = Vec::new();
    for r in &reports {
        for run in &r.runs {
            let v: Vec<String> = run
                .credibility
                .iter()
                .flat_map(|c| &c.responses)
                .map(|c| {
                    format!(
                        "{}={}",
                        c.response.name(),
                        serde_json::to_value(c.verdict)
                            .expect("enum")
                            .as_str()
                            .unwrap_or("")
                    )
                })
                .collect();
            rows.push(vec![
                r.scenario.name().to_string(),
                run.label.clone(),
                r.config_hash.clone(),
                run.area.errors.prior_l2.to_string(),
                run.area.errors.posterior_l2.to_string(),
                run.acceptance_rate.to_string(),
                v.join(";"),
            ]);
            verdicts.push(json!({
                "scenario": r.scenario,
                "run": run.label,
                "credibility": run.credibility,
            }));
        }
    }
    let dir = out_dir.join("report");
    let table = dir.join("summary.csv");
    write_csv(&table, hash, &header, &rows)?;
    let cred = dir.join("credibility.json");
    write_json(&cred, &json!({ "config_hash": hash, "runs": verdicts }))?;
    Ok(vec![table, cred])
}
