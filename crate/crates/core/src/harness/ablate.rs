//! Ablation sweeps: train and evaluate every variant of a direction/depth
//! grid from the same seed and corpus, then emit a comparison table.

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::eval::{evaluate, export_pr};
use super::train::train;
use crate::bpm::BpmMode;
use crate::error::{Error, Result};
use crate::flops;
use crate::metrics::{MetricReport, SummaryMetrics};
use crate::rcam::RcamMode;
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct AblateRow {
    pub variant: String,
    pub rcam_mode: RcamMode,
    pub bpm_mode: BpmMode,
    pub bpm_n: usize,
    pub params_total: usize,
    pub bpm_params_per_unit: usize,
    pub flops_total: f64,
    pub runtime_s_per_frame: f64,
    pub metrics: SummaryMetrics,
}

fn csv_header() -> &'static str {
    "variant,rcam_mode,bpm_mode,bpm_n,params,bpm_params_per_unit,flops,runtime_s_per_frame,\
     mean_j,mean_f,mae,f_beta_max,e_measure_max,s_measure"
}

fn csv_row(r: &AblateRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.variant,
        r.rcam_mode.as_str(),
        r.bpm_mode.as_str(),
        r.bpm_n,
        r.params_total,
        r.bpm_params_per_unit,
        r.flops_total,
        r.runtime_s_per_frame,
        r.metrics.mean_j,
        r.metrics.mean_f,
        r.metrics.mae,
        r.metrics.f_beta_max,
        r.metrics.e_measure_max,
        r.metrics.s_measure
    )
}

/// Train/evaluate the full grid `rcam_modes x bpm_modes x bpm_ns` and write
/// `ablation.csv`, `pr_curves.csv` and `run_report.txt` under the base
/// output directory. Metric ordering across variants is reported, never
/// asserted. Variants run serially unless `parallel` opts in.
pub fn ablate(
    base: &RunConfig,
    rcam_modes: &[RcamMode],
    bpm_modes: &[BpmMode],
    bpm_ns: &[usize],
    eval_split: &str,
    parallel: bool,
) -> Result<Vec<AblateRow>> {
    if rcam_modes.is_empty() || bpm_modes.is_empty() || bpm_ns.is_empty() {
        return Err(Error::config("ablation sweep axes must be non-empty"));
    }
    std::fs::create_dir_all(&base.out_dir)?;

    let mut grid = Vec::new();
    for &rcam_mode in rcam_modes {
        for &bpm_mode in bpm_modes {
            for &n in bpm_ns {
                grid.push((rcam_mode, bpm_mode, n));
            }
        }
    }

    let run_variant = |&(rcam_mode, bpm_mode, n): &(RcamMode, BpmMode, usize)|
     -> Result<(AblateRow, MetricReport)> {
        let variant = format!("rcam-{}_bpm-{}_n{}", rcam_mode.as_str(), bpm_mode.as_str(), n);
        let mut cfg = base.clone();
        cfg.rcam_mode = rcam_mode;
        cfg.bpm_mode = bpm_mode;
        cfg.bpm_n = n;
        cfg.out_dir = base.out_dir.join("variants").join(&variant);

        let outcome = train(&cfg)?;
        let ckpt = Checkpoint::load(&outcome.final_checkpoint)?;
        let eval = evaluate(&ckpt, &cfg.corpus, eval_split, None)?;

        let cost = flops::analyze(&cfg.model_config(), cfg.input_size);
        let row = AblateRow {
            variant,
            rcam_mode,
            bpm_mode,
            bpm_n: n,
            params_total: cost.total.params,
            bpm_params_per_unit: cost.bpm_per_unit.params,
            flops_total: cost.total.flops,
            runtime_s_per_frame: eval.runtime_s_per_frame,
            metrics: eval.report.dataset,
        };
        Ok((row, eval.report))
    };

    let results: Vec<(AblateRow, MetricReport)> = if parallel {
        use rayon::prelude::*;
        grid.par_iter().map(run_variant).collect::<Result<_>>()?
    } else {
        grid.iter().map(run_variant).collect::<Result<_>>()?
    };
    let mut rows = Vec::with_capacity(results.len());
    let mut reports: Vec<(String, MetricReport)> = Vec::with_capacity(results.len());
    for (row, report) in results {
        reports.push((row.variant.clone(), report));
        rows.push(row);
    }

    write_rows(&rows, &base.out_dir.join("ablation.csv"))?;
    let series: Vec<(String, &MetricReport)> =
        reports.iter().map(|(n, r)| (n.clone(), r)).collect();
    export_pr(&series, &base.out_dir.join("pr_curves.csv"))?;

    let mut report = String::new();
    report.push_str(&flops::bpm_reference_note(&base.model_config(), base.input_size));
    report.push_str("\nmetric ordering by mean_j (reported, not asserted):\n");
    let mut order: Vec<&AblateRow> = rows.iter().collect();
    order.sort_by(|a, b| b.metrics.mean_j.partial_cmp(&a.metrics.mean_j).unwrap());
    for r in order {
        report.push_str(&format!("  {}: mean_j={:.4}\n", r.variant, r.metrics.mean_j));
    }
    std::fs::write(base.out_dir.join("run_report.txt"), report)?;
    Ok(rows)
}

pub fn write_rows(rows: &[AblateRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{}", csv_header())?;
    for r in rows {
        writeln!(f, "{}", csv_row(r))?;
    }
    Ok(())
}

/// Parse an ablation CSV back into rows (used by tests and tooling).
pub fn read_rows(path: &Path) -> Result<Vec<AblateRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format("empty csv"))?;
    if header != csv_header() {
        return Err(Error::format(format!("unexpected header: {header}")));
    }
    let mut rows = Vec::new();
    for line in lines {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 14 {
            return Err(Error::format(format!("bad row: {line}")));
        }
        rows.push(AblateRow {
            variant: parts[0].to_string(),
            rcam_mode: parts[1].parse()?,
            bpm_mode: parts[2].parse()?,
            bpm_n: parts[3].parse().map_err(|_| Error::format("bad bpm_n"))?,
            params_total: parts[4].parse().map_err(|_| Error::format("bad params"))?,
            bpm_params_per_unit: parts[5].parse().map_err(|_| Error::format("bad unit params"))?,
            flops_total: parts[6].parse().map_err(|_| Error::format("bad flops"))?,
            runtime_s_per_frame: parts[7].parse().map_err(|_| Error::format("bad runtime"))?,
            metrics: SummaryMetrics {
                mean_j: parts[8].parse().map_err(|_| Error::format("bad mean_j"))?,
                mean_f: parts[9].parse().map_err(|_| Error::format("bad mean_f"))?,
                mae: parts[10].parse().map_err(|_| Error::format("bad mae"))?,
                f_beta_max: parts[11].parse().map_err(|_| Error::format("bad f_beta"))?,
                e_measure_max: parts[12].parse().map_err(|_| Error::format("bad e_measure"))?,
                s_measure: parts[13].parse().map_err(|_| Error::format("bad s_measure"))?,
            },
        });
    }
    Ok(rows)
}
