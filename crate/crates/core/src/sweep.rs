//! Preset sweeps over the unlabeled-client ratio and the sub-sampling budget.
//!
//! Every (config, seed) cell is an isolated run; cells execute in parallel
//! and the summary is assembled in a fixed order afterwards.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::config::{ExperimentConfig, MethodKind};
use crate::data::RoleSpec;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::orchestrator::{final_metrics, run_experiment_with, RoundRecord, Schedule};

/// Fixed client count of the ratio sweep.
pub const RATIO_SWEEP_CLIENTS: usize = 10;

/// Outcome of one (config, seed) run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellResult {
    pub metrics: MetricsReport,
    /// Per-round means over the whole run.
    pub uploads: f64,
    pub downloads_naive: f64,
    pub downloads_cached: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    /// Ratio such as `0.9`, or a budget such as `3x5`.
    pub key: String,
    pub method: MethodKind,
    pub seed_count: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
    /// Difference to the reference method of the same key.
    pub gap_acc: f64,
    pub gap_auc: f64,
    pub uploads_mean: f64,
    pub downloads_naive_mean: f64,
    pub downloads_cached_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    /// Header of the `key` column: `ratio` or `mk`.
    pub key_name: &'static str,
    pub rows: Vec<SummaryRow>,
}

/// Mean and unbiased standard deviation; the deviation is 0 for one value.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Runs one configuration to completion and condenses it.
pub fn run_cell(cfg: &ExperimentConfig) -> Result<CellResult> {
    let records = run_experiment_with(cfg, Schedule::Sequential, &mut |_| Ok(()))?;
    cell_from_records(&records)
}

fn cell_from_records(records: &[RoundRecord]) -> Result<CellResult> {
    let metrics = final_metrics(records).ok_or(Error::Empty("evaluated rounds"))?;
    let rounds: Vec<&RoundRecord> = records.iter().filter(|r| r.round > 0).collect();
    let mean = |f: fn(&RoundRecord) -> usize| {
        if rounds.is_empty() {
            0.0
        } else {
            rounds.iter().map(|r| f(r) as f64).sum::<f64>() / rounds.len() as f64
        }
    };
    Ok(CellResult {
        metrics,
        uploads: mean(|r| r.comm.uploads),
        downloads_naive: mean(|r| r.comm.downloads_naive),
        downloads_cached: mean(|r| r.comm.downloads_cached),
    })
}

/// Runs every config in parallel; results keep the input order.
pub fn run_cells(cfgs: &[ExperimentConfig]) -> Result<Vec<CellResult>> {
    cfgs.par_iter().map(run_cell).collect()
}

fn seeded(base: &ExperimentConfig, seeds: usize) -> Vec<ExperimentConfig> {
    (0..seeds as u64)
        .map(|i| {
            let mut c = base.clone();
            c.master_seed = base.master_seed.wrapping_add(i);
            c
        })
        .collect()
}

fn summarize(key: String, method: MethodKind, cells: &[CellResult]) -> SummaryRow {
    let acc: Vec<f64> = cells.iter().map(|c| c.metrics.accuracy).collect();
    let auc: Vec<f64> = cells.iter().map(|c| c.metrics.auc_macro_ovr).collect();
    let (acc_mean, acc_std) = mean_std(&acc);
    let (auc_mean, auc_std) = mean_std(&auc);
    let avg = |f: fn(&CellResult) -> f64| cells.iter().map(f).sum::<f64>() / cells.len() as f64;
    SummaryRow {
        key,
        method,
        seed_count: cells.len(),
        acc_mean,
        acc_std,
        auc_mean,
        auc_std,
        gap_acc: 0.0,
        gap_auc: 0.0,
        uploads_mean: avg(|c| c.uploads),
        downloads_naive_mean: avg(|c| c.downloads_naive),
        downloads_cached_mean: avg(|c| c.downloads_cached),
    }
}

/// Labeled-client count for an unlabeled ratio over [`RATIO_SWEEP_CLIENTS`].
pub fn labeled_count_for_ratio(ratio: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "unlabeled ratio {ratio} must lie in [0, 1)"
        )));
    }
    let n = RATIO_SWEEP_CLIENTS as f64;
    let labeled = (1.0 - ratio) * n;
    let rounded = labeled.round();
    if (labeled - rounded).abs() > 1e-9 || rounded < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "unlabeled ratio {ratio} gives {labeled} labeled clients out of {RATIO_SWEEP_CLIENTS}"
        )));
    }
    Ok(rounded as usize)
}

/// RSCFed and FedConsist per unlabeled ratio. The RSCFed row carries the gap
/// to FedConsist; the FedConsist row has gap 0.
pub fn sweep_unlabeled_ratio(base: &ExperimentConfig, ratios: &[f64], seeds: usize) -> Result<Summary> {
    if seeds == 0 {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let methods = [MethodKind::Rscfed, MethodKind::FedConsist];
    let mut cfgs = Vec::new();
    for &ratio in ratios {
        let labeled = labeled_count_for_ratio(ratio)?;
        for kind in methods {
            let mut c = base.clone();
            c.partition.num_clients = RATIO_SWEEP_CLIENTS;
            c.partition.roles = RoleSpec::Split {
                labeled,
                unlabeled: RATIO_SWEEP_CLIENTS - labeled,
            };
            c.partition.plan_path = None;
            c.method.kind = kind;
            c.validate()?;
            cfgs.extend(seeded(&c, seeds));
        }
    }
    let cells = run_cells(&cfgs)?;
    let mut rows = Vec::new();
    for (ri, &ratio) in ratios.iter().enumerate() {
        let block = &cells[ri * 2 * seeds..(ri + 1) * 2 * seeds];
        let mut rs = summarize(format!("{ratio}"), methods[0], &block[..seeds]);
        let fc = summarize(format!("{ratio}"), methods[1], &block[seeds..]);
        rs.gap_acc = rs.acc_mean - fc.acc_mean;
        rs.gap_auc = rs.auc_mean - fc.auc_mean;
        rows.push(rs);
        rows.push(fc);
    }
    Ok(Summary { key_name: "ratio", rows })
}

/// RSCFed for each `(M, K)` budget, sorted by `M·K` ascending (ties keep
/// input order), followed by a FedConsist reference row. Gaps are relative
/// to that reference.
pub fn sweep_cost(base: &ExperimentConfig, mk_pairs: &[(usize, usize)], seeds: usize) -> Result<Summary> {
    if seeds == 0 {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let mut pairs = mk_pairs.to_vec();
    pairs.sort_by_key(|&(m, k)| m * k);
    let mut cfgs = Vec::new();
    for &(m, k) in &pairs {
        let mut c = base.clone();
        c.method.kind = MethodKind::Rscfed;
        c.method.m = m;
        c.method.k = k;
        c.validate()?;
        cfgs.extend(seeded(&c, seeds));
    }
    let mut reference = base.clone();
    reference.method.kind = MethodKind::FedConsist;
    reference.validate()?;
    cfgs.extend(seeded(&reference, seeds));

    let cells = run_cells(&cfgs)?;
    let fc = summarize("all".into(), MethodKind::FedConsist, &cells[pairs.len() * seeds..]);
    let mut rows: Vec<SummaryRow> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(m, k))| {
            let mut row = summarize(format!("{m}x{k}"), MethodKind::Rscfed, &cells[i * seeds..(i + 1) * seeds]);
            row.gap_acc = row.acc_mean - fc.acc_mean;
            row.gap_auc = row.auc_mean - fc.auc_mean;
            row
        })
        .collect();
    rows.push(fc);
    Ok(Summary { key_name: "mk", rows })
}

/// Parses `3x5,5x3` into pairs.
pub fn parse_mk_pairs(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let bad = || Error::InvalidArgument(format!("expected MxK, got {item:?}"));
            let (m, k) = item.split_once(['x', 'X']).ok_or_else(bad)?;
            Ok((m.trim().parse().map_err(|_| bad())?, k.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

impl Summary {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{},method,seed_count,acc_mean,acc_std,auc_mean,auc_std,gap_acc,gap_auc,uploads_mean,downloads_naive_mean,downloads_cached_mean\n",
            self.key_name
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3},{:.3},{:.3}",
                r.key,
                r.method,
                r.seed_count,
                r.acc_mean,
                r.acc_std,
                r.auc_mean,
                r.auc_std,
                r.gap_acc,
                r.gap_auc,
                r.uploads_mean,
                r.downloads_naive_mean,
                r.downloads_cached_mean
            );
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn row(&self, key: &str, method: MethodKind) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.key == key && r.method == method)
    }
}
