//! Metrics stream and checkpoint files for a single run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::orchestrator::{is_eval_round, run_experiment_with, RoundRecord, Schedule};

pub const RESULTS_HEADER: &str = "round,method,acc,auc_macro_ovr,precision_macro,recall_macro,uploads,downloads_naive,downloads_cached,wall_ms";

/// Output knobs for [`run_to_dir`].
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub schedule: Schedule,
    /// Wall time breaks byte-identical reruns, so it is zeroed unless asked for.
    pub record_wall_time: bool,
}

/// Formats one results row. Floats use a fixed precision so reruns compare
/// byte for byte.
pub fn format_row(rec: &RoundRecord, record_wall_time: bool) -> Option<String> {
    let m = rec.metrics?;
    Some(format!(
        "{},{},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
        rec.round,
        rec.method,
        m.accuracy,
        m.auc_macro_ovr,
        m.precision_macro,
        m.recall_macro,
        rec.comm.uploads,
        rec.comm.downloads_naive,
        rec.comm.downloads_cached,
        if record_wall_time { rec.wall_ms } else { 0 },
    ))
}

/// Header plus one row per evaluation round. The warm-up record is skipped.
pub fn results_csv(records: &[RoundRecord], record_wall_time: bool) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for rec in records.iter().filter(|r| r.round > 0) {
        if let Some(row) = format_row(rec, record_wall_time) {
            let _ = writeln!(out, "{row}");
        }
    }
    out
}

pub fn checkpoint_path(dir: &Path, round: usize) -> PathBuf {
    dir.join(format!("checkpoint_round_{round:05}.json"))
}

pub fn final_checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("final_model.json")
}

/// Runs an experiment and writes `results.csv`, periodic checkpoints and
/// `final_model.json` into `dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path, opts: RunOptions) -> Result<Vec<RoundRecord>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let total = cfg.schedule.rounds;
    let every = cfg.schedule.checkpoint_every;
    let records = run_experiment_with(cfg, opts.schedule, &mut |rec| {
        if every > 0 && rec.round > 0 && rec.round % every == 0 {
            rec.global_params.save(checkpoint_path(dir, rec.round))?;
        }
        Ok(())
    })?;
    let csv = results_csv(&records, opts.record_wall_time);
    debug_assert_eq!(
        csv.lines().count() - 1,
        (1..=total).filter(|&r| is_eval_round(r, total, cfg.schedule.eval_every)).count()
    );
    let path = dir.join("results.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    if let Some(last) = records.last() {
        last.global_params.save(final_checkpoint_path(dir))?;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MethodKind;
    use crate::data::RoleSpec;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk_default();
        cfg.dataset.samples_per_class = 40;
        cfg.dataset.dim = 4;
        cfg.partition.num_clients = 4;
        cfg.partition.roles = RoleSpec::Split { labeled: 1, unlabeled: 3 };
        cfg.model.hidden_dims = vec![4];
        cfg.method.kind = MethodKind::Rscfed;
        cfg.method.m = 2;
        cfg.method.k = 2;
        cfg.schedule.rounds = 5;
        cfg.schedule.warmup_epochs = 1;
        cfg.schedule.eval_every = 2;
        cfg.schedule.checkpoint_every = 2;
        cfg
    }

    #[test]
    fn writes_rows_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        run_to_dir(&cfg, dir.path(), RunOptions::default()).unwrap();
        let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], RESULTS_HEADER);
        assert_eq!(lines.len(), 1 + 3);
        assert!(lines[1].starts_with("2,rscfed,"));
        assert!(lines[3].starts_with("5,rscfed,"));
        assert!(lines[3].ends_with(",0"));
        assert!(checkpoint_path(dir.path(), 2).exists());
        assert!(checkpoint_path(dir.path(), 4).exists());
        assert!(final_checkpoint_path(dir.path()).exists());
    }

    #[test]
    fn zero_rounds_gives_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.schedule.rounds = 0;
        run_to_dir(&cfg, dir.path(), RunOptions::default()).unwrap();
        let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(csv, format!("{RESULTS_HEADER}\n"));
    }
}
