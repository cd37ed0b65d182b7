//! Output-directory management and the diagnostic CSV writers.
//!
//! Experiment outputs (records, aggregate, summary, config snapshot) carry
//! no wall-clock metadata so reruns with the same config and seed are
//! byte-identical outside the timing columns; diagnostic CSVs get a
//! leading `#` metadata line with config hash, seed, and timestamp.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use stochacq::diagnostics::{BenchmarkTable, RankTrajectory, ReplayCurves, ScoreDistribution};

use crate::CliError;

pub fn unix_timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Creates `<base>/<hash>-<timestamp>`, suffixing `-1`, `-2`, ... on
/// collision so ablation sweeps started in the same second keep apart.
pub fn create_out_dir(base: &Path, hash: &str) -> io::Result<PathBuf> {
    fs::create_dir_all(base)?;
    let stem = format!("{hash}-{}", unix_timestamp());
    let mut candidate = base.join(&stem);
    let mut suffix = 0u32;
    loop {
        match fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                suffix += 1;
                candidate = base.join(format!("{stem}-{suffix}"));
            }
            Err(e) => return Err(e),
        }
    }
}

pub fn io_error(context: &str) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::runtime(format!("{context}: {e}"))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_error(&format!("writing {}", path.display())))
}

pub fn file_writer(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(io_error(&format!("creating {}", path.display())))
}

/// `# key=value ...` metadata line for diagnostic CSVs.
pub struct Metadata<'a> {
    pub config_hash: &'a str,
    pub seed: u64,
    pub extra: Vec<(&'a str, String)>,
}

impl Metadata<'_> {
    fn line(&self) -> String {
        let mut line = format!(
            "# config_hash={} seed={} timestamp={}",
            self.config_hash,
            self.seed,
            unix_timestamp()
        );
        for (key, value) in &self.extra {
            line.push_str(&format!(" {key}={value}"));
        }
        line.push('\n');
        line
    }
}

fn open_with_metadata(path: &Path, meta: &Metadata<'_>) -> Result<BufWriter<File>, CliError> {
    let mut w = file_writer(path)?;
    w.write_all(meta.line().as_bytes())
        .map_err(io_error(&format!("writing {}", path.display())))?;
    Ok(w)
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(io_error(&format!("flushing {}", path.display())))
}

fn csv_error<'a>(path: &'a Path) -> impl Fn(csv::Error) -> CliError + 'a {
    move |e| CliError::runtime(format!("writing {}: {e}", path.display()))
}

pub fn write_rank_csv(
    path: &Path,
    trajectory: &RankTrajectory,
    meta: &Metadata<'_>,
) -> Result<(), CliError> {
    let mut csv = csv::Writer::from_writer(open_with_metadata(path, meta)?);
    csv.write_record(["offset", "acquired", "train_size", "rho_raw", "rho_smoothed"])
        .map_err(csv_error(path))?;
    for (i, &offset) in trajectory.offsets.iter().enumerate() {
        csv.write_record(&[
            offset.to_string(),
            trajectory.acquired[i].to_string(),
            trajectory.train_sizes[i].to_string(),
            format!("{}", trajectory.rho_raw[i]),
            format!("{}", trajectory.rho[i]),
        ])
        .map_err(csv_error(path))?;
    }
    finish(csv, path)
}

pub fn write_frozen_csv(
    path: &Path,
    curves: &ReplayCurves,
    meta: &Metadata<'_>,
) -> Result<(), CliError> {
    let mut csv = csv::Writer::from_writer(open_with_metadata(path, meta)?);
    csv.write_record(["offset", "train_size", "frozen_accuracy", "fresh_accuracy"])
        .map_err(csv_error(path))?;
    for (i, &train_size) in curves.train_sizes.iter().enumerate() {
        csv.write_record(&[
            i.to_string(),
            train_size.to_string(),
            format!("{}", curves.frozen_accuracy[i]),
            format!("{}", curves.fresh_accuracy[i]),
        ])
        .map_err(csv_error(path))?;
    }
    finish(csv, path)
}

pub fn write_scoredist_csv(
    path: &Path,
    table: &ScoreDistribution,
    meta: &Metadata<'_>,
) -> Result<(), CliError> {
    let mut csv = csv::Writer::from_writer(open_with_metadata(path, meta)?);
    csv.write_record(["policy", "beta", "candidate", "score", "probability", "log_probability"])
        .map_err(csv_error(path))?;
    for column in &table.columns {
        for (row, &candidate) in table.candidate.iter().enumerate() {
            csv.write_record(&[
                column.policy.name().to_string(),
                format!("{}", column.beta),
                candidate.to_string(),
                format!("{}", table.score[row]),
                format!("{}", column.probability[row]),
                format!("{}", column.log_probability[row]),
            ])
            .map_err(csv_error(path))?;
        }
    }
    finish(csv, path)
}

pub fn write_bench_csv(
    path: &Path,
    table: &BenchmarkTable,
    meta: &Metadata<'_>,
) -> Result<(), CliError> {
    let mut csv = csv::Writer::from_writer(open_with_metadata(path, meta)?);
    csv.write_record(["policy", "pool_size", "batch_size", "median_s", "mean_s", "sd_s"])
        .map_err(csv_error(path))?;
    for r in &table.records {
        csv.write_record(&[
            r.policy.clone(),
            r.pool_size.to_string(),
            r.batch_size.to_string(),
            format!("{}", r.median_s),
            format!("{}", r.mean_s),
            format!("{}", r.sd_s),
        ])
        .map_err(csv_error(path))?;
    }
    finish(csv, path)
}

pub fn write_bench_slopes_csv(
    path: &Path,
    table: &BenchmarkTable,
    meta: &Metadata<'_>,
) -> Result<(), CliError> {
    let mut csv = csv::Writer::from_writer(open_with_metadata(path, meta)?);
    csv.write_record(["policy", "slope_s_per_candidate"]).map_err(csv_error(path))?;
    for (policy, slope) in &table.slopes {
        csv.write_record(&[policy.clone(), format!("{slope}")]).map_err(csv_error(path))?;
    }
    finish(csv, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_dirs_never_collide() {
        let tmp = tempfile::tempdir().unwrap();
        let a = create_out_dir(tmp.path(), "abcd1234").unwrap();
        let b = create_out_dir(tmp.path(), "abcd1234").unwrap();
        assert_ne!(a, b);
        assert!(a.is_dir() && b.is_dir());
    }

    #[test]
    fn metadata_line_is_a_comment() {
        let meta = Metadata {
            config_hash: "deadbeef",
            seed: 9,
            extra: vec![("kernel", "boxcar".to_string())],
        };
        let line = meta.line();
        assert!(line.starts_with("# config_hash=deadbeef seed=9 timestamp="));
        assert!(line.trim_end().ends_with("kernel=boxcar"));
    }
}
