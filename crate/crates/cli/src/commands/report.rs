//! `brpolab report`: final-window summary of one or more metrics files.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use serde::Serialize;

use brpolab_core::trainer::{final_window_means, read_metrics};

use crate::GlobalArgs;

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics CSV files, one per arm.
    #[arg(required = true)]
    files: Vec<PathBuf>,

    /// Number of trailing iterations to average.
    #[arg(long, default_value_t = 10)]
    window: usize,
}

#[derive(Debug, Serialize)]
struct ReportRow {
    arm: String,
    rows: usize,
    mean_oracle_quality: f64,
    mean_length: f64,
    mean_filler: f64,
}

pub fn run(global: &GlobalArgs, args: &ReportArgs) -> anyhow::Result<()> {
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut header: Option<Vec<String>> = None;
    for file in &args.files {
        let raw_header = csv_header(file)
            .with_context(|| format!("reading header of {}", file.display()))?;
        match &header {
            None => header = Some(raw_header),
            Some(expected) => {
                if *expected != raw_header {
                    bail!(
                        "column mismatch in {}: expected {:?}, found {:?}",
                        file.display(),
                        expected,
                        raw_header
                    );
                }
            }
        }
        let metrics =
            read_metrics(file).with_context(|| format!("parsing {}", file.display()))?;
        let window = final_window_means(&metrics, args.window)
            .ok_or_else(|| anyhow::anyhow!("{} contains no metrics rows", file.display()))?;
        rows.push(ReportRow {
            arm: file.display().to_string(),
            rows: window.rows,
            mean_oracle_quality: window.mean_oracle_quality,
            mean_length: window.mean_length,
            mean_filler: window.mean_filler,
        });
    }

    println!(
        "{:<48} {:>6} {:>14} {:>12} {:>12}",
        "arm", "rows", "oracle_quality", "length", "filler"
    );
    for row in &rows {
        println!(
            "{:<48} {:>6} {:>14.4} {:>12.3} {:>12.3}",
            row.arm, row.rows, row.mean_oracle_quality, row.mean_length, row.mean_filler
        );
    }

    let out = global.ensure_out()?;
    let path = out.join("report.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    for row in &rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    println!("report: {}", path.display());
    Ok(())
}

fn csv_header(path: &PathBuf) -> anyhow::Result<Vec<String>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader
        .headers()?
        .iter()
        .map(|s| s.to_string())
        .collect())
}
