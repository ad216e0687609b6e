use std::path::PathBuf;

use serde_json::Value;

use agentseg_core::RunConfig;

use crate::common::{self, csv_text, emit, Failure, EXIT_OK};
use crate::score::{column_means, ScoreRow, MEAN_COLUMNS};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Score artifacts (JSON, as written by `score`), one per training step,
    /// in chronological order.
    #[arg(required = true, value_name = "LOG")]
    pub logs: Vec<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

pub fn step_rows(log: &Value) -> Result<Vec<ScoreRow>, String> {
    let rows = log
        .get("rows")
        .or_else(|| log.get("episodes"))
        .ok_or("no `rows` member")?;
    let rows = rows.as_array().ok_or("`rows` is not an array")?;
    rows.iter()
        .map(|r| {
            let r = r.get("reward").filter(|v| v.get("id").is_some()).unwrap_or(r);
            serde_json::from_value(r.clone()).map_err(|e| e.to_string())
        })
        .collect()
}

pub fn run(args: Args, cfg: &RunConfig) -> Result<u8, Failure> {
    let mut table = Vec::with_capacity(args.logs.len());
    for (step, path) in args.logs.iter().enumerate() {
        let log = common::read_json(path)?;
        let rows = step_rows(&log).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
        if rows.is_empty() {
            return Err(Failure::invalid(format!("{}: empty score log", path.display())));
        }
        let mut cells = vec![(step + 1).to_string()];
        cells.extend(column_means(&rows).into_iter().map(|(_, v)| v.to_string()));
        table.push(cells);
    }
    let mut header = vec!["step"];
    header.extend(MEAN_COLUMNS);
    emit(args.out.as_ref(), &csv_text(cfg, &header, &table)?)?;
    Ok(EXIT_OK)
}
