use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use agentseg_core::trajectory::{count_valid_actions, parse_trajectory, Mode, Terminal, Trajectory};
use agentseg_core::RunConfig;

use crate::common::{emit, json_text, Failure, EXIT_INVALID, EXIT_OK};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Rollout text files, or directories whose files are all checked.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    #[arg(long, default_value = "video")]
    pub mode: Mode,
    /// Emit a JSON report instead of one text row per file.
    #[arg(long)]
    pub json: bool,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Failure::io(format!("cannot list {}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

pub fn report(path: &Path, t: &Trajectory) -> Value {
    let turns: Vec<Value> = t
        .turns
        .iter()
        .map(|turn| {
            let mut row = json!({
                "kind": turn.kind().to_string(),
                "span": [turn.span.start, turn.span.end],
            });
            if let agentseg_core::trajectory::TurnPayload::Search(Err(invalid)) = &turn.payload {
                row["invalid_search"] = json!(invalid.reason);
            }
            row
        })
        .collect();
    json!({
        "path": path.display().to_string(),
        "terminal": t.terminal,
        "k": count_valid_actions(t, None),
        "violation": t.violation.as_ref().map(|v| json!({
            "kind": v.kind.to_string(),
            "span": [v.span.start, v.span.end],
        })),
        "turns": turns,
    })
}

pub fn run(args: Args, cfg: &RunConfig) -> Result<u8, Failure> {
    let files = expand(&args.paths)?;
    let mut rows = Vec::with_capacity(files.len());
    let mut any_malformed = false;
    let mut text_out = String::new();
    for path in &files {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))?;
        let t = parse_trajectory(&text, args.mode);
        any_malformed |= t.terminal == Terminal::Malformed;
        let row = report(path, &t);
        let terminal = row["terminal"].as_str().unwrap_or_default().to_string();
        text_out.push_str(&format!("{}\t{}\tk={}", path.display(), terminal, row["k"]));
        if let Some(v) = &t.violation {
            text_out.push_str(&format!("\t{} at bytes {}..{}", v.kind, v.span.start, v.span.end));
        }
        text_out.push('\n');
        rows.push(row);
    }
    if args.json {
        let doc = json!({ "config": cfg.to_json(), "files": rows });
        emit(args.out.as_ref(), &json_text(&doc))?;
    } else {
        emit(args.out.as_ref(), &text_out)?;
    }
    Ok(if any_malformed { EXIT_INVALID } else { EXIT_OK })
}
