use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use agentseg_core::episode::{Tokenizer, WhitespaceTokenizer};
use agentseg_core::trajectory::{count_valid_actions, parse_trajectory, Mode, Terminal, Trajectory};
use agentseg_core::{reward_total, LexicalCosine, RewardBreakdown, RunConfig, SampleAnnotation};

use crate::common::{self, csv_text, emit, json_text, mean, Failure, Format, EXIT_OK};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSON-Lines of `{id, rollout, mode?}` records, or a simulate artifact.
    #[arg(long, value_name = "FILE")]
    pub rollouts: PathBuf,
    /// Annotation JSON-Lines file.
    #[arg(long, value_name = "FILE")]
    pub annotations: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub terminal: Terminal,
    /// Valid actions counted by the process reward.
    pub k: usize,
    /// Searches that were answered rather than refused.
    pub searches: usize,
    /// Whitespace tokens in the rollout text.
    pub response_tokens: usize,
    #[serde(flatten)]
    pub reward: RewardBreakdown,
}

/// Scores one rollout against an annotation that has already been sampled
/// down to the frames shown to the policy.
pub fn score_trajectory(id: &str, t: &Trajectory, sampled: &SampleAnnotation, cfg: &RunConfig) -> ScoreRow {
    ScoreRow {
        id: id.to_string(),
        terminal: t.terminal,
        k: count_valid_actions(t, Some(sampled.frame_count())),
        searches: t.accepted_searches().len(),
        response_tokens: WhitespaceTokenizer.count(&t.source_text),
        reward: reward_total(t, sampled, &LexicalCosine, &cfg.reward),
    }
}

pub const MEAN_COLUMNS: [&str; 10] = [
    "igr",
    "tpr",
    "r_iou",
    "r_l1",
    "r_point",
    "r_frame",
    "total",
    "k",
    "searches",
    "wrong_response_length",
];

/// Column means. The wrong-response length averages the token count of
/// rollouts that did not end with an answer, counting answered ones as 0.
pub fn column_means(rows: &[ScoreRow]) -> Vec<(&'static str, f64)> {
    let mut out = Vec::with_capacity(MEAN_COLUMNS.len());
    for (i, name) in RewardBreakdown::COLUMNS.iter().enumerate() {
        out.push((*name, mean(rows.iter().map(|r| r.reward.values()[i]))));
    }
    out.push(("k", mean(rows.iter().map(|r| r.k as f64))));
    out.push(("searches", mean(rows.iter().map(|r| r.searches as f64))));
    out.push((
        "wrong_response_length",
        mean(rows.iter().map(|r| {
            if r.terminal == Terminal::Answered {
                0.0
            } else {
                r.response_tokens as f64
            }
        })),
    ));
    out
}

pub fn means_json(rows: &[ScoreRow]) -> Value {
    let map: Map<String, Value> = column_means(rows)
        .into_iter()
        .map(|(k, v)| (k.to_string(), json!(v)))
        .collect();
    Value::Object(map)
}

#[derive(Debug, Deserialize)]
struct RolloutLine {
    id: String,
    rollout: String,
    #[serde(default)]
    mode: Option<Mode>,
}

pub fn load_rollouts(path: &Path) -> Result<Vec<(String, String, Option<Mode>)>, Failure> {
    let text = common::read_text(path)?;
    let values = match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(obj)) => match obj.get("episodes") {
            Some(Value::Array(items)) => items.clone(),
            _ => vec![Value::Object(obj)],
        },
        Ok(Value::Array(items)) => items,
        _ => common::parse_jsonl(&text, path)?,
    };
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let line: RolloutLine = serde_json::from_value(v)
                .map_err(|e| Failure::io(format!("{}: record {}: {e}", path.display(), i + 1)))?;
            Ok((line.id, line.rollout, line.mode))
        })
        .collect()
}

pub fn load_annotations(path: &Path, cfg: &RunConfig) -> Result<HashMap<String, SampleAnnotation>, Failure> {
    let anns = SampleAnnotation::load_jsonl(path).map_err(|e| Failure::io(e.to_string()))?;
    Ok(anns
        .into_iter()
        .map(|a| (a.id.clone(), a.sampled(cfg.episode.frame_count)))
        .collect())
}

pub fn score_rows(
    rollouts: &[(String, String, Option<Mode>)],
    anns: &HashMap<String, SampleAnnotation>,
    cfg: &RunConfig,
) -> (Vec<ScoreRow>, Vec<String>) {
    let mut unmatched = Vec::new();
    for (id, _, _) in rollouts {
        if !anns.contains_key(id) && !unmatched.contains(id) {
            unmatched.push(id.clone());
        }
    }
    let mut rows: Vec<ScoreRow> = rollouts
        .par_iter()
        .filter_map(|(id, text, mode)| {
            let ann = anns.get(id)?;
            let t = parse_trajectory(text, mode.unwrap_or(ann.mode));
            Some(score_trajectory(id, &t, ann, cfg))
        })
        .collect();
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    unmatched.sort();
    (rows, unmatched)
}

pub fn score_artifact(rows: &[ScoreRow], unmatched: &[String], cfg: &RunConfig) -> Value {
    json!({
        "config": cfg.to_json(),
        "rows": rows,
        "mean": means_json(rows),
        "unmatched": unmatched,
    })
}

const CSV_HEADER: [&str; 12] = [
    "id",
    "terminal",
    "k",
    "searches",
    "response_tokens",
    "igr",
    "tpr",
    "r_iou",
    "r_l1",
    "r_point",
    "r_frame",
    "total",
];

fn csv_rows(rows: &[ScoreRow]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut cells = vec![
                r.id.clone(),
                serde_json::to_value(r.terminal)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
                r.k.to_string(),
                r.searches.to_string(),
                r.response_tokens.to_string(),
            ];
            cells.extend(r.reward.values().iter().map(|v| v.to_string()));
            cells
        })
        .collect();
    let means: HashMap<&str, f64> = column_means(rows).into_iter().collect();
    let mut mean_row = vec!["mean".to_string(), String::new()];
    mean_row.push(means["k"].to_string());
    mean_row.push(means["searches"].to_string());
    mean_row.push(String::new());
    mean_row.extend(RewardBreakdown::COLUMNS.iter().map(|c| means[c].to_string()));
    out.push(mean_row);
    out
}

pub fn run(args: Args, cfg: &RunConfig) -> Result<u8, Failure> {
    let rollouts = load_rollouts(&args.rollouts)?;
    let anns = load_annotations(&args.annotations, cfg)?;
    let (rows, unmatched) = score_rows(&rollouts, &anns, cfg);
    for id in &unmatched {
        eprintln!("warning: rollout `{id}` has no annotation; skipped");
    }
    let text = match args.format {
        Format::Json => json_text(&score_artifact(&rows, &unmatched, cfg)),
        Format::Csv => csv_text(cfg, &CSV_HEADER, &csv_rows(&rows))?,
    };
    emit(args.out.as_ref(), &text)?;
    Ok(EXIT_OK)
}
