use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use agentseg_core::grpo::TokenSequence;
use agentseg_core::{clipped_objective, compute_advantages, RolloutGroup, RunConfig};

use crate::common::{self, emit, json_text, Failure, ResultExt, EXIT_OK};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSON-Lines file, one sequence per line:
    /// `{reward, logprob_new[], logprob_old[], loss_mask[], logprob_ref[]?, group?}`.
    #[arg(long, value_name = "FILE")]
    pub group: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct SequenceLine {
    #[serde(default)]
    group: Option<Value>,
    reward: f64,
    #[serde(flatten)]
    tokens: TokenSequence,
}

fn group_key(v: &Option<Value>) -> String {
    match v {
        None => "0".to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    }
}

pub fn evaluate(id: &str, group: &RolloutGroup, cfg: &RunConfig) -> Result<Value, Failure> {
    let adv = compute_advantages(&group.rewards, cfg.std_floor)
        .map_err(|e| Failure::invalid(format!("group `{id}`: {e}")))?;
    let objective = clipped_objective(group, &adv, &cfg.objective)
        .map_err(|e| Failure::invalid(format!("group `{id}`: {e}")))?;
    Ok(json!({
        "group": id,
        "rewards": group.rewards,
        "advantages": adv.advantages,
        "degenerate": adv.degenerate,
        "objective": objective,
    }))
}

pub fn run(args: Args, cfg: &RunConfig) -> Result<u8, Failure> {
    let lines = common::read_jsonl(&args.group)?;
    if lines.is_empty() {
        return Err(Failure::invalid(format!("{} holds no sequences", args.group.display())));
    }
    let mut groups: BTreeMap<String, (Vec<TokenSequence>, Vec<f64>)> = BTreeMap::new();
    for (i, v) in lines.into_iter().enumerate() {
        let line: SequenceLine = serde_json::from_value(v)
            .map_err(|e| Failure::invalid(format!("{}: line {}: {e}", args.group.display(), i + 1)))?;
        let entry = groups.entry(group_key(&line.group)).or_default();
        entry.0.push(line.tokens);
        entry.1.push(line.reward);
    }
    let groups: Vec<(String, RolloutGroup)> = groups
        .into_iter()
        .map(|(id, (seqs, rewards))| RolloutGroup::new(seqs, rewards).map(|g| (id, g)))
        .collect::<Result<_, _>>()
        .invalid()?;
    let results: Vec<Value> = groups
        .par_iter()
        .map(|(id, g)| evaluate(id, g, cfg))
        .collect::<Result<_, _>>()?;
    let doc = json!({ "config": cfg.to_json(), "groups": results });
    emit(args.out.as_ref(), &json_text(&doc))?;
    Ok(EXIT_OK)
}
