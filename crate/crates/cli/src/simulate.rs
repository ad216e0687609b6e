use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Duration;

use rayon::prelude::*;
use serde_json::{json, Value};

use agentseg_core::episode::{ExternalProcessPolicy, HttpPolicy, Policy, ScriptedPolicy, WhitespaceTokenizer};
use agentseg_core::retrieval::http::{HttpSearch, HttpSearchConfig};
use agentseg_core::retrieval::{ImageIndex, LocalSearchEngine, SearchEngine, TextIndex};
use agentseg_core::{compute_advantages, run_episode, EpisodeError, RunConfig, SampleAnnotation};

use crate::common::{self, emit, json_text, Failure, ResultExt, EXIT_BACKEND, EXIT_OK};
use crate::score::{means_json, score_trajectory, ScoreRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Backend {
    /// BM25 over the --corpus (and optional --images) files.
    Local,
    /// Web search endpoint configured through AGENTSEG_SEARCH_* variables.
    Http,
}

#[derive(Debug, clap::Args)]
#[command(group = clap::ArgGroup::new("policy").required(true).args(["script", "policy_cmd", "policy_url"]))]
pub struct Args {
    /// Annotation JSON-Lines file.
    #[arg(long, value_name = "FILE")]
    pub annotations: PathBuf,
    /// Text corpus JSON-Lines file of `{id, title, body}` records.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Image index JSON-Lines file of `{id, title, image_path, keywords}` records.
    #[arg(long, value_name = "FILE")]
    pub images: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "local")]
    pub search_backend: Backend,
    /// Scripted turns: a JSON array of turn strings used for every episode, or
    /// an object mapping sample ids to such an array (or to a list of arrays,
    /// one per group member).
    #[arg(long, value_name = "FILE")]
    pub script: Option<PathBuf>,
    /// Shell command speaking the line-delimited JSON policy protocol.
    #[arg(long, value_name = "CMD")]
    pub policy_cmd: Option<String>,
    /// HTTP endpoint speaking the JSON policy protocol.
    #[arg(long, value_name = "URL")]
    pub policy_url: Option<String>,
    /// Episodes per sample; two or more also emits group advantages.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub group: u32,
    /// Only simulate these sample ids.
    #[arg(long = "id", value_name = "ID")]
    pub ids: Vec<String>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

enum PolicySource {
    Scripts(ScriptTable),
    Command(String),
    Url(String),
}

/// Scripted turns by sample id; `None` applies to every sample.
struct ScriptTable {
    shared: Option<Vec<String>>,
    by_id: HashMap<String, Vec<Vec<String>>>,
}

impl ScriptTable {
    fn parse(value: Value) -> Result<Self, String> {
        let as_turns = |v: &Value| -> Result<Vec<String>, String> {
            serde_json::from_value(v.clone()).map_err(|e| e.to_string())
        };
        match &value {
            Value::Array(_) => Ok(ScriptTable {
                shared: Some(as_turns(&value)?),
                by_id: HashMap::new(),
            }),
            Value::Object(map) => {
                let mut by_id = HashMap::new();
                for (id, v) in map {
                    let scripts = match v {
                        Value::Array(items) if items.iter().all(Value::is_array) && !items.is_empty() => {
                            items.iter().map(as_turns).collect::<Result<_, _>>()?
                        }
                        _ => vec![as_turns(v)?],
                    };
                    by_id.insert(id.clone(), scripts);
                }
                Ok(ScriptTable { shared: None, by_id })
            }
            _ => Err("expected a JSON array or object".into()),
        }
    }

    fn get(&self, id: &str, member: usize) -> Option<Vec<String>> {
        match self.by_id.get(id) {
            Some(scripts) => Some(scripts[member % scripts.len()].clone()),
            None => self.shared.clone(),
        }
    }
}

impl PolicySource {
    fn make(&self, id: &str, member: usize) -> Result<Box<dyn Policy>, Failure> {
        Ok(match self {
            PolicySource::Scripts(table) => {
                let turns = table
                    .get(id, member)
                    .ok_or_else(|| Failure::invalid(format!("script has no turns for sample `{id}`")))?;
                Box::new(ScriptedPolicy::new(turns))
            }
            PolicySource::Command(cmd) => Box::new(ExternalProcessPolicy::spawn(cmd).backend()?),
            PolicySource::Url(url) => Box::new(HttpPolicy::new(url.clone(), Duration::from_secs(120))),
        })
    }
}

fn engine(args: &Args) -> Result<Box<dyn SearchEngine>, Failure> {
    match args.search_backend {
        Backend::Local => {
            let corpus = args
                .corpus
                .as_ref()
                .ok_or_else(|| Failure::invalid("--corpus is required with the local search backend"))?;
            let text = TextIndex::from_jsonl(corpus).io()?;
            let images = args.images.as_ref().map(|p| ImageIndex::from_jsonl(p)).transpose().io()?;
            Ok(Box::new(LocalSearchEngine::new(text, images)))
        }
        Backend::Http => Ok(Box::new(HttpSearch::new(HttpSearchConfig::from_env().backend()?))),
    }
}

struct Episode {
    member: usize,
    record: Value,
    score: ScoreRow,
}

pub fn run(args: Args, cfg: &RunConfig) -> Result<u8, Failure> {
    let mut anns = SampleAnnotation::load_jsonl(&args.annotations).io()?;
    if !args.ids.is_empty() {
        let missing: Vec<&String> = args.ids.iter().filter(|id| !anns.iter().any(|a| &a.id == *id)).collect();
        if !missing.is_empty() {
            return Err(Failure::invalid(format!("unknown sample ids: {missing:?}")));
        }
        anns.retain(|a| args.ids.contains(&a.id));
    }
    anns.sort_by(|a, b| a.id.cmp(&b.id));

    let source = if let Some(path) = &args.script {
        let table = ScriptTable::parse(common::read_json(path)?)
            .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
        PolicySource::Scripts(table)
    } else if let Some(cmd) = &args.policy_cmd {
        PolicySource::Command(cmd.clone())
    } else {
        PolicySource::Url(args.policy_url.clone().unwrap_or_default())
    };
    let engine = engine(&args)?;
    let members = args.group as usize;

    let jobs: Vec<(&SampleAnnotation, usize)> = anns
        .iter()
        .flat_map(|a| (0..members).map(move |m| (a, m)))
        .collect();
    let episodes: Vec<Episode> = jobs
        .par_iter()
        .map(|&(ann, member)| {
            let mut policy = source.make(&ann.id, member)?;
            let record = run_episode(ann, &mut policy, engine.as_ref(), &cfg.episode, &WhitespaceTokenizer)
                .map_err(|e| match e {
                    EpisodeError::Policy(p) => Failure {
                        code: EXIT_BACKEND,
                        error: anyhow::anyhow!("sample `{}`: {p}", ann.id),
                    },
                    other => Failure::invalid(format!("sample `{}`: {other}", ann.id)),
                })?;
            let sampled = ann.sampled(cfg.episode.frame_count);
            let score = score_trajectory(&ann.id, &record.trajectory, &sampled, cfg);
            Ok(Episode {
                member,
                record: record.to_json(),
                score,
            })
        })
        .collect::<Result<_, Failure>>()?;

    let mut groups = Vec::new();
    if members >= 2 {
        for chunk in episodes.chunks(members) {
            let rewards: Vec<f64> = chunk.iter().map(|e| e.score.reward.total).collect();
            let adv = compute_advantages(&rewards, cfg.std_floor).invalid()?;
            groups.push(json!({
                "id": chunk[0].score.id,
                "rewards": rewards,
                "advantages": adv.advantages,
                "degenerate": adv.degenerate,
            }));
        }
    }

    let rows: Vec<ScoreRow> = episodes.iter().map(|e| e.score.clone()).collect();
    let episode_values: Vec<Value> = episodes
        .into_iter()
        .map(|e| {
            let mut v = e.record;
            v["member"] = json!(e.member);
            v["reward"] = serde_json::to_value(e.score).expect("score rows serialize");
            v
        })
        .collect();
    let mut doc = json!({
        "config": cfg.to_json(),
        "episodes": episode_values,
        "mean": means_json(&rows),
    });
    if members >= 2 {
        doc["groups"] = Value::Array(groups);
    }
    emit(args.out.as_ref(), &json_text(&doc))?;
    Ok(EXIT_OK)
}
