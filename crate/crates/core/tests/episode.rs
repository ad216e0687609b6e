mod common;

use std::collections::HashMap;
use std::sync::Arc;

use agentseg_core::episode::{render_results, ScriptedPolicy, WhitespaceTokenizer};
use agentseg_core::retrieval::TextIndex;
use agentseg_core::trajectory::{Information, Notice, TurnKind, TurnPayload};
use agentseg_core::{
    count_valid_actions, run_episode, EpisodeConfig, EpisodeRecord, LocalSearchEngine, SampleAnnotation,
};
use proptest::prelude::*;
use serde_json::Value;

use common::{fixtures, search};

struct Bundle {
    anns: HashMap<String, SampleAnnotation>,
    scripts: HashMap<String, Vec<String>>,
    engine: LocalSearchEngine,
}

fn bundle() -> Bundle {
    let dir = fixtures().join("bundle");
    let anns = SampleAnnotation::load_jsonl(&dir.join("annotations.jsonl"))
        .unwrap()
        .into_iter()
        .map(|a| (a.id.clone(), a))
        .collect();
    let scripts = serde_json::from_str(&std::fs::read_to_string(dir.join("script.json")).unwrap()).unwrap();
    let text = TextIndex::from_jsonl(&dir.join("corpus.jsonl")).unwrap();
    Bundle {
        anns,
        scripts,
        engine: LocalSearchEngine::new(text, None),
    }
}

fn play(b: &Bundle, id: &str, cfg: &EpisodeConfig) -> EpisodeRecord {
    let mut policy = ScriptedPolicy::new(b.scripts[id].clone());
    run_episode(&b.anns[id], &mut policy, &b.engine, cfg, &WhitespaceTokenizer).unwrap()
}

#[test]
fn golden_episode_matches_recorded_artifact() {
    let b = bundle();
    let golden: Value =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("golden/simulate.json")).unwrap()).unwrap();
    let recorded = golden["episodes"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["id"] == "mh-001")
        .unwrap();
    let rec = play(&b, "mh-001", &EpisodeConfig::default()).to_json();
    for key in ["rollout", "search_log", "terminal", "generated_tokens", "feedback_tokens"] {
        assert_eq!(rec[key], recorded[key], "{key}");
    }
    let queries: Vec<&str> = rec["search_log"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["call"]["query"].as_str().unwrap())
        .collect();
    assert_eq!(queries, ["We Are Young song band", "Fun. band lead singer"]);
}

#[test]
fn golden_episode_is_deterministic_across_threads() {
    let b = Arc::new(bundle());
    let cfg = EpisodeConfig::default();
    let first = serde_json::to_string(&play(&b, "mh-001", &cfg).to_json()).unwrap();
    for _ in 0..20 {
        assert_eq!(serde_json::to_string(&play(&b, "mh-001", &cfg).to_json()).unwrap(), first);
    }
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let b = Arc::clone(&b);
            std::thread::spawn(move || {
                (0..10)
                    .map(|_| serde_json::to_string(&play(&b, "mh-001", &EpisodeConfig::default()).to_json()).unwrap())
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    for h in handles {
        assert!(h.join().unwrap().iter().all(|s| *s == first));
    }
}

#[test]
fn budget_abuse_is_capped() {
    let b = bundle();
    let rec = play(&b, "abuse-001", &EpisodeConfig::default());
    assert_eq!(rec.accepted_count(), 5);
    let flags: Vec<bool> = rec.search_log.iter().map(|e| e.accepted).collect();
    assert_eq!(flags, [true, true, true, true, true, false, false]);
    assert_eq!(count_valid_actions(&rec.trajectory, Some(6)), 6);
}

#[derive(Debug, Clone)]
enum Step {
    Search(String),
    BadSearch,
    Think,
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        4 => prop::sample::select(vec!["band", "singer", "Fun", "golden dog", "Paris", "nothing here"])
            .prop_map(|q| Step::Search(q.to_string())),
        1 => Just(Step::BadSearch),
        1 => Just(Step::Think),
    ]
}

fn script(steps: &[Step], finish: bool) -> Vec<String> {
    let mut turns: Vec<String> = steps
        .iter()
        .map(|s| match s {
            Step::Search(q) => format!("<think>look up {q}</think>\n{}", search(q)),
            Step::BadSearch => "<search>{\"tool\": \"web\"}</search>".to_string(),
            Step::Think => "<think>hmm</think>".to_string(),
        })
        .collect();
    if finish {
        turns.push("<keyframe>1</keyframe>".into());
        turns.push("<answer>{\"bbox_2d\": [1, 1, 9, 9], \"point_2d\": [5, 5]}</answer>".into());
    }
    turns
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn episodes_respect_budgets(
        steps in prop::collection::vec(step(), 0..14),
        finish in any::<bool>(),
        max_search in 1usize..6,
        max_feedback in 1usize..400,
    ) {
        let b = bundle();
        let cfg = EpisodeConfig {
            max_search_turns: max_search,
            max_feedback_tokens: max_feedback,
            ..EpisodeConfig::default()
        };
        let ann = &b.anns["mh-001"];
        let run = || {
            let mut policy = ScriptedPolicy::new(script(&steps, finish));
            run_episode(ann, &mut policy, &b.engine, &cfg, &WhitespaceTokenizer).unwrap()
        };
        let rec = run();
        prop_assert!(rec.accepted_count() <= max_search);
        prop_assert!(rec.trajectory.accepted_searches().len() <= max_search);
        prop_assert!(rec.feedback_tokens <= max_feedback);
        prop_assert!(rec.generated_tokens <= cfg.max_generated_tokens);
        prop_assert_eq!(rec.to_json(), run().to_json());

        // Every valid search is answered by exactly the logged results.
        let turns = &rec.trajectory.turns;
        let mut log = rec.search_log.iter();
        for (i, turn) in turns.iter().enumerate() {
            if turn.valid_search().is_none() {
                continue;
            }
            let entry = log.next().expect("logged search");
            prop_assert_eq!(Some(&entry.call), turn.valid_search());
            let TurnPayload::Information(info) = &turns[i + 1].payload else {
                panic!("search without information");
            };
            match (&entry.notice, info) {
                (None, Information::Results(text)) => {
                    prop_assert!(render_results(&entry.results).starts_with(text.as_str()));
                }
                (Some(Notice::BudgetExhausted), Information::Notice(Notice::BudgetExhausted)) => {
                    prop_assert!(!entry.accepted);
                }
                other => panic!("mismatched information {other:?}"),
            }
        }
        prop_assert!(log.next().is_none());
        let infos = turns.iter().filter(|t| t.kind() == TurnKind::Information).count();
        prop_assert_eq!(infos, turns.iter().filter(|t| t.kind() == TurnKind::Search).count());
    }
}
