mod common;

use agentseg_core::trajectory::{Information, Notice, TurnKind, TurnPayload, ViolationKind};
use agentseg_core::{count_valid_actions, parse_trajectory, serialize_trajectory, Mode, Terminal};
use proptest::prelude::*;

use common::{answer, search, valid_rollout};

#[test]
fn two_searches_then_answer_counts_three() {
    let text = format!(
        "<think>who sings it</think>{}<information>Doc 1 ...</information>{}<information>Doc 1 ...</information><keyframe>4</keyframe>{}",
        search("We Are Young band"),
        search("Fun. lead singer"),
        answer([10.0, 20.0, 110.0, 220.0], [60.0, 120.0]),
    );
    let t = parse_trajectory(&text, Mode::Video);
    assert_eq!(t.terminal, Terminal::Answered);
    assert_eq!(count_valid_actions(&t, Some(32)), 3);
}

#[test]
fn image_answer_without_search_counts_one() {
    let text = format!("<think>obvious</think>{}", answer([0.0, 0.0, 5.0, 5.0], [2.0, 2.0]));
    let t = parse_trajectory(&text, Mode::Image);
    assert_eq!(t.terminal, Terminal::Answered);
    assert_eq!(count_valid_actions(&t, None), 1);
}

#[test]
fn unclosed_search_is_malformed_with_span() {
    let text = "<think>a</think><search>{\"name\": \"text_search\", \"query\": \"x\"}";
    let t = parse_trajectory(text, Mode::Video);
    assert_eq!(t.terminal, Terminal::Malformed);
    let v = t.violation.expect("violation recorded");
    assert_eq!(v.kind, ViolationKind::UnclosedTag(TurnKind::Search));
    assert_eq!(v.span.start, "<think>a</think>".len());
}

#[test]
fn keyframe_in_image_mode_is_malformed() {
    let text = format!("<keyframe>0</keyframe>{}", answer([0.0, 0.0, 1.0, 1.0], [0.0, 0.0]));
    let t = parse_trajectory(&text, Mode::Image);
    assert_eq!(t.terminal, Terminal::Malformed);
}

#[test]
fn answer_without_keyframe_in_video_mode_is_malformed() {
    let t = parse_trajectory(&answer([0.0, 0.0, 1.0, 1.0], [0.0, 0.0]), Mode::Video);
    assert_eq!(t.terminal, Terminal::Malformed);
}

#[test]
fn out_of_range_keyframe_earns_no_answer_credit() {
    let text = format!("<keyframe>40</keyframe>{}", answer([0.0, 0.0, 1.0, 1.0], [0.0, 0.0]));
    let t = parse_trajectory(&text, Mode::Video);
    assert_eq!(t.terminal, Terminal::Answered);
    assert_eq!(count_valid_actions(&t, Some(32)), 0);
    assert_eq!(count_valid_actions(&t, None), 1);
}

#[test]
fn refused_search_is_not_counted() {
    let refusal = Information::Notice(Notice::BudgetExhausted).text();
    let text = format!(
        "{}<information>Doc 1</information>{}<information>{refusal}</information>",
        search("a"),
        search("b"),
    );
    let t = parse_trajectory(&text, Mode::Video);
    assert_eq!(t.terminal, Terminal::Truncated);
    assert!(matches!(
        t.turns[3].payload,
        TurnPayload::Information(Information::Notice(Notice::BudgetExhausted))
    ));
    assert_eq!(count_valid_actions(&t, None), 1);
}

fn fragment() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("<think>".to_string()),
        Just("</think>".to_string()),
        Just("<search>".to_string()),
        Just("</search>".to_string()),
        Just("<information>".to_string()),
        Just("</information>".to_string()),
        Just("<keyframe>".to_string()),
        Just("</keyframe>".to_string()),
        Just("<answer>".to_string()),
        Just("</answer>".to_string()),
        Just("{\"name\": \"text_search\", \"query\": \"q\"}".to_string()),
        Just("{\"bbox_2d\": [1, 2, 3, 4], \"point_2d\": [2, 3]}".to_string()),
        "[0-9]{1,3}",
        "[a-z <>/{}\":,\\[\\]é]{0,10}",
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn parser_is_total(parts in prop::collection::vec(fragment(), 0..24), video in any::<bool>()) {
        let text = parts.concat();
        let mode = if video { Mode::Video } else { Mode::Image };
        let t = parse_trajectory(&text, mode);
        prop_assert_eq!(t.terminal == Terminal::Malformed, t.violation.is_some());
        let mut last_end = 0;
        for turn in &t.turns {
            prop_assert!(turn.span.start >= last_end);
            prop_assert!(turn.span.end <= text.len());
            last_end = turn.span.end;
        }
        if let Some(v) = &t.violation {
            prop_assert!(v.span.start <= v.span.end && v.span.end <= text.len());
        }
    }

    #[test]
    fn round_trip_preserves_structure(text in valid_rollout()) {
        let t = parse_trajectory(&text, Mode::Video);
        prop_assert!(t.terminal != Terminal::Malformed, "{:?}", t.violation);
        let canonical = serialize_trajectory(&t).unwrap();
        let t2 = parse_trajectory(&canonical, Mode::Video);
        prop_assert!(t.same_structure(&t2));
        prop_assert_eq!(serialize_trajectory(&t2).unwrap(), canonical);
    }

    #[test]
    fn turn_order_follows_source_order(text in valid_rollout()) {
        let t = parse_trajectory(&text, Mode::Video);
        let tags: Vec<(usize, TurnKind)> = TurnKind::ALL
            .iter()
            .flat_map(|k| text.match_indices(k.open_tag()).map(move |(i, _)| (i, *k)))
            .collect::<std::collections::BTreeMap<_, _>>()
            .into_iter()
            .collect();
        let kinds: Vec<TurnKind> = t.turns.iter().map(|turn| turn.kind()).collect();
        prop_assert_eq!(kinds, tags.into_iter().map(|(_, k)| k).collect::<Vec<_>>());
    }

    #[test]
    fn truncation_never_adds_actions(text in valid_rollout()) {
        let full = count_valid_actions(&parse_trajectory(&text, Mode::Video), Some(8));
        for (cut, _) in text.char_indices() {
            let t = parse_trajectory(&text[..cut], Mode::Video);
            prop_assert!(count_valid_actions(&t, Some(8)) <= full, "cut at {}", cut);
        }
    }
}
