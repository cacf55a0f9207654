//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured evidence. Run with
//! `cargo test -p webagent-core --test acceptance -- --nocapture`.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use webagent_core::checklist::{
    generate_checklist, sync_checklist, Checklist, ChecklistItem, ItemStatus,
};
use webagent_core::domain::{
    check_action, Action, ActionKind, BBox, Channel, ElementRecord, ElementRole, GroundingTier,
    Outcome, PageSnapshot, StepError, StepRecord, Task, TerminateStatus, ValidationError,
};
use webagent_core::environment::{
    sim_load, EnvOp, Environment, PageDef, SitePack, Transition,
};
use webagent_core::gateway::{GatewayConfig, ModelGateway, ScriptEntry};
use webagent_core::grounding::{ground_click, ground_select, ground_type, GroundingConfig};
use webagent_core::memory::{MemoryConfig, MemoryState, WindowSize};
use webagent_core::outcome::diff_snapshots;
use webagent_core::protocol::{parse_tool_call, serialize_action, ToolCallError};
use webagent_core::session::{
    run_session, write_trajectory, AblationFlags, EnvironmentSelection,
    FinalStatus, ModelsRef, SessionConfig, SessionRunner,
};

fn fixture(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(path)
}

fn fixture_config(pack: &str, models: &str) -> SessionConfig {
    SessionConfig {
        task: None,
        max_steps: 30,
        window_size: WindowSize::default(),
        flags: AblationFlags::default(),
        environment: EnvironmentSelection::Simulator {
            pack: fixture(pack),
            synthetic_raster: false,
        },
        models: ModelsRef::Path(fixture(models)),
        knowledge_corpus: None,
        live_search: false,
        pattern: Default::default(),
    }
}

// ---------------------------------------------------------------------
// Criterion 1: protocol round-trip over 200 valid + 50 malformed cases.
// ---------------------------------------------------------------------

fn random_valid_action(rng: &mut ChaCha8Rng, i: usize) -> Action {
    let kind = ActionKind::ALL[i % ActionKind::ALL.len()];
    let mut action = Action::new(kind, format!("case {i} {}", random_text(rng, 40)));
    action.coordinate = Some((rng.random_range(0..=1000), rng.random_range(0..=1000)));
    if rng.random_bool(0.6) {
        action.text = Some(random_text(rng, 200));
    }
    if rng.random_bool(0.3) {
        action.code = Some(random_text(rng, 50).replace(' ', ""));
    }
    if rng.random_bool(0.3) {
        action.clear_first = Some(rng.random_bool(0.5));
    }
    if rng.random_bool(0.3) {
        action.press_enter_after = Some(rng.random_bool(0.5));
    }
    if rng.random_bool(0.3) {
        action.field = Some(random_text(rng, 100));
    }
    if kind == ActionKind::Wait {
        action.time = Some(rng.random_range(0.0..30.0_f64).round());
    }
    if kind == ActionKind::Terminate {
        action.status = Some(if rng.random_bool(0.5) {
            TerminateStatus::Success
        } else {
            TerminateStatus::Failure
        });
    }
    action
}

fn random_text(rng: &mut ChaCha8Rng, max: usize) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 '\"<>&{}";
    let len = rng.random_range(1..=max);
    (0..len)
        .map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())] as char)
        .collect()
}

enum ExpectedError {
    NoTag,
    Malformed,
    WrongName,
    Unknown,
    MissingStatus,
    MissingCoordinate,
    OutOfRange,
    TooLong,
}

fn malformed_corpus() -> Vec<(String, ExpectedError)> {
    let mut cases = Vec::new();
    for i in 0..50usize {
        let case = match i % 8 {
            0 => (format!("just prose number {i}, no call"), ExpectedError::NoTag),
            1 => (
                format!("<tool_call>{{\"name\": \"browser_use\", broken json {i}</tool_call>"),
                ExpectedError::Malformed,
            ),
            2 => (
                format!("<tool_call>{{\"name\":\"other_tool_{i}\",\"arguments\":{{\"action\":\"wait\",\"coordinate\":[1,1],\"time\":1,\"description\":\"d\"}}}}</tool_call>"),
                ExpectedError::WrongName,
            ),
            3 => (
                format!("<tool_call>{{\"name\":\"browser_use\",\"arguments\":{{\"action\":\"fly_{i}\",\"coordinate\":[1,1],\"description\":\"d\"}}}}</tool_call>"),
                ExpectedError::Unknown,
            ),
            4 => (
                "<tool_call>{\"name\":\"browser_use\",\"arguments\":{\"action\":\"terminate\",\"coordinate\":[1,1],\"description\":\"d\"}}</tool_call>".to_string(),
                ExpectedError::MissingStatus,
            ),
            5 => (
                "<tool_call>{\"name\":\"browser_use\",\"arguments\":{\"action\":\"left_click\",\"description\":\"d\"}}</tool_call>".to_string(),
                ExpectedError::MissingCoordinate,
            ),
            6 => {
                let coord = if i % 16 < 8 { "[-3,40]" } else { "[10,1001]" };
                (
                    format!("<tool_call>{{\"name\":\"browser_use\",\"arguments\":{{\"action\":\"left_click\",\"coordinate\":{coord},\"description\":\"d\"}}}}</tool_call>"),
                    ExpectedError::OutOfRange,
                )
            }
            _ => (
                format!(
                    "<tool_call>{{\"name\":\"browser_use\",\"arguments\":{{\"action\":\"type\",\"coordinate\":[5,5],\"text\":\"{}\",\"description\":\"d\"}}}}</tool_call>",
                    "x".repeat(201 + i)
                ),
                ExpectedError::TooLong,
            ),
        };
        cases.push(case);
    }
    cases
}

fn error_matches(expected: &ExpectedError, actual: &ToolCallError) -> bool {
    matches!(
        (expected, actual),
        (ExpectedError::NoTag, ToolCallError::NoToolCallTag)
            | (ExpectedError::Malformed, ToolCallError::MalformedJson(_))
            | (ExpectedError::WrongName, ToolCallError::WrongFunctionName(_))
            | (
                ExpectedError::Unknown,
                ToolCallError::Invalid(ValidationError::UnknownKind { .. })
            )
            | (
                ExpectedError::MissingStatus,
                ToolCallError::Invalid(ValidationError::MissingStatus)
            )
            | (
                ExpectedError::MissingCoordinate,
                ToolCallError::Invalid(ValidationError::MissingCoordinate { .. })
            )
            | (
                ExpectedError::OutOfRange,
                ToolCallError::Invalid(ValidationError::CoordinateOutOfRange { .. })
            )
            | (
                ExpectedError::TooLong,
                ToolCallError::Invalid(ValidationError::FieldTooLong { .. })
            )
    )
}

#[test]
fn criterion_1_protocol_round_trip() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0ace);

    let mut valid = 0;
    for i in 0..200 {
        let action = random_valid_action(&mut rng, i);
        check_action(&action).expect("generator must produce valid actions");
        let wire = serialize_action(&action);
        let parsed = parse_tool_call(&wire)
            .into_result()
            .unwrap_or_else(|e| panic!("case {i} failed to re-parse: {e}\n{wire}"));
        assert_eq!(parsed, action, "case {i} value drift");
        assert_eq!(serialize_action(&parsed), wire, "case {i} byte drift");
        valid += 1;
    }

    let mut malformed = 0;
    for (i, (raw, expected)) in malformed_corpus().into_iter().enumerate() {
        let envelope = parse_tool_call(&raw);
        let err = envelope
            .parse_error()
            .unwrap_or_else(|| panic!("malformed case {i} unexpectedly parsed: {raw}"));
        assert!(
            error_matches(&expected, err),
            "malformed case {i}: got {err:?} for {raw}"
        );
        malformed += 1;
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "round-trip took {elapsed:?}");
    println!(
        "PASS: protocol round-trip ({valid}/200 valid byte-identical, {malformed}/50 malformed typed, {elapsed:?} < 1s)"
    );
}

// ---------------------------------------------------------------------
// Criterion 2: checklist one-step delta under adversarial model outputs.
// ---------------------------------------------------------------------

fn random_checklist(rng: &mut ChaCha8Rng) -> Checklist {
    let n = rng.random_range(2..=6);
    Checklist {
        items: (1..=n)
            .map(|i| ChecklistItem {
                id: format!("requirement_{i}"),
                description: format!("Goal state {i}"),
                status: *[
                    ItemStatus::Pending,
                    ItemStatus::InProgress,
                    ItemStatus::Completed,
                    ItemStatus::Failed,
                ]
                .choose(rng)
                .unwrap(),
            })
            .collect(),
        step: rng.random_range(0..40),
    }
}

fn adversarial_sync_response(rng: &mut ChaCha8Rng, checklist: &Checklist) -> String {
    if rng.random_bool(0.15) {
        return "no json at all, just chatter".into();
    }
    if rng.random_bool(0.1) {
        return "{\"updates\": \"not an array\"}".into();
    }
    let count = rng.random_range(0..=5);
    let mut updates = Vec::new();
    for _ in 0..count {
        let id = if rng.random_bool(0.6) {
            checklist.items.choose(rng).unwrap().id.clone()
        } else {
            format!("requirement_{}", rng.random_range(7..30))
        };
        let status = *[
            "pending",
            "in_progress",
            "completed",
            "failed",
            "Completed",
            "DONE",
            "skip",
        ]
        .choose(rng)
        .unwrap();
        updates.push(serde_json::json!({
            "item_id": id,
            "new_status": status,
            "reason": "adversarial"
        }));
    }
    serde_json::json!({ "updates": updates }).to_string()
}

fn adversarial_generation_response(rng: &mut ChaCha8Rng) -> String {
    if rng.random_bool(0.2) {
        return "I would rather describe the task in prose.".into();
    }
    let count = rng.random_range(0..=12);
    let items: Vec<serde_json::Value> = (0..count)
        .map(|i| {
            let words = rng.random_range(1..=18);
            let description = (0..words)
                .map(|w| format!("w{w}"))
                .collect::<Vec<_>>()
                .join(" ");
            serde_json::json!({
                "id": format!("requirement_{}", i + 1),
                "description": format!("{description} and tail{i}"),
                "status": "pending"
            })
        })
        .collect();
    serde_json::json!({ "checklist": items }).to_string()
}

#[test]
fn criterion_2_checklist_one_step_delta() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xc11);
    let snapshot = PageSnapshot::empty("https://x.test/");
    let action = Action::click(5, 5, "probe");
    let outcome = Outcome::success(BTreeSet::from([Channel::Elements]));

    for case in 0..1000 {
        let current = random_checklist(&mut rng);
        let response = adversarial_sync_response(&mut rng, &current);
        let mut gw = ModelGateway::new(&GatewayConfig::scripted(
            vec![],
            vec![],
            vec![ScriptEntry::always(response)],
            vec![],
        ))
        .unwrap();
        let next = sync_checklist(&current, &action, &outcome, &snapshot, "", &mut gw);

        let before: Vec<_> = current.status_pairs();
        let after: Vec<_> = next.status_pairs();
        assert_eq!(
            before.iter().map(|(id, _)| id).collect::<Vec<_>>(),
            after.iter().map(|(id, _)| id).collect::<Vec<_>>(),
            "case {case}: ids drifted"
        );
        let changed = before.iter().zip(&after).filter(|(a, b)| a != b).count();
        assert!(changed <= 1, "case {case}: {changed} statuses changed");
        assert_eq!(next.step, current.step + 1, "case {case}: step counter");
    }

    let task = Task {
        instruction: "Adversarial generation probe".into(),
        target_url: "https://x.test/".into(),
        task_id: "gen".into(),
        constraints: vec![],
    };
    for case in 0..200 {
        let response = adversarial_generation_response(&mut rng);
        let mut gw = ModelGateway::new(&GatewayConfig::scripted(
            vec![],
            vec![],
            vec![ScriptEntry::always(response)],
            vec![],
        ))
        .unwrap();
        let generated = generate_checklist(&task, &mut gw);
        assert!(
            (2..=6).contains(&generated.items.len()),
            "case {case}: size {}",
            generated.items.len()
        );
        assert!(generated.items.iter().all(|i| i.status == ItemStatus::Pending));
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "checklist suite took {elapsed:?}");
    println!(
        "PASS: checklist one-step delta (1000 adversarial syncs, 200 generations in [2,6], {elapsed:?} < 10s)"
    );
}

// ---------------------------------------------------------------------
// Criterion 3: memory accounting across random traces.
// ---------------------------------------------------------------------

fn trace_record(index: usize, failed: bool) -> StepRecord {
    let action = Action::click(10 + index as i64 % 900, 20, format!("step {index}"));
    let outcome = if failed {
        Outcome::failure(StepError::NoStateChange, BTreeSet::new())
    } else {
        Outcome::success(BTreeSet::from([Channel::Elements]))
    };
    StepRecord {
        index,
        action,
        outcome,
        snapshot_before: PageSnapshot::empty("https://trace.test/"),
        snapshot_after: PageSnapshot::empty("https://trace.test/"),
        model_calls: 1,
        model_calls_by_role: BTreeMap::new(),
        attempts: vec![],
    }
}

#[test]
fn criterion_3_memory_accounting() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x3e3);
    let mut traces = 0;

    for w in [1usize, 3, 5, 10] {
        for _ in 0..25 {
            let t = rng.random_range(1..=100);
            let mut memory = MemoryState::new(MemoryConfig {
                window_size: WindowSize::Bounded(w),
                adaptive: true,
            });
            let mut failed_indices = BTreeSet::new();
            for index in 1..=t {
                let failed = rng.random_bool(0.3);
                if failed {
                    failed_indices.insert(index);
                }
                memory.record_step(trace_record(index, failed), None).unwrap();
            }
            assert_eq!(memory.chunk_index(), t / w, "chunks for T={t} W={w}");
            assert_eq!(memory.window().len(), t % w, "window for T={t} W={w}");

            let note_indices: BTreeSet<usize> =
                memory.failure_buffer().iter().map(|n| n.step_index).collect();
            assert_eq!(note_indices, failed_indices, "notes for T={t} W={w}");

            let evicted_failed: BTreeSet<usize> = failed_indices
                .iter()
                .copied()
                .filter(|i| *i <= memory.chunk_index() * w)
                .collect();
            assert!(
                evicted_failed.is_subset(&note_indices),
                "evicted failures lost for T={t} W={w}"
            );
            traces += 1;
        }
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "memory suite took {elapsed:?}");
    println!("PASS: memory accounting ({traces} traces across W in {{1,3,5,10}}, {elapsed:?} < 10s)");
}

// ---------------------------------------------------------------------
// Criterion 4: diff oracle equivalence on randomized snapshot pairs.
// ---------------------------------------------------------------------

fn random_snapshot(rng: &mut ChaCha8Rng) -> PageSnapshot {
    let mut snapshot = PageSnapshot::empty(format!("https://site{}.test/", rng.random_range(0..4)));
    snapshot.visible_text = (0..rng.random_range(0..10))
        .map(|_| format!("w{}", rng.random_range(0..12)))
        .collect::<Vec<_>>()
        .join(if rng.random_bool(0.5) { " " } else { "   " });
    let n = rng.random_range(0..6);
    for i in 0..n {
        let mut e = ElementRecord::new(
            format!("e{i}"),
            ElementRole::Button,
            format!("label{}", rng.random_range(0..5)),
            BBox::new(10 * i as i64, 20, 40, 20),
        );
        if rng.random_bool(0.5) {
            e.value = Some(format!("v{}", rng.random_range(0..4)));
        }
        snapshot.interactive_elements.push(e);
    }
    if rng.random_bool(0.4) && n > 0 {
        snapshot.focused_element = Some(format!("e{}", rng.random_range(0..n)));
    }
    snapshot.scroll_position = (rng.random_range(0..6), rng.random_range(0..1400));
    if rng.random_bool(0.3) {
        snapshot.modal_open = true;
        snapshot.modal_element = Some(format!("m{}", rng.random_range(0..2)));
    }
    snapshot
}

fn mutate_snapshot(rng: &mut ChaCha8Rng, base: &PageSnapshot) -> PageSnapshot {
    let mut after = base.clone();
    if rng.random_bool(0.4) {
        after.visible_text.push_str(" extra");
    }
    if rng.random_bool(0.4) {
        if rng.random_bool(0.5) || after.interactive_elements.is_empty() {
            after.interactive_elements.push(ElementRecord::new(
                "added",
                ElementRole::Link,
                "Added",
                BBox::new(500, 500, 40, 20),
            ));
        } else {
            after.interactive_elements[0].value = Some("mutated".into());
        }
    }
    if rng.random_bool(0.3) {
        after.focused_element = Some("e0".into());
    }
    if rng.random_bool(0.3) {
        after.url.push_str("next");
    }
    if rng.random_bool(0.4) {
        let dy = rng.random_range(0..8);
        after.scroll_position.1 += dy;
    }
    if rng.random_bool(0.3) {
        after.modal_open = !after.modal_open;
        after.modal_element = after.modal_open.then(|| "m9".to_string());
    }
    after
}

/// Independent field-by-field comparator (the oracle).
fn oracle_channels(before: &PageSnapshot, after: &PageSnapshot) -> BTreeSet<Channel> {
    let mut changed = BTreeSet::new();
    let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    if norm(&before.visible_text) != norm(&after.visible_text) {
        changed.insert(Channel::Text);
    }
    let set = |s: &PageSnapshot| -> BTreeSet<(String, String, String)> {
        s.interactive_elements
            .iter()
            .map(|e| (e.key.clone(), e.label.clone(), e.value.clone().unwrap_or_default()))
            .collect()
    };
    if set(before) != set(after) {
        changed.insert(Channel::Elements);
    }
    if before.focused_element != after.focused_element {
        changed.insert(Channel::Focus);
    }
    if before.url != after.url {
        changed.insert(Channel::Url);
    }
    if (before.scroll_position.0 - after.scroll_position.0).abs() > 2
        || (before.scroll_position.1 - after.scroll_position.1).abs() > 2
    {
        changed.insert(Channel::Scroll);
    }
    if before.modal_open != after.modal_open || before.modal_element != after.modal_element {
        changed.insert(Channel::Modal);
    }
    changed
}

#[test]
fn criterion_4_diff_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xd1ff);

    for case in 0..1000 {
        let before = random_snapshot(&mut rng);
        let after = if rng.random_bool(0.5) {
            mutate_snapshot(&mut rng, &before)
        } else {
            random_snapshot(&mut rng)
        };
        let diff = diff_snapshots(&before, &after);
        let expected = oracle_channels(&before, &after);
        assert_eq!(diff.changed_channels, expected, "case {case}");
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "diff suite took {elapsed:?}");
    println!("PASS: diff oracle equivalence (1000 snapshot pairs, {elapsed:?} < 5s)");
}

// ---------------------------------------------------------------------
// Criterion 5: grounding tier order and the select no-click rule.
// ---------------------------------------------------------------------

fn tier_pack(elements: Vec<ElementRecord>, transitions: Vec<Transition>) -> SitePack {
    let mut pages = BTreeMap::new();
    pages.insert(
        "home".to_string(),
        PageDef {
            url: "https://tiers.test/".into(),
            visible_text: "tier fixture".into(),
            elements,
            modals: vec![],
            initial: true,
            scroll_height: 1000,
        },
    );
    pages.insert(
        "done".to_string(),
        PageDef {
            url: "https://tiers.test/done".into(),
            visible_text: "done".into(),
            elements: vec![],
            modals: vec![],
            initial: false,
            scroll_height: 1000,
        },
    );
    SitePack {
        site_id: "tiers".into(),
        task: None,
        pages,
        transitions,
    }
}

fn click_transition(element: &str) -> Transition {
    serde_json::from_value(serde_json::json!({
        "from_page": "home",
        "on": {"op": "click", "element": element},
        "effect": [{"type": "goto", "page": "done"}]
    }))
    .unwrap()
}

#[test]
fn criterion_5_grounding_tier_order() {
    // Click: tier-1 miss, structural recovery.
    let button = ElementRecord::new("target", ElementRole::Button, "Go", BBox::new(520, 500, 60, 24));
    let pack = tier_pack(vec![button], vec![click_transition("target")]);
    let mut env = sim_load(pack).unwrap();
    let before = env.snapshot().unwrap();
    let (outcome, attempts) = ground_click(
        &Action::click(505, 505, "Click go"),
        &before,
        &mut env,
        GroundingConfig::default(),
    );
    assert!(outcome.success, "{outcome:?}");
    let tiers: Vec<GroundingTier> = attempts.iter().map(|a| a.tier).collect();
    assert_eq!(tiers, vec![GroundingTier::Coordinate, GroundingTier::Structural]);

    // Type: stage-1 miss, no input near the point, global search lands it.
    let mut far_input = ElementRecord::new(
        "email_box",
        ElementRole::Input,
        "Email address",
        BBox::new(100, 800, 200, 30),
    );
    far_input.value = Some(String::new());
    let pack = tier_pack(vec![far_input], vec![]);
    let mut env = sim_load(pack).unwrap();
    let before = env.snapshot().unwrap();
    let mut type_action = Action::type_text(900, 100, "user@example.test", "Fill email");
    type_action.field = Some("email".into());
    let (outcome, attempts) = ground_type(
        &type_action,
        &before,
        &mut env,
        None,
        GroundingConfig::default(),
    );
    assert!(outcome.success, "{outcome:?}");
    let tiers: Vec<GroundingTier> = attempts.iter().map(|a| a.tier).collect();
    assert_eq!(
        tiers,
        vec![
            GroundingTier::Coordinate,
            GroundingTier::Structural,
            GroundingTier::GlobalSearch
        ]
    );

    // Select: stage-1 value mismatch, semantic search resolves; the op log
    // must contain no click operations at all.
    let mut sort = ElementRecord::new("sort", ElementRole::Select, "Sort", BBox::new(600, 200, 160, 40));
    sort.options = Some(vec!["Newest Addition".into(), "Oldest Addition".into()]);
    sort.value = Some("Newest Addition".into());
    let pack = tier_pack(vec![sort], vec![]);
    let mut env = sim_load(pack).unwrap();
    let before = env.snapshot().unwrap();
    let (outcome, attempts) = ground_select(
        &Action::select(650, 215, "oldest addition", "Sort oldest"),
        &before,
        &mut env,
        None,
        GroundingConfig::default(),
    );
    assert!(outcome.success);
    let tiers: Vec<GroundingTier> = attempts.iter().map(|a| a.tier).collect();
    assert_eq!(
        tiers,
        vec![GroundingTier::ScriptLevel, GroundingTier::SemanticSearch]
    );
    assert!(
        env.op_log().iter().all(|op| !matches!(
            op,
            EnvOp::CoordinateClick { .. } | EnvOp::ElementClick { .. } | EnvOp::Hover { .. }
        )),
        "select dispatched a click: {:?}",
        env.op_log()
    );

    println!(
        "PASS: grounding tier order (click coordinate->structural, type coordinate->structural->global_search, select script_level->semantic_search, zero click ops for select)"
    );
}

// ---------------------------------------------------------------------
// Criterion 6: fixture trajectories, deterministic across replays.
// ---------------------------------------------------------------------

#[test]
fn criterion_6_fixture_trajectories() {
    let allrecipes = fixture_config("allrecipes/pack.json", "allrecipes/models.json");
    let run1 = run_session(&allrecipes).expect("allrecipes session");
    assert_eq!(run1.final_status, FinalStatus::Success, "{:?}", run1.steps.last());
    assert_eq!(run1.steps.len(), 5, "allrecipes must finish in exactly 5 steps");
    assert!(run1.steps[2].action.description.contains("Close modal"));
    assert!(run1.steps[2].outcome.changed_channels.contains(&Channel::Modal));
    assert!(run1.steps[1].snapshot_after.modal_open);
    assert!(!run1.steps[2].snapshot_after.modal_open);
    assert_eq!(run1.steps[4].action.kind, ActionKind::Terminate);

    let recreation = fixture_config("recreation/pack.json", "recreation/models.json");
    let rec1 = run_session(&recreation).expect("recreation session");
    assert_eq!(rec1.final_status, FinalStatus::Success);
    assert_eq!(rec1.steps.len(), 10, "recreation must finish in exactly 10 steps");
    let last = rec1.steps.last().unwrap();
    assert_eq!(last.action.kind, ActionKind::Terminate);
    assert_eq!(last.action.status, Some(TerminateStatus::Success));
    assert!(rec1
        .steps
        .iter()
        .all(|s| s.outcome.success), "all recreation steps succeed");

    // Byte-identical canonical logs across fresh replays.
    let dir = tempfile::tempdir().unwrap();
    let mut digests = Vec::new();
    for (name, config) in [("allrecipes", &allrecipes), ("recreation", &recreation)] {
        let mut bytes = Vec::new();
        for pass in 0..2 {
            let trajectory = run_session(config).expect("replay session");
            let path = dir.path().join(format!("{name}_{pass}.jsonl"));
            write_trajectory(&trajectory, &path).unwrap();
            bytes.push(std::fs::read(&path).unwrap());
        }
        assert_eq!(bytes[0], bytes[1], "{name} log not byte-identical");
        digests.push((name, bytes[0].len()));
    }

    println!(
        "PASS: fixture trajectories (allrecipes 5 steps incl. modal dismissal, recreation 10 steps terminate(success), byte-identical logs {digests:?})"
    );
}

// ---------------------------------------------------------------------
// Criterion 7: ablation qualitative reproduction on the iframe variant.
// ---------------------------------------------------------------------

#[test]
fn criterion_7_ablation_reproduction() {
    // Full configuration recovers structurally and still succeeds in 5 steps.
    let full = fixture_config("allrecipes_iframe/pack.json", "allrecipes_iframe/models.json");
    let ok = run_session(&full).expect("variant full session");
    assert_eq!(ok.final_status, FinalStatus::Success);
    assert_eq!(ok.steps.len(), 5);
    let tiers: Vec<GroundingTier> = ok.steps[2].attempts.iter().map(|a| a.tier).collect();
    assert_eq!(
        tiers,
        vec![GroundingTier::Coordinate, GroundingTier::Structural],
        "variant close-modal step must recover via structural fallback"
    );

    // Fallbacks off: the same site stalls into the step limit with
    // consecutive identical no-change failures and a stall warning.
    let mut stalled_cfg = fixture_config(
        "allrecipes_iframe/pack.json",
        "allrecipes_iframe/models.no_moge.json",
    );
    stalled_cfg.flags.moge_fallbacks = false;
    stalled_cfg.max_steps = 8;
    let stalled = run_session(&stalled_cfg).expect("variant stalled session");
    assert_eq!(stalled.final_status, FinalStatus::StepLimit);
    assert_eq!(stalled.steps.len(), 8);
    let failing: Vec<&StepRecord> = stalled.steps.iter().filter(|s| !s.outcome.success).collect();
    assert!(failing.len() >= 3, "need >=3 failures, got {}", failing.len());
    let sig = failing[0].action.signature();
    let identical = failing.iter().filter(|s| s.action.signature() == sig).count();
    assert!(identical >= 3, "failures not identical: {identical}");
    assert!(failing
        .iter()
        .all(|s| s.outcome.error == Some(StepError::NoStateChange)));
    assert!(stalled.counters.stall_warnings >= 1, "no stall warning fired");

    // Memory-off unbounded: digest grows linearly with the trace.
    let pack = SitePack::load(&fixture("recreation/pack.json")).unwrap();
    let task = pack.task.clone().unwrap();
    let mut config = fixture_config("recreation/pack.json", "recreation/models.json");
    config.flags.memory = false;
    config.window_size = WindowSize::UNBOUNDED;
    let gateway = ModelGateway::new(&config.gateway_config().unwrap()).unwrap();
    let env = webagent_core::environment::sim_load(pack).unwrap();
    let mut runner = SessionRunner::new(config, task, gateway, env);
    let unbounded = runner.run();
    assert_eq!(unbounded.final_status, FinalStatus::Success);
    for echo in &runner.prompt_log {
        let lines = echo.history_digest.lines().count();
        let expected = if echo.index == 1 { 0 } else { echo.index }; // RECENT header + t-1 raw lines
        assert_eq!(
            lines, expected,
            "digest at step {} should hold all {} prior steps",
            echo.index,
            echo.index - 1
        );
    }
    assert_eq!(unbounded.counters.distillations, 0);

    // The adaptive default behaves measurably differently: distillation has
    // emptied the window so late digests stay bounded.
    let adaptive_cfg = fixture_config("recreation/pack.json", "recreation/models.json");
    let pack = SitePack::load(&fixture("recreation/pack.json")).unwrap();
    let task = pack.task.clone().unwrap();
    let gateway = ModelGateway::new(&adaptive_cfg.gateway_config().unwrap()).unwrap();
    let env = webagent_core::environment::sim_load(pack).unwrap();
    let mut adaptive_runner = SessionRunner::new(adaptive_cfg, task, gateway, env);
    let adaptive = adaptive_runner.run();
    assert_eq!(adaptive.counters.distillations, 2);
    let unbounded_last = runner.prompt_log.last().unwrap().history_digest.lines().count();
    let adaptive_last = adaptive_runner.prompt_log.last().unwrap().history_digest.lines().count();
    assert!(
        adaptive_last < unbounded_last,
        "adaptive digest ({adaptive_last} lines) should be shorter than unbounded ({unbounded_last})"
    );

    println!(
        "PASS: ablation reproduction (variant full succeeds in 5; no-fallbacks hits step limit with >=3 identical no-change failures + stall warning; W=unbounded digest grows linearly, adaptive stays bounded)"
    );
}

// ---------------------------------------------------------------------
// Criterion 8: single-inference grounding on the success fixtures.
// ---------------------------------------------------------------------

#[test]
fn criterion_8_single_inference_grounding() {
    let mut audited = 0;
    for (pack, models) in [
        ("allrecipes/pack.json", "allrecipes/models.json"),
        ("recreation/pack.json", "recreation/models.json"),
    ] {
        let config = fixture_config(pack, models);
        let trajectory = run_session(&config).expect("fixture session");
        assert_eq!(trajectory.final_status, FinalStatus::Success);
        for step in &trajectory.steps {
            let Some(first) = step.attempts.first() else {
                continue;
            };
            if !first.ok {
                continue;
            }
            let action_calls = step.model_calls_by_role.get("action").copied().unwrap_or(0);
            assert_eq!(
                action_calls, 1,
                "step {} of {pack}: tier-1 success must cost exactly one action call",
                step.index
            );
            let grounding_calls: usize = step.attempts.iter().map(|a| a.model_calls).sum();
            assert_eq!(
                grounding_calls, 0,
                "step {} of {pack}: tier-1 success must use zero grounding calls",
                step.index
            );
            audited += 1;
        }
        // Call accounting: init + per-step deltas cover the gateway total.
        let step_total: usize = trajectory.steps.iter().map(|s| s.model_calls).sum();
        assert_eq!(
            trajectory.counters.init_model_calls + step_total,
            trajectory.counters.total_model_calls,
            "{pack}: call accounting"
        );
    }
    assert!(audited >= 10, "audited only {audited} tier-1 steps");
    println!(
        "PASS: single-inference grounding ({audited} tier-1 steps audited: one action call, zero grounding calls each)"
    );
}
