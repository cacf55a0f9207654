//! Tiered grounding: every intent goes out through the direct channel
//! first (coordinate dispatch or script-level assignment) with structural
//! and semantic fallbacks per action kind. Tier order per kind:
//! click `coordinate -> structural`, type `coordinate -> structural ->
//! global_search`, select `script_level -> semantic_search`. Select never
//! opens dropdowns by clicking.

use crate::domain::{
    Action, ActionKind, AttemptRecord, AttemptTarget, BBox, ElementRecord, ElementRole,
    GroundingTier, Outcome, PageSnapshot, ReadbackPair, StepError,
};
use crate::environment::{EnvOp, Environment};
use crate::gateway::{ModelGateway, ModelRequest, ModelRole};
use crate::outcome::{diff_snapshots, judge_outcome, StateDiff};
use crate::raster::RasterHandle;
use serde::{Deserialize, Serialize};

/// Structural recovery gives up beyond this center distance (normalized
/// units).
pub const NEAR_CUTOFF: f64 = 50.0;

#[derive(Clone, Copy, Debug)]
pub struct GroundingConfig {
    /// Tier/stage 1 only when false (the no-fallbacks ablation).
    pub fallbacks_enabled: bool,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        GroundingConfig {
            fallbacks_enabled: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroundingAttempt {
    pub tier: GroundingTier,
    pub target: AttemptTarget,
    pub outcome: Outcome,
    pub model_calls_used: usize,
    /// Concrete value written by set-value attempts (replay needs it).
    pub value: Option<String>,
}

impl GroundingAttempt {
    pub fn to_record(&self) -> AttemptRecord {
        AttemptRecord {
            tier: self.tier,
            target: self.target.clone(),
            ok: self.outcome.success,
            error: self.outcome.error.clone(),
            value: self.value.clone(),
            model_calls: self.model_calls_used,
        }
    }
}

/// Roles a structural fallback may target; containers and frame boundaries
/// are context, not click targets.
fn is_actionable(role: ElementRole) -> bool {
    !matches!(role, ElementRole::Container | ElementRole::IframeBoundary)
}

fn center_distance(bbox: &BBox, x: i64, y: i64) -> f64 {
    let (cx, cy) = bbox.center();
    (((cx - x).pow(2) + (cy - y).pow(2)) as f64).sqrt()
}

/// Containing element first (smallest area wins), else nearest center within
/// the cutoff; ties break toward the smaller box, then the lower key.
pub fn locate_near<'a>(
    elements: &'a [ElementRecord],
    x: i64,
    y: i64,
    roles: Option<&[ElementRole]>,
) -> Option<&'a ElementRecord> {
    let eligible = |e: &&ElementRecord| {
        e.enabled
            && match roles {
                Some(allowed) => allowed.contains(&e.role),
                None => is_actionable(e.role),
            }
    };
    if let Some(hit) = elements
        .iter()
        .filter(eligible)
        .filter(|e| e.bbox.contains(x, y))
        .min_by_key(|e| (e.bbox.area(), e.key.clone()))
    {
        return Some(hit);
    }
    elements
        .iter()
        .filter(eligible)
        .map(|e| (center_distance(&e.bbox, x, y), e))
        .filter(|(d, _)| *d <= NEAR_CUTOFF)
        .min_by(|(da, a), (db, b)| {
            da.partial_cmp(db)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.bbox.area().cmp(&b.bbox.area()))
                .then(a.key.cmp(&b.key))
        })
        .map(|(_, e)| e)
}

/// Tracks the evolving environment state across one grounded step.
struct GroundRun<'a> {
    env: &'a mut dyn Environment,
    before: PageSnapshot,
    latest: PageSnapshot,
    attempts: Vec<GroundingAttempt>,
}

impl<'a> GroundRun<'a> {
    fn start(env: &'a mut dyn Environment, before: PageSnapshot) -> Self {
        GroundRun {
            env,
            latest: before.clone(),
            before,
            attempts: Vec::new(),
        }
    }

    /// Applies ops in sequence; stops at the first environment error.
    fn apply(&mut self, ops: &[EnvOp]) -> Result<(), StepError> {
        for op in ops {
            match self.env.apply(op) {
                Ok(snapshot) => self.latest = snapshot,
                Err(e) => return Err(e.into_step_error()),
            }
        }
        Ok(())
    }

    fn local_diff(&self, stage_start: &PageSnapshot) -> StateDiff {
        diff_snapshots(stage_start, &self.latest)
    }

    fn overall_diff(&self) -> StateDiff {
        diff_snapshots(&self.before, &self.latest)
    }

    fn push(&mut self, attempt: GroundingAttempt) {
        self.attempts.push(attempt);
    }

    /// Final step outcome: success/error from the last attempt, channels
    /// from the overall before/after diff.
    fn finish(self, action: &Action) -> (Outcome, Vec<GroundingAttempt>) {
        let overall = self.overall_diff();
        let last = self.attempts.last().expect("at least one attempt");
        let readback = last.outcome.readback_mismatch.clone();
        let mut outcome = if last.outcome.success {
            match action.kind {
                ActionKind::LeftClick | ActionKind::Hover | ActionKind::Type => {
                    judge_outcome(action, None, &overall, readback.as_ref())
                }
                _ => Outcome::success(overall.changed_channels.clone()),
            }
        } else {
            let exec_error = match &last.outcome.error {
                // Stage-derived verdicts are re-derived from the overall diff.
                Some(StepError::NoStateChange) | Some(StepError::ReadbackMismatch) | None => None,
                Some(other) => Some(other.clone()),
            };
            let mut out = judge_outcome(action, exec_error, &overall, readback.as_ref());
            if out.success {
                // The per-attempt verdict stands even when the overall diff
                // alone would not flag it (e.g. a failed select).
                out = Outcome::failure(
                    last.outcome.error.clone().unwrap_or(StepError::NoStateChange),
                    overall.changed_channels.clone(),
                );
            }
            out
        };
        if outcome.readback_mismatch.is_none() {
            outcome.readback_mismatch = readback;
        }
        (outcome, self.attempts)
    }
}

/// Coordinate click with structural recovery. Hover gets tier 1 only.
pub fn ground_click(
    action: &Action,
    before: &PageSnapshot,
    env: &mut dyn Environment,
    config: GroundingConfig,
) -> (Outcome, Vec<GroundingAttempt>) {
    let Some((x, y)) = action.coordinate else {
        let out = Outcome::failure(
            StepError::Protocol { detail: "click without coordinate".into() },
            Default::default(),
        );
        return (out, Vec::new());
    };
    let mut run = GroundRun::start(env, before.clone());

    let tier1_op = if action.kind == ActionKind::Hover {
        EnvOp::Hover { x, y }
    } else {
        EnvOp::CoordinateClick { x, y }
    };
    let stage_start = run.latest.clone();
    let tier1_outcome = match run.apply(&[tier1_op]) {
        Ok(()) => judge_outcome(action, None, &run.local_diff(&stage_start), None),
        Err(e) => judge_outcome(action, Some(e), &run.local_diff(&stage_start), None),
    };
    let tier1_ok = tier1_outcome.success;
    run.push(GroundingAttempt {
        tier: GroundingTier::Coordinate,
        target: AttemptTarget::Coordinate((x, y)),
        outcome: tier1_outcome,
        model_calls_used: 0,
        value: None,
    });

    let recoverable = action.kind == ActionKind::LeftClick && config.fallbacks_enabled;
    if tier1_ok || !recoverable {
        return run.finish(action);
    }

    // Structural recovery: element-keyed click on the control containing or
    // nearest the point.
    match locate_near(&run.latest.interactive_elements, x, y, None).map(|e| e.key.clone()) {
        None => {
            run.push(GroundingAttempt {
                tier: GroundingTier::Structural,
                target: AttemptTarget::Coordinate((x, y)),
                outcome: Outcome::failure(StepError::NoElementNearPoint, Default::default()),
                model_calls_used: 0,
                value: None,
            });
        }
        Some(key) => {
            let stage_start = run.latest.clone();
            let outcome = match run.apply(&[EnvOp::ElementClick { key: key.clone() }]) {
                Ok(()) => judge_outcome(action, None, &run.local_diff(&stage_start), None),
                Err(e) => judge_outcome(action, Some(e), &run.local_diff(&stage_start), None),
            };
            run.push(GroundingAttempt {
                tier: GroundingTier::Structural,
                target: AttemptTarget::Element(key),
                outcome,
                model_calls_used: 0,
                value: None,
            });
        }
    }
    run.finish(action)
}

fn clear_ops() -> [EnvOp; 2] {
    [
        EnvOp::KeyCode { code: "SelectAll".into() },
        EnvOp::KeyCode { code: "Delete".into() },
    ]
}

fn value_of(snapshot: &PageSnapshot, key: &str) -> String {
    snapshot
        .element(key)
        .and_then(|e| e.value.clone())
        .unwrap_or_default()
}

/// Staged text entry: coordinate focus + synthetic keyboard with readback
/// verification, then structural set-value on the nearest input, then a
/// global search over candidate inputs with one model call to break ties.
pub fn ground_type(
    action: &Action,
    before: &PageSnapshot,
    env: &mut dyn Environment,
    gateway: Option<&mut ModelGateway>,
    config: GroundingConfig,
) -> (Outcome, Vec<GroundingAttempt>) {
    let (Some((x, y)), Some(text)) = (action.coordinate, action.text.clone()) else {
        let out = Outcome::failure(
            StepError::Protocol { detail: "type without coordinate or text".into() },
            Default::default(),
        );
        return (out, Vec::new());
    };
    let clear_first = action.clear_first.unwrap_or(false);
    let press_enter = action.press_enter_after.unwrap_or(false);
    let mut run = GroundRun::start(env, before.clone());

    // Stage 1: focus at the coordinate and type through the key channel.
    let stage_start = run.latest.clone();
    let stage1 = (|run: &mut GroundRun| -> Result<ReadbackPair, StepError> {
        run.apply(&[EnvOp::FocusCoordinate { x, y }])?;
        let focus_key = run.latest.focused_element.clone();
        let prior = if clear_first {
            run.apply(&clear_ops())?;
            String::new()
        } else {
            focus_key.as_deref().map(|k| value_of(&run.latest, k)).unwrap_or_default()
        };
        run.apply(&[EnvOp::KeyText { text: text.clone() }])?;
        let expected = format!("{prior}{text}");
        let actual = focus_key
            .as_deref()
            .map(|k| value_of(&run.latest, k))
            .unwrap_or_default();
        let pair = ReadbackPair { expected, actual };
        if press_enter && pair.expected == pair.actual {
            run.apply(&[EnvOp::KeyCode { code: "Enter".into() }])?;
        }
        Ok(pair)
    })(&mut run);

    let outcome = match stage1 {
        Ok(pair) => judge_outcome(action, None, &run.local_diff(&stage_start), Some(&pair)),
        Err(e) => judge_outcome(action, Some(e), &run.local_diff(&stage_start), None),
    };
    let stage1_ok = outcome.success;
    run.push(GroundingAttempt {
        tier: GroundingTier::Coordinate,
        target: AttemptTarget::Coordinate((x, y)),
        outcome,
        model_calls_used: 0,
        value: None,
    });
    if stage1_ok || !config.fallbacks_enabled {
        return run.finish(action);
    }

    // Stage 2: structural targeting of the input containing or nearest the
    // coordinate.
    let input_roles = [ElementRole::Input];
    let stage2_key = locate_near(&run.latest.interactive_elements, x, y, Some(&input_roles))
        .map(|e| e.key.clone());
    let stage2_ok = match stage2_key {
        None => {
            run.push(GroundingAttempt {
                tier: GroundingTier::Structural,
                target: AttemptTarget::Coordinate((x, y)),
                outcome: Outcome::failure(StepError::NoElementNearPoint, Default::default()),
                model_calls_used: 0,
                value: None,
            });
            false
        }
        Some(key) => {
            let (outcome, written) =
                set_value_attempt(&mut run, action, &key, &text, clear_first, press_enter);
            let ok = outcome.success;
            run.push(GroundingAttempt {
                tier: GroundingTier::Structural,
                target: AttemptTarget::Element(key),
                outcome,
                model_calls_used: 0,
                value: Some(written),
            });
            ok
        }
    };
    if stage2_ok {
        return run.finish(action);
    }

    // Stage 3: global search over candidate inputs, ranked semantically
    // against `field` when present, else by spatial proximity; one model
    // call resolves remaining ties.
    let candidates: Vec<ElementRecord> = run
        .latest
        .interactive_elements
        .iter()
        .filter(|e| e.enabled && e.role == ElementRole::Input)
        .cloned()
        .collect();
    if candidates.is_empty() {
        run.push(GroundingAttempt {
            tier: GroundingTier::GlobalSearch,
            target: AttemptTarget::Coordinate((x, y)),
            outcome: Outcome::failure(StepError::NoInputFound, Default::default()),
            model_calls_used: 0,
            value: None,
        });
        return run.finish(action);
    }
    let (choice, model_calls) = pick_candidate(&candidates, action, (x, y), gateway);
    match choice {
        None => {
            run.push(GroundingAttempt {
                tier: GroundingTier::GlobalSearch,
                target: AttemptTarget::Coordinate((x, y)),
                outcome: Outcome::failure(StepError::AmbiguityUnresolved, Default::default()),
                model_calls_used: model_calls,
                value: None,
            });
        }
        Some(key) => {
            let (outcome, written) =
                set_value_attempt(&mut run, action, &key, &text, clear_first, press_enter);
            run.push(GroundingAttempt {
                tier: GroundingTier::GlobalSearch,
                target: AttemptTarget::Element(key),
                outcome,
                model_calls_used: model_calls,
                value: Some(written),
            });
        }
    }
    run.finish(action)
}

/// Element-keyed set-value with readback; shared by type stages 2 and 3.
fn set_value_attempt(
    run: &mut GroundRun,
    action: &Action,
    key: &str,
    text: &str,
    clear_first: bool,
    press_enter: bool,
) -> (Outcome, String) {
    let stage_start = run.latest.clone();
    let target_value = if clear_first {
        text.to_string()
    } else {
        format!("{}{}", value_of(&run.latest, key), text)
    };
    let ops = [
        EnvOp::FocusElement { key: key.to_string() },
        EnvOp::SetElementValue { key: key.to_string(), value: target_value.clone() },
    ];
    let outcome = match run.apply(&ops) {
        Ok(()) => {
            let pair = ReadbackPair {
                expected: target_value.clone(),
                actual: value_of(&run.latest, key),
            };
            if press_enter && pair.expected == pair.actual {
                if let Err(e) = run.apply(&[EnvOp::KeyCode { code: "Enter".into() }]) {
                    return (
                        judge_outcome(action, Some(e), &run.local_diff(&stage_start), None),
                        target_value,
                    );
                }
            }
            judge_outcome(action, None, &run.local_diff(&stage_start), Some(&pair))
        }
        Err(e) => judge_outcome(action, Some(e), &run.local_diff(&stage_start), None),
    };
    (outcome, target_value)
}

fn tokens(s: &str) -> std::collections::BTreeSet<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Token-overlap score as an exact rational (intersection, union).
fn semantic_score(field: &str, element: &ElementRecord) -> (usize, usize) {
    let a = tokens(field);
    let b: std::collections::BTreeSet<String> = tokens(&element.label)
        .union(&tokens(&element.key))
        .cloned()
        .collect();
    let inter = a.intersection(&b).count();
    let union = a.union(&b).count().max(1);
    (inter, union)
}

fn score_greater(a: (usize, usize), b: (usize, usize)) -> std::cmp::Ordering {
    (a.0 * b.1).cmp(&(b.0 * a.1))
}

/// Ranks candidates and returns the chosen key plus model calls spent. Ties
/// at the top go to one action-model pick (retried once on an invalid
/// reply).
fn pick_candidate(
    candidates: &[ElementRecord],
    action: &Action,
    coord: (i64, i64),
    gateway: Option<&mut ModelGateway>,
) -> (Option<String>, usize) {
    let mut ranked: Vec<&ElementRecord> = candidates.iter().collect();
    let tie: Vec<&ElementRecord> = match action.field.as_deref() {
        Some(field) if !field.trim().is_empty() => {
            ranked.sort_by(|a, b| {
                score_greater(semantic_score(field, b), semantic_score(field, a))
                    .then(a.key.cmp(&b.key))
            });
            let top = semantic_score(field, ranked[0]);
            ranked
                .iter()
                .copied()
                .take_while(|e| score_greater(semantic_score(field, e), top).is_eq())
                .collect()
        }
        _ => {
            let dist = |e: &ElementRecord| {
                let (cx, cy) = e.bbox.center();
                (cx - coord.0).pow(2) + (cy - coord.1).pow(2)
            };
            ranked.sort_by_key(|e| (dist(e), e.key.clone()));
            let top = dist(ranked[0]);
            ranked.iter().copied().take_while(|e| dist(e) == top).collect()
        }
    };

    if tie.len() == 1 {
        return (Some(tie[0].key.clone()), 0);
    }
    let Some(gw) = gateway else {
        // No model available: deterministic first-by-key.
        return (Some(tie[0].key.clone()), 0);
    };

    let listing: Vec<String> = tie
        .iter()
        .enumerate()
        .map(|(i, e)| format!("{}: \"{}\" (key {})", i + 1, e.label, e.key))
        .collect();
    let goal = action.field.clone().unwrap_or_else(|| action.description.clone());
    let base = format!(
        "Several input fields are equally plausible for \"{goal}\". Reply with the number of the \
         correct one and nothing else.\n{}",
        listing.join("\n")
    );
    let mut calls = 0;
    let mut prompt = base.clone();
    for _ in 0..2 {
        calls += 1;
        let reply = match gw.complete(ModelRole::Action, &ModelRequest::new("", prompt.clone())) {
            Ok(r) => r.text,
            Err(_) => return (None, calls),
        };
        if let Some(pick) = first_integer(&reply) {
            if pick >= 1 && pick <= tie.len() {
                return (Some(tie[pick - 1].key.clone()), calls);
            }
        }
        prompt = format!("{base}\nThat was not a valid number between 1 and {}.", tie.len());
    }
    (None, calls)
}

fn first_integer(s: &str) -> Option<usize> {
    let digits: String = s
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse().ok()
}

/// Dropdown interaction: direct value assignment through the script-level
/// channel, then a semantic search over every select's options. Never emits
/// a coordinate click.
pub fn ground_select(
    action: &Action,
    before: &PageSnapshot,
    env: &mut dyn Environment,
    gateway: Option<&mut ModelGateway>,
    config: GroundingConfig,
) -> (Outcome, Vec<GroundingAttempt>) {
    let (Some((x, y)), Some(wanted)) = (action.coordinate, action.text.clone()) else {
        let out = Outcome::failure(
            StepError::Protocol { detail: "select without coordinate or option text".into() },
            Default::default(),
        );
        return (out, Vec::new());
    };
    let mut run = GroundRun::start(env, before.clone());

    // Stage 1: script-level assignment on the select at/near the coordinate.
    let select_roles = [ElementRole::Select];
    let stage1_key = locate_near(&run.latest.interactive_elements, x, y, Some(&select_roles))
        .map(|e| e.key.clone());
    let stage1_ok = match stage1_key {
        None => {
            run.push(GroundingAttempt {
                tier: GroundingTier::ScriptLevel,
                target: AttemptTarget::Coordinate((x, y)),
                outcome: Outcome::failure(StepError::NoElementNearPoint, Default::default()),
                model_calls_used: 0,
                value: None,
            });
            false
        }
        Some(key) => {
            let (outcome, ok) = select_set_and_verify(&mut run, &key, &wanted);
            run.push(GroundingAttempt {
                tier: GroundingTier::ScriptLevel,
                target: AttemptTarget::Element(key),
                outcome,
                model_calls_used: 0,
                value: Some(wanted.clone()),
            });
            ok
        }
    };
    if stage1_ok || !config.fallbacks_enabled {
        return run.finish(action);
    }

    // Stage 2: semantic search across every select's options.
    let mut exact: Vec<(String, String)> = Vec::new();
    let mut fuzzy: Vec<(String, String)> = Vec::new();
    for element in run
        .latest
        .interactive_elements
        .iter()
        .filter(|e| e.enabled && e.role == ElementRole::Select)
    {
        for option in element.options.iter().flatten() {
            let o = option.to_lowercase();
            let w = wanted.to_lowercase();
            if o == w {
                exact.push((element.key.clone(), option.clone()));
            } else if o.contains(&w) || w.contains(&o) {
                fuzzy.push((element.key.clone(), option.clone()));
            }
        }
    }
    let candidates = if exact.is_empty() { fuzzy } else { exact };
    if candidates.is_empty() {
        run.push(GroundingAttempt {
            tier: GroundingTier::SemanticSearch,
            target: AttemptTarget::Coordinate((x, y)),
            outcome: Outcome::failure(StepError::OptionNotFound, Default::default()),
            model_calls_used: 0,
            value: None,
        });
        return run.finish(action);
    }

    let (pick, model_calls) = if candidates.len() == 1 {
        (0usize, 0usize)
    } else {
        resolve_option_ambiguity(&candidates, &wanted, gateway)
    };
    let (key, canonical) = candidates[pick].clone();
    let (outcome, _) = select_set_and_verify(&mut run, &key, &canonical);
    run.push(GroundingAttempt {
        tier: GroundingTier::SemanticSearch,
        target: AttemptTarget::Element(key),
        outcome,
        model_calls_used: model_calls,
        value: Some(canonical),
    });
    run.finish(action)
}

fn select_set_and_verify(run: &mut GroundRun, key: &str, value: &str) -> (Outcome, bool) {
    let stage_start = run.latest.clone();
    match run.apply(&[EnvOp::SetElementValue { key: key.to_string(), value: value.to_string() }]) {
        Ok(()) => {
            let channels = run.local_diff(&stage_start).changed_channels;
            if value_of(&run.latest, key) == value {
                (Outcome::success(channels), true)
            } else {
                (Outcome::failure(StepError::VerificationFailed, channels), false)
            }
        }
        Err(e) => (Outcome::failure(e, Default::default()), false),
    }
}

/// One action-model call to pick among matching (select, option) pairs; an
/// invalid reply falls back to the first candidate.
fn resolve_option_ambiguity(
    candidates: &[(String, String)],
    wanted: &str,
    gateway: Option<&mut ModelGateway>,
) -> (usize, usize) {
    let Some(gw) = gateway else {
        return (0, 0);
    };
    let listing: Vec<String> = candidates
        .iter()
        .enumerate()
        .map(|(i, (key, option))| format!("{}: option \"{option}\" in select `{key}`", i + 1))
        .collect();
    let prompt = format!(
        "Several dropdown options match \"{wanted}\". Reply with the number of the best match and \
         nothing else.\n{}",
        listing.join("\n")
    );
    match gw.complete(ModelRole::Action, &ModelRequest::new("", prompt)) {
        Ok(reply) => {
            if let Some(pick) = first_integer(&reply.text) {
                if pick >= 1 && pick <= candidates.len() {
                    return (pick - 1, 1);
                }
            }
            log::warn!("invalid ambiguity pick; defaulting to first candidate");
            (0, 1)
        }
        Err(_) => (0, 1),
    }
}

// --- Set-of-mark overlay -------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SomAnnotation {
    pub key: String,
    pub tag: usize,
    pub bbox: BBox,
    /// Where the tag is drawn; offset when tags would overlap.
    pub anchor: (i64, i64),
}

#[derive(Clone, Debug)]
pub struct SomOverlay {
    pub annotations: Vec<SomAnnotation>,
    pub rendered: Option<RasterHandle>,
}

const TAG_HEIGHT: i64 = 22;

fn tag_width(tag: usize) -> i64 {
    16 * tag.to_string().len() as i64 + 6
}

/// Numeric tags in reading order (top-to-bottom, left-to-right by bbox
/// top-left); overlapping anchors shift down so every tag stays legible.
/// Without a screenshot the annotation list is still produced and the
/// rendered handle stays empty.
pub fn build_som_overlay(snapshot: &PageSnapshot) -> SomOverlay {
    let mut visible: Vec<&ElementRecord> = snapshot
        .interactive_elements
        .iter()
        .filter(|e| e.bbox.within_viewport())
        .collect();
    visible.sort_by(|a, b| {
        (a.bbox.y, a.bbox.x, &a.key).cmp(&(b.bbox.y, b.bbox.x, &b.key))
    });

    let mut annotations: Vec<SomAnnotation> = Vec::new();
    for (i, element) in visible.iter().enumerate() {
        let tag = i + 1;
        let mut anchor = (element.bbox.x, element.bbox.y);
        let collides = |anchor: (i64, i64), placed: &[SomAnnotation]| {
            placed.iter().any(|p| {
                (anchor.0 - p.anchor.0).abs() < tag_width(tag).max(tag_width(p.tag))
                    && (anchor.1 - p.anchor.1).abs() < TAG_HEIGHT
            })
        };
        let mut guard = 0;
        while collides(anchor, &annotations) && guard < 64 {
            anchor.1 = (anchor.1 + TAG_HEIGHT).min(1000 - TAG_HEIGHT);
            if anchor.1 == 1000 - TAG_HEIGHT {
                anchor.0 += tag_width(tag);
            }
            guard += 1;
        }
        annotations.push(SomAnnotation {
            key: element.key.clone(),
            tag,
            bbox: element.bbox,
            anchor,
        });
    }

    let rendered = snapshot.screenshot.as_ref().and_then(|shot| {
        let mut canvas = shot.to_canvas()?;
        let (cw, ch) = (i64::from(canvas.width()), i64::from(canvas.height()));
        let sx = |v: i64| v * cw / 1000;
        let sy = |v: i64| v * ch / 1000;
        for a in &annotations {
            canvas.outline_rect(
                sx(a.bbox.x),
                sy(a.bbox.y),
                sx(a.bbox.w).max(2),
                sy(a.bbox.h).max(2),
                (220, 30, 30),
            );
            let (ax, ay) = (sx(a.anchor.0), sy(a.anchor.1));
            canvas.fill_rect(ax, ay, sx(tag_width(a.tag)).max(8), sy(TAG_HEIGHT).max(8), (220, 30, 30));
            canvas.draw_number(ax + 2, ay + 2, a.tag, 1, (255, 255, 255));
        }
        Some(canvas.freeze())
    });

    SomOverlay {
        annotations,
        rendered,
    }
}

/// Coordinate-annotated screenshot for failure reflection: a crosshair at
/// the action's normalized coordinate.
pub fn annotate_coordinate(
    screenshot: Option<&RasterHandle>,
    coordinate: Option<(i64, i64)>,
) -> Option<RasterHandle> {
    let shot = screenshot?;
    let mut canvas = shot.to_canvas()?;
    if let Some((x, y)) = coordinate {
        let px = x * i64::from(canvas.width()) / 1000;
        let py = y * i64::from(canvas.height()) / 1000;
        canvas.draw_crosshair(px, py, 8, (230, 40, 40));
    }
    Some(canvas.freeze())
}
