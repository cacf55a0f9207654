//! Layered outcome detection: execution errors, state-change verification,
//! action-specific readback checks, and strategic pattern analysis over
//! recent steps.

use crate::domain::{
    Action, ActionKind, Channel, Outcome, PageSnapshot, ReadbackPair, StepError, StepRecord,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Scroll positions within this many normalized units compare equal.
pub const SCROLL_TOLERANCE: i64 = 2;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StateDiff {
    pub changed_channels: BTreeSet<Channel>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<Channel, String>,
}

impl StateDiff {
    pub fn is_empty(&self) -> bool {
        self.changed_channels.is_empty()
    }
}

pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn element_set(snap: &PageSnapshot) -> BTreeSet<(String, String, String)> {
    snap.interactive_elements
        .iter()
        .map(|e| {
            (
                e.key.clone(),
                e.label.clone(),
                e.value.clone().unwrap_or_default(),
            )
        })
        .collect()
}

/// Compares the six channels in priority order. Channels marked unavailable
/// in either snapshot are skipped. Text is compared after whitespace
/// normalization, elements as sets of (key, label, value), scroll with a
/// +/-2 unit tolerance.
pub fn diff_snapshots(before: &PageSnapshot, after: &PageSnapshot) -> StateDiff {
    let mut diff = StateDiff::default();
    let unavailable: BTreeSet<Channel> = before
        .unavailable_channels
        .union(&after.unavailable_channels)
        .copied()
        .collect();
    let mut mark = |c: Channel, detail: String| {
        diff.changed_channels.insert(c);
        diff.details.insert(c, detail);
    };

    for channel in Channel::PRIORITY {
        if unavailable.contains(&channel) {
            continue;
        }
        match channel {
            Channel::Text => {
                if normalize_text(&before.visible_text) != normalize_text(&after.visible_text) {
                    mark(channel, "visible text changed".into());
                }
            }
            Channel::Elements => {
                let b = element_set(before);
                let a = element_set(after);
                if b != a {
                    let added: Vec<_> = a.difference(&b).map(|(k, _, _)| k.clone()).collect();
                    let removed: Vec<_> = b.difference(&a).map(|(k, _, _)| k.clone()).collect();
                    mark(
                        channel,
                        format!("added: [{}] removed: [{}]", added.join(","), removed.join(",")),
                    );
                }
            }
            Channel::Focus => {
                if before.focused_element != after.focused_element {
                    mark(
                        channel,
                        format!(
                            "{} -> {}",
                            before.focused_element.as_deref().unwrap_or("none"),
                            after.focused_element.as_deref().unwrap_or("none")
                        ),
                    );
                }
            }
            Channel::Url => {
                if before.url != after.url {
                    mark(channel, format!("{} -> {}", before.url, after.url));
                }
            }
            Channel::Scroll => {
                let (bx, by) = before.scroll_position;
                let (ax, ay) = after.scroll_position;
                if (bx - ax).abs() > SCROLL_TOLERANCE || (by - ay).abs() > SCROLL_TOLERANCE {
                    mark(channel, format!("({bx},{by}) -> ({ax},{ay})"));
                }
            }
            Channel::Modal => {
                if before.modal_open != after.modal_open
                    || before.modal_element != after.modal_element
                {
                    mark(
                        channel,
                        format!("open: {} -> {}", before.modal_open, after.modal_open),
                    );
                }
            }
        }
    }
    diff
}

/// Verdict stages, in order: execution error, zero-state-change for clicks
/// and typing, readback mismatch for typing. Earlier stages are never
/// overridden by later ones. Scroll, wait, and the other kinds are exempt
/// from the zero-change flag.
pub fn judge_outcome(
    action: &Action,
    exec_error: Option<StepError>,
    diff: &StateDiff,
    readback: Option<&ReadbackPair>,
) -> Outcome {
    let channels = diff.changed_channels.clone();
    if let Some(err) = exec_error {
        return Outcome::failure(err, channels);
    }
    let flagged_kind = matches!(action.kind, ActionKind::LeftClick | ActionKind::Type);
    if flagged_kind && channels.is_empty() {
        return Outcome::failure(StepError::NoStateChange, channels);
    }
    if action.kind == ActionKind::Type {
        if let Some(pair) = readback {
            if pair.expected != pair.actual {
                let mut out = Outcome::failure(StepError::ReadbackMismatch, channels);
                out.readback_mismatch = Some(pair.clone());
                return out;
            }
        }
    }
    Outcome::success(channels)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StallReason {
    ConsecutiveIdenticalFailures,
    HighFailureRate,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternVerdict {
    pub stall_warning: bool,
    pub reason: StallReason,
    pub evidence: Vec<usize>,
}

impl PatternVerdict {
    pub fn clear() -> Self {
        PatternVerdict {
            stall_warning: false,
            reason: StallReason::None,
            evidence: Vec::new(),
        }
    }

    /// Constraint line injected into the next user prompt when stalling.
    pub fn constraint_line(&self) -> Option<String> {
        self.stall_warning
            .then(|| "WARNING: repeated failures detected; change strategy.".to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternThresholds {
    /// Consecutive failures with identical (kind, coordinate, text).
    pub consecutive_identical: usize,
    /// Failure fraction over the recent window that counts as high.
    pub failure_rate: f64,
}

impl Default for PatternThresholds {
    fn default() -> Self {
        PatternThresholds {
            consecutive_identical: 3,
            failure_rate: 0.6,
        }
    }
}

pub fn analyze_patterns(recent: &[StepRecord], window: usize) -> PatternVerdict {
    analyze_patterns_with(recent, window, PatternThresholds::default())
}

pub fn analyze_patterns_with(
    recent: &[StepRecord],
    window: usize,
    thresholds: PatternThresholds,
) -> PatternVerdict {
    let n = thresholds.consecutive_identical.max(1);
    if recent.len() >= n {
        let tail = &recent[recent.len() - n..];
        let all_failed = tail.iter().all(|s| !s.outcome.success);
        let first_sig = tail[0].action.signature();
        let identical = tail.iter().all(|s| s.action.signature() == first_sig);
        if all_failed && identical {
            return PatternVerdict {
                stall_warning: true,
                reason: StallReason::ConsecutiveIdenticalFailures,
                evidence: tail.iter().map(|s| s.index).collect(),
            };
        }
    }

    let window = window.max(1);
    let tail_len = recent.len().min(window);
    if tail_len > 0 {
        let tail = &recent[recent.len() - tail_len..];
        let failures: Vec<&StepRecord> = tail.iter().filter(|s| !s.outcome.success).collect();
        if failures.len() as f64 / tail_len as f64 >= thresholds.failure_rate {
            return PatternVerdict {
                stall_warning: true,
                reason: StallReason::HighFailureRate,
                evidence: failures.iter().map(|s| s.index).collect(),
            };
        }
    }
    PatternVerdict::clear()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BBox, ElementRecord, ElementRole};

    fn snap() -> PageSnapshot {
        let mut s = PageSnapshot::empty("https://site.test/");
        s.visible_text = "hello   world".into();
        s.interactive_elements = vec![ElementRecord::new(
            "btn",
            ElementRole::Button,
            "Go",
            BBox::new(10, 10, 50, 20),
        )];
        s
    }

    fn step(index: usize, action: Action, success: bool) -> StepRecord {
        let outcome = if success {
            Outcome::success(BTreeSet::from([Channel::Url]))
        } else {
            Outcome::failure(StepError::NoStateChange, BTreeSet::new())
        };
        StepRecord {
            index,
            action,
            outcome,
            snapshot_before: snap(),
            snapshot_after: snap(),
            model_calls: 1,
            model_calls_by_role: BTreeMap::new(),
            attempts: vec![],
        }
    }

    #[test]
    fn identical_snapshots_empty_diff() {
        assert!(diff_snapshots(&snap(), &snap()).is_empty());
    }

    #[test]
    fn url_only_change() {
        let before = snap();
        let mut after = snap();
        after.url = "https://site.test/next".into();
        let d = diff_snapshots(&before, &after);
        assert_eq!(d.changed_channels, BTreeSet::from([Channel::Url]));
    }

    #[test]
    fn whitespace_normalized_text_compare() {
        let before = snap();
        let mut after = snap();
        after.visible_text = "hello world".into();
        assert!(diff_snapshots(&before, &after).is_empty());
        after.visible_text = "hello there".into();
        assert_eq!(
            diff_snapshots(&before, &after).changed_channels,
            BTreeSet::from([Channel::Text])
        );
    }

    #[test]
    fn scroll_tolerance_two_units() {
        let before = snap();
        let mut after = snap();
        after.scroll_position = (0, 2);
        assert!(diff_snapshots(&before, &after).is_empty());
        after.scroll_position = (0, 3);
        assert_eq!(
            diff_snapshots(&before, &after).changed_channels,
            BTreeSet::from([Channel::Scroll])
        );
    }

    #[test]
    fn modal_opening_reports_elements_and_modal() {
        let before = snap();
        let mut after = snap();
        after.modal_open = true;
        after.modal_element = Some("overlay".into());
        after.interactive_elements.push(ElementRecord::new(
            "overlay",
            ElementRole::Container,
            "Dialog",
            BBox::new(100, 100, 400, 300),
        ));
        let d = diff_snapshots(&before, &after);
        assert_eq!(
            d.changed_channels,
            BTreeSet::from([Channel::Elements, Channel::Modal])
        );
    }

    #[test]
    fn element_value_change_detected() {
        let before = snap();
        let mut after = snap();
        after.interactive_elements[0].value = Some("filled".into());
        assert_eq!(
            diff_snapshots(&before, &after).changed_channels,
            BTreeSet::from([Channel::Elements])
        );
    }

    #[test]
    fn unavailable_channel_skipped() {
        let mut before = snap();
        before.unavailable_channels.insert(Channel::Text);
        let mut after = snap();
        after.visible_text = "different".into();
        assert!(diff_snapshots(&before, &after).is_empty());
    }

    #[test]
    fn click_with_empty_diff_fails_no_state_change() {
        let a = Action::click(5, 5, "Click");
        let out = judge_outcome(&a, None, &StateDiff::default(), None);
        assert!(!out.success);
        assert_eq!(out.error, Some(StepError::NoStateChange));
    }

    #[test]
    fn matching_readback_succeeds() {
        let a = Action::type_text(5, 5, "94587", "Type zip");
        let mut diff = StateDiff::default();
        diff.changed_channels.insert(Channel::Elements);
        let pair = ReadbackPair {
            expected: "94587".into(),
            actual: "94587".into(),
        };
        let out = judge_outcome(&a, None, &diff, Some(&pair));
        assert!(out.success);
    }

    #[test]
    fn readback_mismatch_fails_stage_three() {
        let a = Action::type_text(5, 5, "94587", "Type zip");
        let mut diff = StateDiff::default();
        diff.changed_channels.insert(Channel::Elements);
        let pair = ReadbackPair {
            expected: "94587".into(),
            actual: "945".into(),
        };
        let out = judge_outcome(&a, None, &diff, Some(&pair));
        assert_eq!(out.error, Some(StepError::ReadbackMismatch));
        assert_eq!(out.readback_mismatch, Some(pair));
    }

    #[test]
    fn scroll_at_bottom_is_exempt_from_flag() {
        let a = Action::new(ActionKind::ScrollDown, "Scroll");
        let out = judge_outcome(&a, None, &StateDiff::default(), None);
        assert!(out.success);
    }

    #[test]
    fn exec_error_never_overridden() {
        let a = Action::type_text(5, 5, "x", "Type");
        let mut diff = StateDiff::default();
        diff.changed_channels.insert(Channel::Elements);
        let pair = ReadbackPair {
            expected: "x".into(),
            actual: "".into(),
        };
        let out = judge_outcome(
            &a,
            Some(StepError::Environment {
                detail: "boom".into(),
            }),
            &diff,
            Some(&pair),
        );
        assert_eq!(
            out.error,
            Some(StepError::Environment {
                detail: "boom".into()
            })
        );
    }

    #[test]
    fn three_identical_failing_clicks_warn() {
        let a = Action::click(100, 100, "Click close");
        let recent = vec![
            step(1, a.clone(), true),
            step(2, a.clone(), false),
            step(3, a.clone(), false),
            step(4, a.clone(), false),
        ];
        let v = analyze_patterns(&recent, 5);
        assert!(v.stall_warning);
        assert_eq!(v.reason, StallReason::ConsecutiveIdenticalFailures);
        assert_eq!(v.evidence, vec![2, 3, 4]);
    }

    #[test]
    fn two_failures_of_five_below_thresholds() {
        let recent = vec![
            step(1, Action::click(1, 1, "a"), true),
            step(2, Action::click(2, 2, "b"), false),
            step(3, Action::click(3, 3, "c"), true),
            step(4, Action::click(4, 4, "d"), false),
            step(5, Action::click(5, 5, "e"), true),
        ];
        assert!(!analyze_patterns(&recent, 5).stall_warning);
    }

    #[test]
    fn four_distinct_failures_of_five_is_high_rate() {
        let recent = vec![
            step(1, Action::click(1, 1, "a"), false),
            step(2, Action::click(2, 2, "b"), false),
            step(3, Action::click(3, 3, "c"), true),
            step(4, Action::click(4, 4, "d"), false),
            step(5, Action::click(5, 5, "e"), false),
        ];
        let v = analyze_patterns(&recent, 5);
        assert!(v.stall_warning);
        assert_eq!(v.reason, StallReason::HighFailureRate);
        assert_eq!(v.evidence, vec![1, 2, 4, 5]);
    }

    #[test]
    fn appending_identical_failures_never_clears_warning() {
        let a = Action::click(9, 9, "same");
        let mut recent = vec![
            step(1, a.clone(), false),
            step(2, a.clone(), false),
            step(3, a.clone(), false),
        ];
        assert!(analyze_patterns(&recent, 5).stall_warning);
        for i in 4..10 {
            recent.push(step(i, a.clone(), false));
            assert!(analyze_patterns(&recent, 5).stall_warning, "cleared at {i}");
        }
    }

    #[test]
    fn stall_verdict_renders_constraint_line() {
        let a = Action::click(9, 9, "same");
        let recent = vec![
            step(1, a.clone(), false),
            step(2, a.clone(), false),
            step(3, a, false),
        ];
        let v = analyze_patterns(&recent, 5);
        assert_eq!(
            v.constraint_line().as_deref(),
            Some("WARNING: repeated failures detected; change strategy.")
        );
        assert_eq!(PatternVerdict::clear().constraint_line(), None);
    }
}
