//! Task-tracking checklist: generation from the instruction, structural
//! refinement, and one-item-per-step synchronization after each action.
//!
//! The applier enforces legality even against a misbehaving model: at most
//! one status changes per sync, ids never change, and statuses stay in the
//! closed lowercase set.

use crate::domain::{Action, Outcome, PageSnapshot, Task};
use crate::gateway::{ModelGateway, ModelRequest, ModelRole};
use crate::protocol::{CHECKLIST_GENERATE_TEMPLATE, CHECKLIST_UPDATE_TEMPLATE};
use serde::{Deserialize, Serialize};

pub const MIN_ITEMS: usize = 2;
pub const MAX_ITEMS: usize = 6;
pub const MAX_DESCRIPTION_WORDS: usize = 10;
/// Retries for generation decode failures before the hardcoded fallback.
pub const GENERATION_RETRIES: usize = 2;
/// Page text budget in the sync prompt.
pub const PAGE_TEXT_BUDGET: usize = 1500;

pub const FALLBACK_ITEMS: [&str; 2] = [
    "Task steps executed without errors",
    "Task goal state reached",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Pending,
    InProgress,
    Completed,
    Failed,
}

impl ItemStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemStatus::Pending => "pending",
            ItemStatus::InProgress => "in_progress",
            ItemStatus::Completed => "completed",
            ItemStatus::Failed => "failed",
        }
    }

    /// Strictly lowercase spellings only.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pending" => Some(ItemStatus::Pending),
            "in_progress" => Some(ItemStatus::InProgress),
            "completed" => Some(ItemStatus::Completed),
            "failed" => Some(ItemStatus::Failed),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub id: String,
    pub description: String,
    pub status: ItemStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checklist {
    pub items: Vec<ChecklistItem>,
    /// Last synchronized step index.
    pub step: usize,
}

impl Checklist {
    pub fn status_pairs(&self) -> Vec<(String, ItemStatus)> {
        self.items
            .iter()
            .map(|i| (i.id.clone(), i.status))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChecklistUpdate {
    pub item_id: String,
    pub new_status: ItemStatus,
    pub reason: String,
}

fn fallback_checklist() -> Checklist {
    Checklist {
        items: FALLBACK_ITEMS
            .iter()
            .enumerate()
            .map(|(i, d)| ChecklistItem {
                id: format!("requirement_{}", i + 1),
                description: (*d).to_string(),
                status: ItemStatus::Pending,
            })
            .collect(),
        step: 0,
    }
}

/// Extracts the first balanced JSON object from model text (models often
/// wrap JSON in prose or code fences).
pub fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match c {
            '\\' if in_string => escaped = true,
            '"' => in_string = !in_string,
            '{' if !in_string => depth += 1,
            '}' if !in_string => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=start + i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn decode_generated(text: &str) -> Option<Vec<ChecklistItem>> {
    let json = extract_json_object(text)?;
    let v: serde_json::Value = serde_json::from_str(json).ok()?;
    let raw = v.get("checklist")?.as_array()?;
    let mut items = Vec::new();
    for entry in raw {
        let description = entry.get("description")?.as_str()?.trim().to_string();
        if description.is_empty() {
            return None;
        }
        let id = entry
            .get("id")
            .and_then(|i| i.as_str())
            .unwrap_or_default()
            .to_string();
        items.push(ChecklistItem {
            id,
            description,
            status: ItemStatus::Pending,
        });
    }
    if items.is_empty() {
        None
    } else {
        Some(items)
    }
}

/// Generates the initial checklist via the checklist role, refines it, and
/// falls back to the hardcoded execution/completion checkpoints after
/// persistent decode failures. Always yields 2..=6 pending items.
pub fn generate_checklist(task: &Task, gateway: &mut ModelGateway) -> Checklist {
    let prompt = CHECKLIST_GENERATE_TEMPLATE.replace("{task_description}", &task.instruction);
    let request = ModelRequest::new("", prompt);
    for attempt in 0..=GENERATION_RETRIES {
        match gateway.complete(ModelRole::Checklist, &request) {
            Ok(resp) => {
                if let Some(items) = decode_generated(&resp.text) {
                    return refine_checklist(Checklist { items, step: 0 });
                }
                log::warn!("checklist generation attempt {attempt}: undecodable output");
            }
            Err(e) => {
                log::warn!("checklist generation attempt {attempt}: {e}");
            }
        }
    }
    fallback_checklist()
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Splits an overlong description at a conjunction so both fragments fit the
/// word cap; truncates when no conjunction helps.
fn split_description(description: &str) -> Vec<String> {
    const CONJUNCTIONS: [&str; 3] = ["and", "then", "or"];
    let words: Vec<&str> = description.split_whitespace().collect();
    if words.len() <= MAX_DESCRIPTION_WORDS {
        return vec![words.join(" ")];
    }
    for (i, w) in words.iter().enumerate() {
        let lower = w.to_lowercase();
        if CONJUNCTIONS.contains(&lower.as_str()) {
            let left = words[..i].join(" ");
            let right = words[i + 1..].join(" ");
            if !left.is_empty()
                && !right.is_empty()
                && word_count(&left) <= MAX_DESCRIPTION_WORDS
                && word_count(&right) <= MAX_DESCRIPTION_WORDS
            {
                return vec![left, right];
            }
        }
    }
    vec![words[..MAX_DESCRIPTION_WORDS].join(" ")]
}

/// Splits complex sentences, deduplicates case-insensitively, renumbers ids,
/// and clamps the size to 2..=6; underflow yields the hardcoded fallback.
pub fn refine_checklist(raw: Checklist) -> Checklist {
    let mut split_items: Vec<ChecklistItem> = Vec::new();
    for item in raw.items {
        for fragment in split_description(&item.description) {
            split_items.push(ChecklistItem {
                id: String::new(),
                description: fragment,
                status: item.status,
            });
        }
    }

    let mut seen = std::collections::BTreeSet::new();
    split_items.retain(|i| seen.insert(i.description.to_lowercase()));

    split_items.truncate(MAX_ITEMS);
    if split_items.len() < MIN_ITEMS {
        return fallback_checklist();
    }
    for (i, item) in split_items.iter_mut().enumerate() {
        item.id = format!("requirement_{}", i + 1);
    }
    Checklist {
        items: split_items,
        step: raw.step,
    }
}

fn decode_updates(text: &str) -> Option<Vec<serde_json::Value>> {
    let json = extract_json_object(text)?;
    let v: serde_json::Value = serde_json::from_str(json).ok()?;
    v.get("updates")?.as_array().cloned()
}

fn truncate_chars(s: &str, budget: usize) -> String {
    s.chars().take(budget).collect()
}

/// One line per item: `[status] description`.
pub fn render_checklist_context(current: &Checklist) -> String {
    current
        .items
        .iter()
        .map(|i| format!("[{}] {}", i.status.as_str(), i.description))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The sync prompt with action summary, recent history, truncated page
/// text, and the current checklist rendering.
pub fn build_update_prompt(
    current: &Checklist,
    action: &Action,
    outcome: &Outcome,
    snapshot: &PageSnapshot,
    recent_history: &str,
) -> String {
    let error_text = outcome
        .error
        .as_ref()
        .map(|e| e.to_string())
        .unwrap_or_else(|| "none".into());
    CHECKLIST_UPDATE_TEMPLATE
        .replace("{action_type}", action.kind.as_wire())
        .replace("{success}", if outcome.success { "true" } else { "false" })
        .replace("{error}", &error_text)
        .replace("{history_text}", recent_history)
        .replace(
            "{page_state_text}",
            &truncate_chars(&snapshot.visible_text, PAGE_TEXT_BUDGET),
        )
        .replace("{checklist_text}", &render_checklist_context(current))
}

/// Synchronizes after one action: builds the update prompt, applies at most
/// the first valid proposed update, and increments the step counter
/// regardless. Illegal ids or statuses are discarded; decode failures leave
/// the checklist unchanged (logged as degraded).
pub fn sync_checklist(
    current: &Checklist,
    action: &Action,
    outcome: &Outcome,
    snapshot: &PageSnapshot,
    recent_history: &str,
    gateway: &mut ModelGateway,
) -> Checklist {
    let mut next = current.clone();
    next.step += 1;

    let prompt = build_update_prompt(current, action, outcome, snapshot, recent_history);
    let response = match gateway.complete(ModelRole::Checklist, &ModelRequest::new("", prompt)) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("checklist sync degraded at step {}: {e}", next.step);
            return next;
        }
    };
    let Some(raw_updates) = decode_updates(&response.text) else {
        log::warn!("checklist sync degraded at step {}: undecodable output", next.step);
        return next;
    };

    for raw in raw_updates {
        let Some(update) = parse_update(&raw) else {
            continue;
        };
        let Some(item) = next.items.iter_mut().find(|i| i.id == update.item_id) else {
            log::warn!("discarding update for unknown item `{}`", update.item_id);
            continue;
        };
        item.status = update.new_status;
        break; // exactly one applied
    }
    next
}

fn parse_update(raw: &serde_json::Value) -> Option<ChecklistUpdate> {
    let item_id = raw.get("item_id")?.as_str()?.to_string();
    let status_str = raw.get("new_status")?.as_str()?;
    let new_status = ItemStatus::parse(status_str)?;
    Some(ChecklistUpdate {
        item_id,
        new_status,
        reason: raw
            .get("reason")
            .and_then(|r| r.as_str())
            .unwrap_or_default()
            .to_string(),
    })
}
