//! Sliding-window interaction history with chunked recursive summarization
//! and failure reflection. When the raw window fills, its steps are
//! distilled into the persistent summary; failed steps leave a note that
//! survives eviction.
//!
//! Digest rendering is a stable external format with `SUMMARY:`,
//! `FAILURES:`, and `RECENT:` sections (empty sections omitted) so
//! trajectory logs stay diffable.

use crate::domain::{FailureShot, StepError, StepRecord};
use crate::gateway::{ModelGateway, ModelRequest, ModelRole};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_WINDOW: usize = 5;
/// Most recent failure notes shown in the digest; all notes persist.
pub const DIGEST_FAILURE_CAP: usize = 5;

const DISTILL_PROMPT: &str = "Condense the interaction history below into a short running summary. \
Keep URLs, filled values, and anything that failed.\n\nPrevious summary:\n{previous_summary}\n\n\
Steps in this chunk:\n{chunk_steps}\n\nFailure notes from this chunk:\n{failure_notes}\n\n\
Reply with the new summary only.";

const REFLECT_PROMPT: &str = "Summarize this failed step in one to three sentences so a later \
strategy can avoid repeating it.\n\nFailed step:\n{step_line}\n\nPage URL: {page_url}\n";

/// Raw window size. `Unbounded` disables distillation entirely (the full
/// history mode of the ablation grid).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WindowSize {
    Bounded(usize),
    Unbounded(UnboundedTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnboundedTag {
    Unbounded,
}

impl WindowSize {
    pub const UNBOUNDED: WindowSize = WindowSize::Unbounded(UnboundedTag::Unbounded);

    pub fn bound(self) -> Option<usize> {
        match self {
            WindowSize::Bounded(n) => Some(n.max(1)),
            WindowSize::Unbounded(_) => None,
        }
    }
}

impl Default for WindowSize {
    fn default() -> Self {
        WindowSize::Bounded(DEFAULT_WINDOW)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryConfig {
    #[serde(default)]
    pub window_size: WindowSize,
    /// Adaptive mode distills chunks and reflects failures. The plain mode
    /// keeps only the raw window (the non-adaptive ablation rows).
    #[serde(default = "default_adaptive")]
    pub adaptive: bool,
}

fn default_adaptive() -> bool {
    true
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            window_size: WindowSize::default(),
            adaptive: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureNote {
    pub step_index: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screenshot: Option<FailureShot>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("step index gap: expected {expected}, got {got}")]
    IndexGap { expected: usize, got: usize },
}

/// Persistent summary + raw sliding buffer + failure-reflection buffer.
#[derive(Clone, Debug)]
pub struct MemoryState {
    config: MemoryConfig,
    summary: String,
    window: Vec<StepRecord>,
    failure_buffer: Vec<FailureNote>,
    chunk_index: usize,
    last_index: usize,
}

/// One line per step, stable enough for script matchers and log diffing.
pub fn step_line(step: &StepRecord) -> String {
    let mut line = format!("step {}: {}", step.index, step.action.kind);
    if let Some((x, y)) = step.action.coordinate {
        line.push_str(&format!(" [{x},{y}]"));
    }
    if let Some(text) = &step.action.text {
        line.push_str(&format!(" text=\"{text}\""));
    }
    line.push_str(&format!(" \"{}\"", step.action.description));
    if step.outcome.success {
        let channels: Vec<String> = step
            .outcome
            .changed_channels
            .iter()
            .map(|c| c.to_string())
            .collect();
        line.push_str(&format!(" -> ok (changed: {})", channels.join(", ")));
    } else {
        let err = step
            .outcome
            .error
            .as_ref()
            .map(|e| e.to_string())
            .unwrap_or_else(|| "unknown".into());
        line.push_str(&format!(" -> failed: {err}"));
    }
    line
}

impl MemoryState {
    pub fn new(config: MemoryConfig) -> Self {
        MemoryState {
            config,
            summary: String::new(),
            window: Vec::new(),
            failure_buffer: Vec::new(),
            chunk_index: 0,
            last_index: 0,
        }
    }

    pub fn config(&self) -> MemoryConfig {
        self.config
    }

    pub fn summary(&self) -> &str {
        &self.summary
    }

    pub fn window(&self) -> &[StepRecord] {
        &self.window
    }

    pub fn failure_buffer(&self) -> &[FailureNote] {
        &self.failure_buffer
    }

    /// Number of completed distillations (k).
    pub fn chunk_index(&self) -> usize {
        self.chunk_index
    }

    /// Appends a step, reflects on failure immediately (before any
    /// eviction), and distills when the window reaches its bound.
    pub fn record_step(
        &mut self,
        step: StepRecord,
        gateway: Option<&mut ModelGateway>,
    ) -> Result<(), MemoryError> {
        let expected = self.last_index + 1;
        if step.index != expected {
            return Err(MemoryError::IndexGap {
                expected,
                got: step.index,
            });
        }
        self.last_index = step.index;

        let failed = !step.outcome.success;
        self.window.push(step);

        let mut gateway = gateway;
        if self.config.adaptive && failed {
            let step_ref = self.window.last().expect("just pushed").clone();
            self.reflect_failure(&step_ref, gateway.as_deref_mut());
        }

        if let Some(bound) = self.config.window_size.bound() {
            if self.config.adaptive {
                if self.window.len() >= bound {
                    self.distill_chunk(gateway);
                }
            } else if self.window.len() > bound {
                // Plain sliding window: oldest raw steps simply fall out.
                let excess = self.window.len() - bound;
                self.window.drain(..excess);
            }
        }
        Ok(())
    }

    /// Distills the full window into the persistent summary via the
    /// summarizer role; a mechanical fallback keeps the window drainable
    /// when no model is available.
    pub fn distill_chunk(&mut self, gateway: Option<&mut ModelGateway>) {
        if self.window.is_empty() {
            return;
        }
        let first = self.window.first().expect("non-empty").index;
        let last = self.window.last().expect("non-empty").index;
        let chunk_lines: Vec<String> = self.window.iter().map(step_line).collect();
        let chunk_notes: Vec<&FailureNote> = self
            .failure_buffer
            .iter()
            .filter(|n| n.step_index >= first && n.step_index <= last)
            .collect();
        let notes_text = if chunk_notes.is_empty() {
            "(none)".to_string()
        } else {
            chunk_notes
                .iter()
                .map(|n| format!("- {}", n.text))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let request = ModelRequest::new(
            "",
            DISTILL_PROMPT
                .replace("{previous_summary}", if self.summary.is_empty() { "(none)" } else { &self.summary })
                .replace("{chunk_steps}", &chunk_lines.join("\n"))
                .replace("{failure_notes}", &notes_text),
        );
        let distilled = call_summarizer(gateway, &request)
            .unwrap_or_else(|| self.mechanical_summary(first, last, chunk_notes.len()));
        self.summary = distilled;
        self.chunk_index += 1;
        self.window.clear();
    }

    fn mechanical_summary(&self, first: usize, last: usize, failures: usize) -> String {
        let kinds: Vec<String> = self
            .window
            .iter()
            .map(|s| s.action.kind.to_string())
            .collect();
        let mut urls: Vec<&str> = Vec::new();
        for s in &self.window {
            for u in [s.snapshot_before.url.as_str(), s.snapshot_after.url.as_str()] {
                if !urls.contains(&u) {
                    urls.push(u);
                }
            }
        }
        let prior = if self.summary.is_empty() {
            String::new()
        } else {
            format!("{} ", self.summary)
        };
        format!(
            "{prior}Steps {first}-{last}: actions [{}]; visited [{}]; {failures} failure(s).",
            kinds.join(", "),
            urls.join(", ")
        )
    }

    /// Appends a distilled note for a failed step; the note carries the
    /// step's annotated screenshot handle and is never evicted.
    pub fn reflect_failure(&mut self, step: &StepRecord, gateway: Option<&mut ModelGateway>) {
        debug_assert!(!step.outcome.success);
        let line = step_line(step);
        let request = ModelRequest::new(
            "",
            REFLECT_PROMPT
                .replace("{step_line}", &line)
                .replace("{page_url}", &step.snapshot_before.url),
        );
        let text = call_summarizer(gateway, &request)
            .unwrap_or_else(|| mechanical_failure_note(step));
        self.failure_buffer.push(FailureNote {
            step_index: step.index,
            text,
            screenshot: step.outcome.annotated_screenshot.clone(),
        });
    }

    /// Summary (if any), then the most recent failure notes, then the raw
    /// window lines, under stable section headers.
    pub fn render_history_digest(&self) -> String {
        let mut sections: Vec<String> = Vec::new();
        if !self.summary.is_empty() {
            sections.push(format!("SUMMARY:\n{}", self.summary));
        }
        if self.config.adaptive && !self.failure_buffer.is_empty() {
            let start = self.failure_buffer.len().saturating_sub(DIGEST_FAILURE_CAP);
            let lines: Vec<String> = self.failure_buffer[start..]
                .iter()
                .map(|n| format!("- step {}: {}", n.step_index, n.text))
                .collect();
            sections.push(format!("FAILURES:\n{}", lines.join("\n")));
        }
        if !self.window.is_empty() {
            let lines: Vec<String> = self.window.iter().map(step_line).collect();
            sections.push(format!("RECENT:\n{}", lines.join("\n")));
        }
        sections.join("\n\n")
    }

    /// Last `n` raw window lines (for the checklist sync prompt).
    pub fn recent_lines(&self, n: usize) -> String {
        let start = self.window.len().saturating_sub(n);
        self.window[start..]
            .iter()
            .map(step_line)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn mechanical_failure_note(step: &StepRecord) -> String {
    match (&step.outcome.error, step.action.coordinate) {
        (Some(StepError::NoStateChange), Some((x, y))) => format!(
            "step {}: {} at [{x},{y}] produced no state change",
            step.index, step.action.kind
        ),
        (Some(err), _) => format!("step {}: {} failed: {err}", step.index, step.action.kind),
        (None, _) => format!("step {}: {} failed", step.index, step.action.kind),
    }
}

fn call_summarizer(gateway: Option<&mut ModelGateway>, request: &ModelRequest) -> Option<String> {
    let gw = gateway?;
    match gw.complete(ModelRole::Summarizer, request) {
        Ok(resp) if !resp.text.trim().is_empty() => Some(resp.text.trim().to_string()),
        Ok(_) | Err(_) => None,
    }
}
