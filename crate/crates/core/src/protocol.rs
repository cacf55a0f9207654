//! Prompt assembly and tool-call parsing. The prompt text ships as data
//! files under `templates/`; builders substitute only the `{slot}` tokens
//! and leave every other byte untouched.

use crate::domain::{check_action, Action, ActionKind, Task, ValidationError};
use crate::raster::RasterHandle;
use serde::Serialize;
use thiserror::Error;

pub const SYSTEM_PROMPT_TEMPLATE: &str = include_str!("../templates/system_prompt.txt");
pub const USER_PROMPT_TEMPLATE: &str = include_str!("../templates/user_prompt.txt");
pub const CHECKLIST_GENERATE_TEMPLATE: &str = include_str!("../templates/checklist_generate.txt");
pub const CHECKLIST_UPDATE_TEMPLATE: &str = include_str!("../templates/checklist_update.txt");
pub const TASK_CONSTRAINTS_TEXT: &str = include_str!("../templates/task_constraints.txt");

/// Task constraint key that expands to the login-prohibition block.
pub const POLICY_NO_LOGIN: &str = "no_login";

pub const TOOL_CALL_OPEN: &str = "<tool_call>";
pub const TOOL_CALL_CLOSE: &str = "</tool_call>";
pub const TOOL_FUNCTION_NAME: &str = "browser_use";

const KNOWN_ARGUMENT_KEYS: [&str; 10] = [
    "action",
    "coordinate",
    "text",
    "code",
    "clear_first",
    "press_enter_after",
    "field",
    "time",
    "status",
    "description",
];

/// Everything handed to the action model for one step.
#[derive(Clone, Debug)]
pub struct PromptBundle {
    pub system_prompt: String,
    pub user_prompt: String,
    pub images: Vec<RasterHandle>,
}

/// Pure substitution into the system template; identical inputs yield
/// byte-identical output.
pub fn build_system_prompt(strategic_reasoning: &str) -> String {
    SYSTEM_PROMPT_TEMPLATE.replace("{strategic_reasoning}", strategic_reasoning)
}

/// Fills the five user-prompt slots in template order. Login-prohibition
/// text is appended whenever the task carries the `no_login` constraint.
pub fn build_user_prompt(
    task: &Task,
    strategic_reasoning: &str,
    history_digest: &str,
    checklist_context: &str,
    extra_constraints: &[String],
) -> String {
    let mut constraint_lines: Vec<String> = Vec::new();
    for c in &task.constraints {
        if c == POLICY_NO_LOGIN {
            constraint_lines.push(TASK_CONSTRAINTS_TEXT.trim_end().to_string());
        } else {
            constraint_lines.push(c.clone());
        }
    }
    for c in extra_constraints {
        constraint_lines.push(c.clone());
    }
    let policy_constraints = constraint_lines.join("\n");

    USER_PROMPT_TEMPLATE
        .replace("{task}", &task.instruction)
        .replace("{strategic_reasoning}", strategic_reasoning)
        .replace("{policy_constraints}", &policy_constraints)
        .replace("{previous_actions}", history_digest)
        .replace("{checklist_context}", checklist_context)
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ToolCallError {
    #[error("no <tool_call> tag in model output")]
    NoToolCallTag,
    #[error("malformed tool-call JSON: {0}")]
    MalformedJson(String),
    #[error("unexpected function name `{0}`")]
    WrongFunctionName(String),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

/// Raw model output plus the parse result; exactly one of action/error.
#[derive(Clone, Debug)]
pub struct ToolCallEnvelope {
    pub raw_text: String,
    result: Result<Action, ToolCallError>,
}

impl ToolCallEnvelope {
    pub fn parsed(&self) -> Option<&Action> {
        self.result.as_ref().ok()
    }

    pub fn parse_error(&self) -> Option<&ToolCallError> {
        self.result.as_ref().err()
    }

    pub fn into_result(self) -> Result<Action, ToolCallError> {
        self.result
    }
}

/// Extracts the first `<tool_call>` span, decodes the JSON, and validates the
/// action. Text outside the tags and any second block are ignored. Unknown
/// argument keys are logged and dropped; unknown action kinds are rejected.
pub fn parse_tool_call(raw: &str) -> ToolCallEnvelope {
    ToolCallEnvelope {
        raw_text: raw.to_string(),
        result: parse_inner(raw),
    }
}

fn parse_inner(raw: &str) -> Result<Action, ToolCallError> {
    let start = raw.find(TOOL_CALL_OPEN).ok_or(ToolCallError::NoToolCallTag)?;
    let body_start = start + TOOL_CALL_OPEN.len();
    let end = raw[body_start..]
        .find(TOOL_CALL_CLOSE)
        .ok_or(ToolCallError::NoToolCallTag)?;
    let body = raw[body_start..body_start + end].trim();

    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| ToolCallError::MalformedJson(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ToolCallError::MalformedJson("top level is not an object".into()))?;

    let name = obj
        .get("name")
        .and_then(|v| v.as_str())
        .ok_or_else(|| ToolCallError::MalformedJson("missing `name`".into()))?;
    if name != TOOL_FUNCTION_NAME {
        return Err(ToolCallError::WrongFunctionName(name.to_string()));
    }

    let arguments = obj
        .get("arguments")
        .and_then(|v| v.as_object())
        .ok_or_else(|| ToolCallError::MalformedJson("missing `arguments` object".into()))?;

    let kind_str = arguments
        .get("action")
        .and_then(|v| v.as_str())
        .ok_or_else(|| ToolCallError::MalformedJson("missing `action`".into()))?;
    if ActionKind::from_wire(kind_str).is_none() {
        return Err(ValidationError::UnknownKind {
            kind: kind_str.to_string(),
        }
        .into());
    }

    let mut cleaned = serde_json::Map::new();
    for (k, v) in arguments {
        if KNOWN_ARGUMENT_KEYS.contains(&k.as_str()) {
            cleaned.insert(k.clone(), v.clone());
        } else {
            log::warn!("dropping unknown tool-call argument `{k}`");
        }
    }

    let action: Action = serde_json::from_value(serde_json::Value::Object(cleaned))
        .map_err(|e| ToolCallError::MalformedJson(e.to_string()))?;
    check_action(&action)?;
    Ok(action)
}

#[derive(Serialize)]
struct ToolCallWire<'a> {
    name: &'static str,
    arguments: &'a Action,
}

/// Serializes an action back to the wire form inside `<tool_call>` tags.
pub fn serialize_action(action: &Action) -> String {
    let wire = ToolCallWire {
        name: TOOL_FUNCTION_NAME,
        arguments: action,
    };
    format!(
        "{TOOL_CALL_OPEN}\n{}\n{TOOL_CALL_CLOSE}",
        serde_json::to_string(&wire).expect("action serialization cannot fail")
    )
}
