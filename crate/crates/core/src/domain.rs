//! Shared domain types: tasks, actions, page snapshots, step records, and
//! outcome data. Pure data with validation; no behavior beyond that.

use crate::raster::RasterHandle;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

pub const COORD_MAX: i64 = 1000;
pub const TEXT_MAX_CHARS: usize = 200;
pub const CODE_MAX_CHARS: usize = 50;
pub const FIELD_MAX_CHARS: usize = 100;
pub const DESCRIPTION_MAX_CHARS: usize = 200;

/// User goal handed to the initialization phase.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub instruction: String,
    pub target_url: String,
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskError {
    #[error("task instruction is empty")]
    EmptyInstruction,
    #[error("target_url is not a URL: {0}")]
    BadUrl(String),
}

impl Task {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.instruction.trim().is_empty() {
            return Err(TaskError::EmptyInstruction);
        }
        url::Url::parse(&self.target_url)
            .map_err(|e| TaskError::BadUrl(format!("{}: {e}", self.target_url)))?;
        Ok(())
    }

    /// Host of the target URL with a leading `www.` stripped.
    pub fn site_domain(&self) -> Option<String> {
        let parsed = url::Url::parse(&self.target_url).ok()?;
        let host = parsed.host_str()?;
        Some(host.strip_prefix("www.").unwrap_or(host).to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    LeftClick,
    Hover,
    Keyboard,
    Type,
    Select,
    PressEnter,
    ScrollUp,
    ScrollDown,
    ScrollTop,
    ScrollBottom,
    NewTab,
    CloseTab,
    GoBack,
    GoForward,
    Wait,
    Terminate,
}

impl ActionKind {
    pub const ALL: [ActionKind; 16] = [
        ActionKind::LeftClick,
        ActionKind::Hover,
        ActionKind::Keyboard,
        ActionKind::Type,
        ActionKind::Select,
        ActionKind::PressEnter,
        ActionKind::ScrollUp,
        ActionKind::ScrollDown,
        ActionKind::ScrollTop,
        ActionKind::ScrollBottom,
        ActionKind::NewTab,
        ActionKind::CloseTab,
        ActionKind::GoBack,
        ActionKind::GoForward,
        ActionKind::Wait,
        ActionKind::Terminate,
    ];

    pub fn is_scroll(self) -> bool {
        matches!(
            self,
            ActionKind::ScrollUp
                | ActionKind::ScrollDown
                | ActionKind::ScrollTop
                | ActionKind::ScrollBottom
        )
    }

    pub fn as_wire(self) -> &'static str {
        match self {
            ActionKind::LeftClick => "left_click",
            ActionKind::Hover => "hover",
            ActionKind::Keyboard => "keyboard",
            ActionKind::Type => "type",
            ActionKind::Select => "select",
            ActionKind::PressEnter => "press_enter",
            ActionKind::ScrollUp => "scroll_up",
            ActionKind::ScrollDown => "scroll_down",
            ActionKind::ScrollTop => "scroll_top",
            ActionKind::ScrollBottom => "scroll_bottom",
            ActionKind::NewTab => "new_tab",
            ActionKind::CloseTab => "close_tab",
            ActionKind::GoBack => "go_back",
            ActionKind::GoForward => "go_forward",
            ActionKind::Wait => "wait",
            ActionKind::Terminate => "terminate",
        }
    }

    pub fn from_wire(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_wire() == s)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_wire())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminateStatus {
    Success,
    Failure,
}

/// One atomic browser operation in the tool-call schema. Field order matches
/// the wire schema; serialization skips absent optionals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    #[serde(rename = "action")]
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinate: Option<(i64, i64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clear_first: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub press_enter_after: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<TerminateStatus>,
    pub description: String,
}

impl Action {
    pub fn new(kind: ActionKind, description: impl Into<String>) -> Self {
        Action {
            kind,
            coordinate: None,
            text: None,
            code: None,
            clear_first: None,
            press_enter_after: None,
            field: None,
            time: None,
            status: None,
            description: description.into(),
        }
    }

    pub fn click(x: i64, y: i64, description: impl Into<String>) -> Self {
        let mut a = Action::new(ActionKind::LeftClick, description);
        a.coordinate = Some((x, y));
        a
    }

    pub fn type_text(x: i64, y: i64, text: impl Into<String>, description: impl Into<String>) -> Self {
        let mut a = Action::new(ActionKind::Type, description);
        a.coordinate = Some((x, y));
        a.text = Some(text.into());
        a
    }

    pub fn select(x: i64, y: i64, option: impl Into<String>, description: impl Into<String>) -> Self {
        let mut a = Action::new(ActionKind::Select, description);
        a.coordinate = Some((x, y));
        a.text = Some(option.into());
        a
    }

    pub fn terminate(status: TerminateStatus, description: impl Into<String>) -> Self {
        let mut a = Action::new(ActionKind::Terminate, description);
        a.coordinate = Some((500, 500));
        a.status = Some(status);
        a
    }

    /// Identity used by pattern analysis: repeated failures with the same
    /// signature count as "identical".
    pub fn signature(&self) -> (ActionKind, Option<(i64, i64)>, Option<&str>) {
        (self.kind, self.coordinate, self.text.as_deref())
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ValidationError {
    #[error("unknown action kind `{kind}`")]
    UnknownKind { kind: String },
    #[error("terminate requires a status")]
    MissingStatus,
    #[error("wait requires a non-negative time")]
    InvalidTime,
    #[error("{kind} requires a coordinate")]
    MissingCoordinate { kind: String },
    #[error("coordinate [{x},{y}] outside [0,{COORD_MAX}]")]
    CoordinateOutOfRange { x: i64, y: i64 },
    #[error("`{field}` exceeds {max} chars (got {len})")]
    FieldTooLong {
        field: String,
        max: usize,
        len: usize,
    },
}

/// Checks every schema invariant, reporting the first violated constraint.
/// Check order: terminate status, wait time, coordinate presence, coordinate
/// bounds, then length caps in schema order.
pub fn validate_action(action: Action) -> Result<Action, ValidationError> {
    check_action(&action)?;
    Ok(action)
}

pub fn check_action(action: &Action) -> Result<(), ValidationError> {
    if action.kind == ActionKind::Terminate && action.status.is_none() {
        return Err(ValidationError::MissingStatus);
    }
    if action.kind == ActionKind::Wait && !action.time.is_some_and(|t| t >= 0.0) {
        return Err(ValidationError::InvalidTime);
    }
    if !action.kind.is_scroll() && action.coordinate.is_none() {
        return Err(ValidationError::MissingCoordinate {
            kind: action.kind.as_wire().to_string(),
        });
    }
    if let Some((x, y)) = action.coordinate {
        if !(0..=COORD_MAX).contains(&x) || !(0..=COORD_MAX).contains(&y) {
            return Err(ValidationError::CoordinateOutOfRange { x, y });
        }
    }
    let caps: [(&str, Option<&String>, usize); 4] = [
        ("text", action.text.as_ref(), TEXT_MAX_CHARS),
        ("code", action.code.as_ref(), CODE_MAX_CHARS),
        ("field", action.field.as_ref(), FIELD_MAX_CHARS),
        ("description", Some(&action.description), DESCRIPTION_MAX_CHARS),
    ];
    for (name, value, max) in caps {
        if let Some(v) = value {
            let len = v.chars().count();
            if len > max {
                return Err(ValidationError::FieldTooLong {
                    field: name.to_string(),
                    max,
                    len,
                });
            }
        }
    }
    Ok(())
}

/// The six state facets compared by the outcome detector, in reporting
/// priority order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Text,
    Elements,
    Focus,
    Url,
    Scroll,
    Modal,
}

impl Channel {
    pub const PRIORITY: [Channel; 6] = [
        Channel::Text,
        Channel::Elements,
        Channel::Focus,
        Channel::Url,
        Channel::Scroll,
        Channel::Modal,
    ];
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Channel::Text => "text",
            Channel::Elements => "elements",
            Channel::Focus => "focus",
            Channel::Url => "url",
            Channel::Scroll => "scroll",
            Channel::Modal => "modal",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementRole {
    Button,
    Link,
    Input,
    Select,
    Option,
    Image,
    Container,
    IframeBoundary,
    Other,
}

/// Normalized rectangle in the `[0,1000]^2` viewport space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl BBox {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn contains(&self, px: i64, py: i64) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }

    pub fn center(&self) -> (i64, i64) {
        (self.x + self.w / 2, self.y + self.h / 2)
    }

    pub fn area(&self) -> i64 {
        self.w * self.h
    }

    pub fn within_viewport(&self) -> bool {
        self.x >= 0
            && self.y >= 0
            && self.w > 0
            && self.h > 0
            && self.x + self.w <= COORD_MAX
            && self.y + self.h <= COORD_MAX
    }
}

fn default_true() -> bool {
    true
}

/// One interactive element flattened out of the page (iframes included via
/// `frame_path`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementRecord {
    pub key: String,
    pub role: ElementRole,
    pub label: String,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frame_path: Vec<String>,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

impl ElementRecord {
    pub fn new(key: impl Into<String>, role: ElementRole, label: impl Into<String>, bbox: BBox) -> Self {
        ElementRecord {
            key: key.into(),
            role,
            label: label.into(),
            bbox,
            value: None,
            options: None,
            frame_path: Vec::new(),
            enabled: true,
        }
    }

    /// options non-empty iff role == select; frame_path empty means top
    /// document; bbox inside the viewport.
    pub fn validate(&self) -> Result<(), String> {
        if !self.bbox.within_viewport() {
            return Err(format!("element `{}`: bbox outside viewport", self.key));
        }
        let has_options = self.options.as_ref().is_some_and(|o| !o.is_empty());
        if (self.role == ElementRole::Select) != has_options {
            return Err(format!(
                "element `{}`: options must be non-empty iff role is select",
                self.key
            ));
        }
        Ok(())
    }
}

/// Captured environment state across the six diff channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageSnapshot {
    pub url: String,
    pub visible_text: String,
    pub interactive_elements: Vec<ElementRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focused_element: Option<String>,
    pub scroll_position: (i64, i64),
    pub modal_open: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modal_element: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screenshot: Option<RasterHandle>,
    /// Channels the backend could not populate; diffing skips these.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub unavailable_channels: BTreeSet<Channel>,
}

impl PageSnapshot {
    pub fn empty(url: impl Into<String>) -> Self {
        PageSnapshot {
            url: url.into(),
            visible_text: String::new(),
            interactive_elements: Vec::new(),
            focused_element: None,
            scroll_position: (0, 0),
            modal_open: false,
            modal_element: None,
            screenshot: None,
            unavailable_channels: BTreeSet::new(),
        }
    }

    /// Keeps the first occurrence of every element key.
    pub fn dedup_elements(&mut self) {
        let mut seen = BTreeSet::new();
        self.interactive_elements.retain(|e| seen.insert(e.key.clone()));
    }

    pub fn element(&self, key: &str) -> Option<&ElementRecord> {
        self.interactive_elements.iter().find(|e| e.key == key)
    }
}

/// Typed error attached to a failed outcome.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepError {
    NoStateChange,
    ReadbackMismatch,
    NoElementNearPoint,
    NoInputFound,
    AmbiguityUnresolved,
    OptionNotFound,
    VerificationFailed,
    Environment { detail: String },
    Protocol { detail: String },
}

impl fmt::Display for StepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepError::NoStateChange => write!(f, "no_state_change"),
            StepError::ReadbackMismatch => write!(f, "readback_mismatch"),
            StepError::NoElementNearPoint => write!(f, "no_element_near_point"),
            StepError::NoInputFound => write!(f, "no_input_found"),
            StepError::AmbiguityUnresolved => write!(f, "ambiguity_unresolved"),
            StepError::OptionNotFound => write!(f, "option_not_found"),
            StepError::VerificationFailed => write!(f, "verification_failed"),
            StepError::Environment { detail } => write!(f, "environment: {detail}"),
            StepError::Protocol { detail } => write!(f, "protocol: {detail}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadbackPair {
    pub expected: String,
    pub actual: String,
}

/// Screenshot evidence attached to a failure: the annotated raster, or an
/// explicit marker that no raster channel was available.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureShot {
    Raster(RasterHandle),
    RasterUnavailable,
}

/// Observed result of one executed action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub success: bool,
    pub changed_channels: BTreeSet<Channel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<StepError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readback_mismatch: Option<ReadbackPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotated_screenshot: Option<FailureShot>,
}

impl Outcome {
    pub fn success(changed_channels: BTreeSet<Channel>) -> Self {
        Outcome {
            success: true,
            changed_channels,
            error: None,
            readback_mismatch: None,
            annotated_screenshot: None,
        }
    }

    pub fn failure(error: StepError, changed_channels: BTreeSet<Channel>) -> Self {
        Outcome {
            success: false,
            changed_channels,
            error: Some(error),
            readback_mismatch: None,
            annotated_screenshot: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingTier {
    Coordinate,
    Structural,
    GlobalSearch,
    ScriptLevel,
    SemanticSearch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptTarget {
    Coordinate((i64, i64)),
    Element(String),
}

/// Grounding attempt as serialized into the trajectory log. `value` records
/// the concrete value written by set-value attempts so replay needs no model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub tier: GroundingTier,
    pub target: AttemptTarget,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<StepError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub model_calls: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

/// One executed step of a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub action: Action,
    pub outcome: Outcome,
    pub snapshot_before: PageSnapshot,
    pub snapshot_after: PageSnapshot,
    pub model_calls: usize,
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub model_calls_by_role: std::collections::BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attempts: Vec<AttemptRecord>,
}
