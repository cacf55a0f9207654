//! The world the agent acts in: one interface over a deterministic scripted
//! simulator and a remote-debugging browser adapter.

pub mod browser;
pub mod sitepack;
pub mod simulator;

pub use browser::{browser_connect, BrowserConfig, BrowserEnvironment};
pub use sitepack::{Effect, ModalDef, OpMatcher, PageDef, SitePack, Transition};
pub use simulator::{sim_load, sim_load_with, SimEnvironment, SimOptions};

use crate::domain::PageSnapshot;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub raster_screenshots: bool,
    pub script_level_select: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScrollDirection {
    Up,
    Down,
    Top,
    Bottom,
}

/// Concrete operation dispatched through an environment channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EnvOp {
    CoordinateClick { x: i64, y: i64 },
    ElementClick { key: String },
    Hover { x: i64, y: i64 },
    FocusCoordinate { x: i64, y: i64 },
    FocusElement { key: String },
    /// Synthetic typing into the focused element.
    KeyText { text: String },
    /// Key event by KeyboardEvent.code; `SelectAll` + `Delete` realize the
    /// CLEAR semantics of the prompt.
    KeyCode { code: String },
    /// Script-level value assignment (the select channel).
    SetElementValue { key: String, value: String },
    Scroll {
        direction: ScrollDirection,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at: Option<(i64, i64)>,
    },
    Navigate { url: String },
    NewTab,
    CloseTab,
    GoBack,
    GoForward,
    Wait { seconds: f64 },
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("site pack invalid: {0}")]
    PackInvalid(String),
    #[error("no such element `{key}`")]
    NoSuchElement { key: String },
    #[error("connect failed: {detail}")]
    ConnectFailed { detail: String },
    #[error("protocol error: {detail}")]
    ProtocolError { detail: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl EnvError {
    /// Folds an environment failure into the step-level error type.
    pub fn into_step_error(self) -> crate::domain::StepError {
        crate::domain::StepError::Environment {
            detail: self.to_string(),
        }
    }
}

/// Every operation completes before the next snapshot is taken; snapshots
/// are consistent (no torn reads mid-transition).
pub trait Environment {
    fn capabilities(&self) -> Capabilities;
    fn snapshot(&mut self) -> Result<PageSnapshot, EnvError>;
    fn apply(&mut self, op: &EnvOp) -> Result<PageSnapshot, EnvError>;
}

/// Conformance check shared by the simulator and adapter test suites: all
/// six channels populated or explicitly marked unavailable.
pub fn check_snapshot_complete(snapshot: &PageSnapshot) -> Result<(), String> {
    use crate::domain::Channel;
    if snapshot.url.is_empty() && !snapshot.unavailable_channels.contains(&Channel::Url) {
        return Err("url empty and not marked unavailable".into());
    }
    if snapshot.modal_open && snapshot.modal_element.is_none() {
        return Err("modal open without a modal element reference".into());
    }
    let mut seen = std::collections::BTreeSet::new();
    for e in &snapshot.interactive_elements {
        if !seen.insert(&e.key) {
            return Err(format!("duplicate element key `{}`", e.key));
        }
        e.validate()?;
    }
    Ok(())
}
