//! Web-agent runtime: strategic plan synthesis from external how-to
//! knowledge, a verifiable task-tracking checklist, sliding-window memory
//! with recursive summarization, tiered multimodal grounding, and layered
//! outcome detection — runnable end-to-end against a deterministic site
//! simulator or a remote-debugging browser endpoint.

pub mod checklist;
pub mod domain;
pub mod eip;
pub mod environment;
pub mod gateway;
pub mod grounding;
pub mod memory;
pub mod outcome;
pub mod protocol;
pub mod raster;
pub mod session;

pub use domain::{Action, ActionKind, Outcome, PageSnapshot, StepRecord, Task};
pub use session::{run_session, FinalStatus, SessionConfig, Trajectory};
