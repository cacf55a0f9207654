//! Session orchestration: the initialization phase (plan synthesis and
//! checklist generation) followed by the execution loop, plus trajectory
//! logging and deterministic replay.

use crate::checklist::{generate_checklist, render_checklist_context, sync_checklist, Checklist};
use crate::domain::{
    Action, ActionKind, AttemptTarget, FailureShot, GroundingTier, Outcome, PageSnapshot,
    StepError, StepRecord, Task, TerminateStatus,
};
use crate::eip::{retrieve_knowledge, synthesize_plan, KnowledgeSource, Plan};
use crate::environment::{
    browser_connect, browser::looks_blocked, sim_load_with, BrowserConfig, EnvOp, Environment,
    SimOptions, SitePack,
};
use crate::gateway::{GatewayConfig, GatewayError, ModelGateway, ModelRequest, ModelRole};
use crate::grounding::{
    annotate_coordinate, build_som_overlay, ground_click, ground_select, ground_type,
    GroundingConfig,
};
use crate::memory::{MemoryConfig, MemoryState, WindowSize};
use crate::outcome::{analyze_patterns_with, diff_snapshots, judge_outcome, PatternThresholds};
use crate::protocol::{build_system_prompt, build_user_prompt, parse_tool_call};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DEFAULT_MAX_STEPS: usize = 30;
/// Recent-steps window for pattern analysis.
pub const PATTERN_WINDOW: usize = 5;
/// Raw step lines handed to the checklist sync prompt.
const SYNC_HISTORY_LINES: usize = 3;

fn default_max_steps() -> usize {
    DEFAULT_MAX_STEPS
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    #[serde(default = "default_true")]
    pub eip: bool,
    #[serde(default = "default_true")]
    pub checklist: bool,
    #[serde(default = "default_true")]
    pub memory: bool,
    #[serde(default = "default_true")]
    pub moge_fallbacks: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            eip: true,
            checklist: true,
            memory: true,
            moge_fallbacks: true,
        }
    }
}

fn default_viewport() -> (u32, u32) {
    (1280, 800)
}

fn default_settle() -> u64 {
    500
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvironmentSelection {
    Simulator {
        pack: PathBuf,
        #[serde(default)]
        synthetic_raster: bool,
    },
    Browser {
        endpoint: String,
        #[serde(default = "default_viewport")]
        viewport: (u32, u32),
        #[serde(default = "default_settle")]
        settle_delay_ms: u64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelsRef {
    Path(PathBuf),
    Inline(Box<GatewayConfig>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub window_size: WindowSize,
    #[serde(default)]
    pub flags: AblationFlags,
    pub environment: EnvironmentSelection,
    pub models: ModelsRef,
    /// Directory of canned knowledge docs keyed by site domain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge_corpus: Option<PathBuf>,
    /// Use the planner model's own search capability instead of the corpus.
    #[serde(default)]
    pub live_search: bool,
    #[serde(default)]
    pub pattern: PatternThresholds,
}

impl SessionConfig {
    pub fn load(path: &Path) -> Result<Self, SessionError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| SessionError::Init(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| SessionError::Init(format!("{}: {e}", path.display())))
    }

    pub fn gateway_config(&self) -> Result<GatewayConfig, SessionError> {
        match &self.models {
            ModelsRef::Inline(cfg) => Ok((**cfg).clone()),
            ModelsRef::Path(path) => GatewayConfig::load(path).map_err(SessionError::Gateway),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalStatus {
    Success,
    Failure,
    StepLimit,
    Blocked,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCounters {
    pub model_calls: BTreeMap<String, usize>,
    pub total_model_calls: usize,
    pub init_model_calls: usize,
    pub distillations: usize,
    pub stall_warnings: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub config: SessionConfig,
    pub steps: Vec<StepRecord>,
    pub final_status: FinalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checklist: Option<Checklist>,
    pub counters: TrajectoryCounters,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("initialization failed: {0}")]
    Init(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Environment(#[from] crate::environment::EnvError),
    #[error("no task: neither the config nor the pack provides one")]
    NoTask,
    #[error("invalid task: {0}")]
    Task(#[from] crate::domain::TaskError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Prompt echo per step, kept in memory for inspection (never logged).
#[derive(Clone, Debug)]
pub struct PromptEcho {
    pub index: usize,
    pub system: String,
    pub user: String,
    pub history_digest: String,
    pub checklist_context: String,
}

impl Environment for Box<dyn Environment> {
    fn capabilities(&self) -> crate::environment::Capabilities {
        (**self).capabilities()
    }
    fn snapshot(&mut self) -> Result<PageSnapshot, crate::environment::EnvError> {
        (**self).snapshot()
    }
    fn apply(&mut self, op: &EnvOp) -> Result<PageSnapshot, crate::environment::EnvError> {
        (**self).apply(op)
    }
}

/// Ops a non-grounded action kind dispatches directly.
pub fn direct_ops(action: &Action) -> Vec<EnvOp> {
    use crate::environment::ScrollDirection as SD;
    match action.kind {
        ActionKind::Keyboard => {
            if action.code.as_deref() == Some("CLEAR") {
                vec![
                    EnvOp::KeyCode { code: "SelectAll".into() },
                    EnvOp::KeyCode { code: "Delete".into() },
                ]
            } else if let Some(code) = &action.code {
                vec![EnvOp::KeyCode { code: code.clone() }]
            } else if let Some(text) = &action.text {
                vec![EnvOp::KeyText { text: text.clone() }]
            } else {
                vec![]
            }
        }
        ActionKind::PressEnter => vec![EnvOp::KeyCode { code: "Enter".into() }],
        ActionKind::ScrollUp => vec![EnvOp::Scroll { direction: SD::Up, at: action.coordinate }],
        ActionKind::ScrollDown => vec![EnvOp::Scroll { direction: SD::Down, at: action.coordinate }],
        ActionKind::ScrollTop => vec![EnvOp::Scroll { direction: SD::Top, at: action.coordinate }],
        ActionKind::ScrollBottom => {
            vec![EnvOp::Scroll { direction: SD::Bottom, at: action.coordinate }]
        }
        ActionKind::NewTab => vec![EnvOp::NewTab],
        ActionKind::CloseTab => vec![EnvOp::CloseTab],
        ActionKind::GoBack => vec![EnvOp::GoBack],
        ActionKind::GoForward => vec![EnvOp::GoForward],
        ActionKind::Wait => vec![EnvOp::Wait { seconds: action.time.unwrap_or(0.0) }],
        ActionKind::LeftClick
        | ActionKind::Hover
        | ActionKind::Type
        | ActionKind::Select
        | ActionKind::Terminate => vec![],
    }
}

enum ActionRequestError {
    Backend(GatewayError),
    Unparseable(String),
}

pub struct SessionRunner<E: Environment> {
    pub config: SessionConfig,
    pub task: Task,
    pub gateway: ModelGateway,
    pub env: E,
    pub memory: MemoryState,
    pub checklist: Option<Checklist>,
    pub plan: Option<Plan>,
    pub prompt_log: Vec<PromptEcho>,
    strategic: String,
    stall_warnings: usize,
    init_calls: usize,
}

impl<E: Environment> SessionRunner<E> {
    pub fn new(config: SessionConfig, task: Task, gateway: ModelGateway, env: E) -> Self {
        let memory = MemoryState::new(MemoryConfig {
            window_size: config.window_size,
            adaptive: config.flags.memory,
        });
        SessionRunner {
            config,
            task,
            gateway,
            env,
            memory,
            checklist: None,
            plan: None,
            prompt_log: Vec::new(),
            strategic: String::new(),
            stall_warnings: 0,
            init_calls: 0,
        }
    }

    /// Initialization phase: plan synthesis and checklist generation, both
    /// before any action-model call.
    fn initialize(&mut self) {
        if self.config.flags.eip {
            let docs = if self.config.live_search {
                retrieve_knowledge(&self.task, &KnowledgeSource::LiveSearch, Some(&mut self.gateway))
            } else if let Some(dir) = self.config.knowledge_corpus.clone() {
                retrieve_knowledge(&self.task, &KnowledgeSource::CannedCorpus(dir), None)
            } else {
                Vec::new()
            };
            let plan = synthesize_plan(&self.task, &docs, &mut self.gateway);
            self.strategic = plan.strategic_reasoning();
            self.plan = Some(plan);
        }
        if self.config.flags.checklist {
            self.checklist = Some(generate_checklist(&self.task, &mut self.gateway));
        }
        self.init_calls = self.gateway.total_calls();
    }

    fn request_action(
        &mut self,
        system: &str,
        user: &str,
        images: &[crate::raster::RasterHandle],
    ) -> Result<Action, ActionRequestError> {
        let mut request = ModelRequest::new(system, user);
        request.images = images.to_vec();
        let mut last_error = String::new();
        for attempt in 0..2 {
            if attempt == 1 {
                // One corrective re-prompt with the error notice appended.
                request.user = format!(
                    "{user}\n\nERROR: the previous response was invalid ({last_error}). \
                     Return exactly one <tool_call> block."
                );
            }
            let response = self
                .gateway
                .complete(ModelRole::Action, &request)
                .map_err(ActionRequestError::Backend)?;
            match parse_tool_call(&response.text).into_result() {
                Ok(action) => return Ok(action),
                Err(e) => {
                    log::warn!("tool-call parse failure (attempt {attempt}): {e}");
                    last_error = e.to_string();
                }
            }
        }
        Err(ActionRequestError::Unparseable(last_error))
    }

    fn attach_failure_shot(&self, outcome: &mut Outcome, before: &PageSnapshot, action: &Action) {
        if outcome.success || outcome.annotated_screenshot.is_some() {
            return;
        }
        outcome.annotated_screenshot =
            Some(match annotate_coordinate(before.screenshot.as_ref(), action.coordinate) {
                Some(raster) => FailureShot::Raster(raster),
                None => FailureShot::RasterUnavailable,
            });
    }

    pub fn run(&mut self) -> Trajectory {
        self.initialize();

        let mut steps: Vec<StepRecord> = Vec::new();
        let mut final_status = FinalStatus::StepLimit;
        let mut pattern_constraints: Vec<String> = Vec::new();
        let browser_env = matches!(self.config.environment, EnvironmentSelection::Browser { .. });

        if browser_env {
            let _ = self.env.apply(&EnvOp::Navigate { url: self.task.target_url.clone() });
            match self.env.snapshot() {
                Ok(first) if looks_blocked(&first) => {
                    return self.assemble(steps, FinalStatus::Blocked);
                }
                Err(e) => {
                    log::error!("initial snapshot failed: {e}");
                    return self.assemble(steps, FinalStatus::Failure);
                }
                _ => {}
            }
        }

        let grounding = GroundingConfig {
            fallbacks_enabled: self.config.flags.moge_fallbacks,
        };

        for index in 1..=self.config.max_steps {
            let before = match self.env.snapshot() {
                Ok(s) => s,
                Err(e) => {
                    log::error!("snapshot failed at step {index}: {e}");
                    final_status = FinalStatus::Failure;
                    break;
                }
            };

            let overlay = build_som_overlay(&before);
            let digest = self.memory.render_history_digest();
            let checklist_context = self
                .checklist
                .as_ref()
                .map(render_checklist_context)
                .unwrap_or_default();
            let system = build_system_prompt(&self.strategic);
            let user = build_user_prompt(
                &self.task,
                &self.strategic,
                &digest,
                &checklist_context,
                &pattern_constraints,
            );
            self.prompt_log.push(PromptEcho {
                index,
                system: system.clone(),
                user: user.clone(),
                history_digest: digest,
                checklist_context,
            });
            let images: Vec<crate::raster::RasterHandle> = overlay
                .rendered
                .clone()
                .or_else(|| before.screenshot.clone())
                .into_iter()
                .collect();

            let calls_at_start = self.gateway.per_role_counts();

            let (action, mut outcome, attempts, terminal) =
                match self.request_action(&system, &user, &images) {
                    Ok(action) if action.kind == ActionKind::Terminate => {
                        let status = match action.status {
                            Some(TerminateStatus::Success) => FinalStatus::Success,
                            _ => FinalStatus::Failure,
                        };
                        let outcome = Outcome::success(Default::default());
                        (action, outcome, Vec::new(), Some(status))
                    }
                    Ok(action) => {
                        let (outcome, attempts) = match action.kind {
                            ActionKind::LeftClick | ActionKind::Hover => {
                                let (o, a) = ground_click(&action, &before, &mut self.env, grounding);
                                (o, a)
                            }
                            ActionKind::Type => {
                                let (o, a) = ground_type(
                                    &action,
                                    &before,
                                    &mut self.env,
                                    Some(&mut self.gateway),
                                    grounding,
                                );
                                (o, a)
                            }
                            ActionKind::Select => {
                                let (o, a) = ground_select(
                                    &action,
                                    &before,
                                    &mut self.env,
                                    Some(&mut self.gateway),
                                    grounding,
                                );
                                (o, a)
                            }
                            _ => {
                                let mut exec_error: Option<StepError> = None;
                                let mut latest = before.clone();
                                for op in direct_ops(&action) {
                                    match self.env.apply(&op) {
                                        Ok(s) => latest = s,
                                        Err(e) => {
                                            exec_error = Some(e.into_step_error());
                                            break;
                                        }
                                    }
                                }
                                let diff = diff_snapshots(&before, &latest);
                                (judge_outcome(&action, exec_error, &diff, None), Vec::new())
                            }
                        };
                        (action, outcome, attempts, None)
                    }
                    Err(ActionRequestError::Backend(e)) => {
                        log::error!("action backend unavailable at step {index}: {e}");
                        let mut action = Action::new(ActionKind::Wait, "action model unavailable");
                        action.time = Some(0.0);
                        let outcome = Outcome::failure(
                            StepError::Protocol { detail: e.to_string() },
                            Default::default(),
                        );
                        (action, outcome, Vec::new(), Some(FinalStatus::Failure))
                    }
                    Err(ActionRequestError::Unparseable(detail)) => {
                        let mut action = Action::new(ActionKind::Wait, "model output unparseable");
                        action.time = Some(0.0);
                        let outcome = Outcome::failure(
                            StepError::Protocol { detail },
                            Default::default(),
                        );
                        (action, outcome, Vec::new(), None)
                    }
                };

            self.attach_failure_shot(&mut outcome, &before, &action);
            let snapshot_after = self.env.snapshot().unwrap_or_else(|_| before.clone());

            let mut record = StepRecord {
                index,
                action,
                outcome,
                snapshot_before: before,
                snapshot_after,
                model_calls: 0,
                model_calls_by_role: BTreeMap::new(),
                attempts: attempts.iter().map(|a| a.to_record()).collect(),
            };

            // Post-step bookkeeping: memory, checklist sync, pattern scan.
            let recent_history = self.memory.recent_lines(SYNC_HISTORY_LINES);
            let memory_gateway = self.config.flags.memory.then_some(&mut self.gateway);
            if let Err(e) = self.memory.record_step(record.clone(), memory_gateway) {
                log::error!("memory rejected step {index}: {e}");
            }
            if self.config.flags.checklist {
                if let Some(current) = &self.checklist {
                    let next = sync_checklist(
                        current,
                        &record.action,
                        &record.outcome,
                        &record.snapshot_after,
                        &recent_history,
                        &mut self.gateway,
                    );
                    self.checklist = Some(next);
                }
            }

            let calls_at_end = self.gateway.per_role_counts();
            for (role, end) in &calls_at_end {
                let delta = end - calls_at_start.get(role).copied().unwrap_or(0);
                if delta > 0 {
                    record.model_calls_by_role.insert(role.name().to_string(), delta);
                }
            }
            record.model_calls = record.model_calls_by_role.values().sum();

            steps.push(record);

            let verdict = analyze_patterns_with(&steps, PATTERN_WINDOW, self.config.pattern);
            pattern_constraints = verdict.constraint_line().into_iter().collect();
            if verdict.stall_warning {
                self.stall_warnings += 1;
            }

            if let Some(status) = terminal {
                final_status = status;
                break;
            }
        }

        self.assemble(steps, final_status)
    }

    fn assemble(&mut self, steps: Vec<StepRecord>, final_status: FinalStatus) -> Trajectory {
        let per_role = self.gateway.per_role_counts();
        let counters = TrajectoryCounters {
            model_calls: per_role
                .iter()
                .map(|(role, n)| (role.name().to_string(), *n))
                .collect(),
            total_model_calls: self.gateway.total_calls(),
            init_model_calls: self.init_calls,
            distillations: self.memory.chunk_index(),
            stall_warnings: self.stall_warnings,
        };
        Trajectory {
            config: self.config.clone(),
            steps,
            final_status,
            checklist: self.checklist.clone(),
            counters,
        }
    }
}

/// Builds the environment and gateway from the config and runs one session.
pub fn run_session(config: &SessionConfig) -> Result<Trajectory, SessionError> {
    let gateway = ModelGateway::new(&config.gateway_config()?)?;
    match &config.environment {
        EnvironmentSelection::Simulator { pack, synthetic_raster } => {
            let pack = SitePack::load(pack)?;
            let task = config
                .task
                .clone()
                .or_else(|| pack.task.clone())
                .ok_or(SessionError::NoTask)?;
            task.validate()?;
            let env = sim_load_with(pack, SimOptions { synthetic_raster: *synthetic_raster })?;
            let mut runner = SessionRunner::new(config.clone(), task, gateway, env);
            Ok(runner.run())
        }
        EnvironmentSelection::Browser { endpoint, viewport, settle_delay_ms } => {
            let task = config.task.clone().ok_or(SessionError::NoTask)?;
            task.validate()?;
            let env = browser_connect(BrowserConfig {
                endpoint: endpoint.clone(),
                viewport: *viewport,
                settle_delay_ms: *settle_delay_ms,
                ..BrowserConfig::default()
            })?;
            let mut runner = SessionRunner::new(config.clone(), task, gateway, env);
            Ok(runner.run())
        }
    }
}

/// Canonical JSON: keys sorted, no timestamps anywhere in the data model.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable");
    serde_json::to_string(&v).expect("value encodes")
}

/// Header line (config echo), one line per step, footer line (final status
/// and counters).
pub fn write_trajectory(trajectory: &Trajectory, path: &Path) -> Result<(), std::io::Error> {
    let mut file = std::fs::File::create(path)?;
    writeln!(
        file,
        "{}",
        canonical_json(&serde_json::json!({"type": "header", "config": trajectory.config}))
    )?;
    for step in &trajectory.steps {
        writeln!(
            file,
            "{}",
            canonical_json(&serde_json::json!({"type": "step", "record": step}))
        )?;
    }
    writeln!(
        file,
        "{}",
        canonical_json(&serde_json::json!({
            "type": "footer",
            "final_status": trajectory.final_status,
            "checklist": trajectory.checklist,
            "counters": trajectory.counters,
        }))
    )?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("trajectory parse: {0}")]
    Parse(String),
    #[error(transparent)]
    Environment(#[from] crate::environment::EnvError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayReport {
    pub steps: usize,
    /// First diverging step and a short description, when any.
    pub divergence: Option<(usize, String)>,
}

fn parse_trajectory_lines(raw: &str) -> Result<(serde_json::Value, Vec<StepRecord>), ReplayError> {
    let mut header = None;
    let mut steps = Vec::new();
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| ReplayError::Parse(e.to_string()))?;
        match v["type"].as_str() {
            Some("header") => header = Some(v["config"].clone()),
            Some("step") => steps.push(
                serde_json::from_value(v["record"].clone())
                    .map_err(|e| ReplayError::Parse(e.to_string()))?,
            ),
            Some("footer") => {}
            other => return Err(ReplayError::Parse(format!("unknown line type {other:?}"))),
        }
    }
    let header = header.ok_or_else(|| ReplayError::Parse("missing header line".into()))?;
    Ok((header, steps))
}

/// Ops to re-execute one recorded step without any model: the attempt trail
/// carries resolved targets and written values.
pub fn replay_ops(record: &StepRecord) -> Vec<EnvOp> {
    if matches!(record.outcome.error, Some(StepError::Protocol { .. }))
        || record.action.kind == ActionKind::Terminate
    {
        return Vec::new();
    }
    if record.attempts.is_empty() {
        return direct_ops(&record.action);
    }
    let mut ops = Vec::new();
    let clear_first = record.action.clear_first.unwrap_or(false);
    let press_enter = record.action.press_enter_after.unwrap_or(false);
    for attempt in &record.attempts {
        match (record.action.kind, attempt.tier, &attempt.target) {
            (ActionKind::LeftClick, GroundingTier::Coordinate, AttemptTarget::Coordinate((x, y))) => {
                ops.push(EnvOp::CoordinateClick { x: *x, y: *y });
            }
            (ActionKind::Hover, GroundingTier::Coordinate, AttemptTarget::Coordinate((x, y))) => {
                ops.push(EnvOp::Hover { x: *x, y: *y });
            }
            (ActionKind::LeftClick | ActionKind::Hover, GroundingTier::Structural, AttemptTarget::Element(key)) => {
                ops.push(EnvOp::ElementClick { key: key.clone() });
            }
            (ActionKind::Type, GroundingTier::Coordinate, AttemptTarget::Coordinate((x, y))) => {
                ops.push(EnvOp::FocusCoordinate { x: *x, y: *y });
                if clear_first {
                    ops.push(EnvOp::KeyCode { code: "SelectAll".into() });
                    ops.push(EnvOp::KeyCode { code: "Delete".into() });
                }
                if let Some(text) = &record.action.text {
                    ops.push(EnvOp::KeyText { text: text.clone() });
                }
                if press_enter && attempt.ok {
                    ops.push(EnvOp::KeyCode { code: "Enter".into() });
                }
            }
            (
                ActionKind::Type,
                GroundingTier::Structural | GroundingTier::GlobalSearch,
                AttemptTarget::Element(key),
            ) => {
                ops.push(EnvOp::FocusElement { key: key.clone() });
                if let Some(value) = &attempt.value {
                    ops.push(EnvOp::SetElementValue { key: key.clone(), value: value.clone() });
                }
                if press_enter && attempt.ok {
                    ops.push(EnvOp::KeyCode { code: "Enter".into() });
                }
            }
            (
                ActionKind::Select,
                GroundingTier::ScriptLevel | GroundingTier::SemanticSearch,
                AttemptTarget::Element(key),
            ) => {
                if let Some(value) = &attempt.value {
                    ops.push(EnvOp::SetElementValue { key: key.clone(), value: value.clone() });
                }
            }
            // Attempts that located nothing dispatched no operation.
            _ => {}
        }
    }
    ops
}

/// Re-executes a logged action sequence against a pack and verifies
/// per-step snapshot agreement (canonical form).
pub fn replay_trajectory(pack_path: &Path, trajectory_path: &Path) -> Result<ReplayReport, ReplayError> {
    let raw = std::fs::read_to_string(trajectory_path)?;
    let (header, steps) = parse_trajectory_lines(&raw)?;
    let synthetic_raster = header["environment"]["synthetic_raster"]
        .as_bool()
        .unwrap_or(false);
    let pack = SitePack::load(pack_path)?;
    let mut env = sim_load_with(pack, SimOptions { synthetic_raster })?;

    for record in &steps {
        for op in replay_ops(record) {
            let _ = env.apply(&op);
        }
        let actual = env.snapshot()?;
        if canonical_json(&actual) != canonical_json(&record.snapshot_after) {
            return Ok(ReplayReport {
                steps: steps.len(),
                divergence: Some((
                    record.index,
                    format!(
                        "snapshot mismatch at step {} (url {} vs {})",
                        record.index, actual.url, record.snapshot_after.url
                    ),
                )),
            });
        }
    }
    Ok(ReplayReport {
        steps: steps.len(),
        divergence: None,
    })
}
