//! Uniform access to the model roles (action, planner, checklist,
//! summarizer) over a chat-completion shape, plus a deterministic scripted
//! backend for tests and fixtures.

use crate::raster::RasterHandle;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelRole {
    Action,
    Planner,
    Checklist,
    Summarizer,
}

impl ModelRole {
    pub const ALL: [ModelRole; 4] = [
        ModelRole::Action,
        ModelRole::Planner,
        ModelRole::Checklist,
        ModelRole::Summarizer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelRole::Action => "action",
            ModelRole::Planner => "planner",
            ModelRole::Checklist => "checklist",
            ModelRole::Summarizer => "summarizer",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ModelRequest {
    pub system: String,
    pub user: String,
    pub images: Vec<RasterHandle>,
    pub max_tokens: Option<u32>,
}

impl ModelRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        ModelRequest {
            system: system.into(),
            user: user.into(),
            images: Vec::new(),
            max_tokens: None,
        }
    }

    fn match_text(&self) -> String {
        format!("{}\n{}", self.system, self.user)
    }
}

#[derive(Clone, Debug)]
pub struct ModelResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("role `{0}` is not bound to a backend")]
    RoleUnbound(&'static str),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("scripted backend exhausted for role `{role}`: {detail}")]
    ScriptExhausted { role: &'static str, detail: String },
    #[error("request exceeds backend size limit ({size} > {limit} chars)")]
    Oversize { size: usize, limit: usize },
}

/// One canned exchange. `match` substrings must all appear in the request
/// text; an empty list matches anything. `repeat` keeps the entry alive so
/// it can answer again (used for stall fixtures).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match", default)]
    pub match_substrings: Vec<String>,
    pub response: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub repeat: bool,
}

impl ScriptEntry {
    pub fn always(response: impl Into<String>) -> Self {
        ScriptEntry {
            match_substrings: Vec::new(),
            response: response.into(),
            repeat: false,
        }
    }

    pub fn matching(substrings: &[&str], response: impl Into<String>) -> Self {
        ScriptEntry {
            match_substrings: substrings.iter().map(|s| s.to_string()).collect(),
            response: response.into(),
            repeat: false,
        }
    }

    pub fn sticky(substrings: &[&str], response: impl Into<String>) -> Self {
        let mut e = Self::matching(substrings, response);
        e.repeat = true;
        e
    }

    fn matches(&self, request_text: &str) -> bool {
        self.match_substrings.iter().all(|m| request_text.contains(m))
    }
}

/// Ordered canned responses with single-use entries (unless `repeat`). The
/// lowest-index live entry whose substrings all match answers the request;
/// replaying the same request sequence yields the same response sequence.
#[derive(Clone, Debug)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    consumed: Vec<bool>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        let consumed = vec![false; entries.len()];
        ScriptedBackend { entries, consumed }
    }

    fn respond(&mut self, role: ModelRole, request_text: &str) -> Result<String, GatewayError> {
        for (i, entry) in self.entries.iter().enumerate() {
            if self.consumed[i] || !entry.matches(request_text) {
                continue;
            }
            if !entry.repeat {
                self.consumed[i] = true;
            }
            return Ok(entry.response.clone());
        }
        let live = self.consumed.iter().filter(|c| !**c).count();
        Err(GatewayError::ScriptExhausted {
            role: role.name(),
            detail: format!(
                "{live} live entries of {} matched nothing (request is {} chars)",
                self.entries.len(),
                request_text.len()
            ),
        })
    }
}

/// Backend binding as read from the models configuration file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Scripted {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        script: Option<Vec<ScriptEntry>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        script_path: Option<String>,
    },
    Http {
        endpoint: String,
        model: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        credential_env: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_tokens: Option<u32>,
    },
}

/// Role-to-backend map. The summarizer defaults to the checklist backend
/// when omitted.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct GatewayConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checklist: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summarizer: Option<BackendConfig>,
}

impl GatewayConfig {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::BackendUnavailable(format!("{}: {e}", path.display())))?;
        let mut cfg: GatewayConfig = serde_json::from_str(&raw)
            .map_err(|e| GatewayError::BackendUnavailable(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for slot in [
            &mut cfg.action,
            &mut cfg.planner,
            &mut cfg.checklist,
            &mut cfg.summarizer,
        ] {
            if let Some(BackendConfig::Scripted { script, script_path }) = slot {
                if script.is_none() {
                    let sp = script_path.clone().ok_or_else(|| {
                        GatewayError::BackendUnavailable(
                            "scripted backend needs `script` or `script_path`".into(),
                        )
                    })?;
                    let file = base.join(sp);
                    let text = std::fs::read_to_string(&file).map_err(|e| {
                        GatewayError::BackendUnavailable(format!("{}: {e}", file.display()))
                    })?;
                    *script = Some(serde_json::from_str(&text).map_err(|e| {
                        GatewayError::BackendUnavailable(format!("{}: {e}", file.display()))
                    })?);
                }
            }
        }
        Ok(cfg)
    }

    /// All-scripted config built in memory (tests, fixtures).
    pub fn scripted(
        action: Vec<ScriptEntry>,
        planner: Vec<ScriptEntry>,
        checklist: Vec<ScriptEntry>,
        summarizer: Vec<ScriptEntry>,
    ) -> Self {
        let wrap = |s: Vec<ScriptEntry>| {
            Some(BackendConfig::Scripted {
                script: Some(s),
                script_path: None,
            })
        };
        GatewayConfig {
            action: wrap(action),
            planner: wrap(planner),
            checklist: wrap(checklist),
            summarizer: wrap(summarizer),
        }
    }
}

enum Backend {
    Scripted(ScriptedBackend),
    Http(HttpBackend),
}

struct HttpBackend {
    endpoint: String,
    model: String,
    credential_env: Option<String>,
    max_tokens: Option<u32>,
    agent: ureq::Agent,
}

const REQUEST_CHAR_LIMIT: usize = 400_000;

impl HttpBackend {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let mut user_content = vec![serde_json::json!({"type": "text", "text": request.user})];
        for img in &request.images {
            if let Ok(png) = img.to_png() {
                let b64 = base64_encode(&png);
                user_content.push(serde_json::json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:image/png;base64,{b64}")}
                }));
            }
        }
        let body = serde_json::json!({
            "model": self.model,
            "max_tokens": request.max_tokens.or(self.max_tokens),
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": user_content},
            ],
        });

        let key = self
            .credential_env
            .as_ref()
            .and_then(|env| std::env::var(env).ok());

        let started = std::time::Instant::now();
        let mut last_err = None;
        for _ in 0..2 {
            let mut req = self.agent.post(&self.endpoint);
            if let Some(k) = &key {
                req = req.header("Authorization", &format!("Bearer {k}"));
            }
            match req.send_json(&body) {
                Ok(mut resp) => {
                    let v: serde_json::Value = resp
                        .body_mut()
                        .read_json()
                        .map_err(|e| GatewayError::BackendUnavailable(e.to_string()))?;
                    let text = v["choices"][0]["message"]["content"]
                        .as_str()
                        .unwrap_or_default()
                        .to_string();
                    let usage = &v["usage"];
                    return Ok(ModelResponse {
                        text,
                        prompt_tokens: usage["prompt_tokens"].as_u64().unwrap_or(0),
                        completion_tokens: usage["completion_tokens"].as_u64().unwrap_or(0),
                        latency_ms: started.elapsed().as_millis() as u64,
                    });
                }
                Err(e) => last_err = Some(e.to_string()),
            }
        }
        Err(GatewayError::BackendUnavailable(
            last_err.unwrap_or_else(|| "unknown transport error".into()),
        ))
    }
}

fn base64_encode(bytes: &[u8]) -> String {
    const TABLE: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    let mut out = String::with_capacity(bytes.len().div_ceil(3) * 4);
    for chunk in bytes.chunks(3) {
        let b = [chunk[0], *chunk.get(1).unwrap_or(&0), *chunk.get(2).unwrap_or(&0)];
        let n = (u32::from(b[0]) << 16) | (u32::from(b[1]) << 8) | u32::from(b[2]);
        out.push(TABLE[(n >> 18) as usize & 63] as char);
        out.push(TABLE[(n >> 12) as usize & 63] as char);
        out.push(if chunk.len() > 1 { TABLE[(n >> 6) as usize & 63] as char } else { '=' });
        out.push(if chunk.len() > 2 { TABLE[n as usize & 63] as char } else { '=' });
    }
    out
}

/// Per-session gateway instance. Every role is bound at construction;
/// counters account for every completed call.
pub struct ModelGateway {
    backends: BTreeMap<ModelRole, Backend>,
    per_role: BTreeMap<ModelRole, usize>,
    call_order: Vec<ModelRole>,
}

impl ModelGateway {
    /// Fails fast on unbound roles: action, planner, and checklist must be
    /// configured; summarizer falls back to the checklist backend.
    pub fn new(config: &GatewayConfig) -> Result<Self, GatewayError> {
        let build = |cfg: &BackendConfig| -> Backend {
            match cfg {
                BackendConfig::Scripted { script, .. } => Backend::Scripted(ScriptedBackend::new(
                    script.clone().unwrap_or_default(),
                )),
                BackendConfig::Http {
                    endpoint,
                    model,
                    credential_env,
                    max_tokens,
                } => Backend::Http(HttpBackend {
                    endpoint: endpoint.clone(),
                    model: model.clone(),
                    credential_env: credential_env.clone(),
                    max_tokens: *max_tokens,
                    agent: ureq::Agent::new_with_defaults(),
                }),
            }
        };

        let action = config
            .action
            .as_ref()
            .ok_or(GatewayError::RoleUnbound("action"))?;
        let planner = config
            .planner
            .as_ref()
            .ok_or(GatewayError::RoleUnbound("planner"))?;
        let checklist = config
            .checklist
            .as_ref()
            .ok_or(GatewayError::RoleUnbound("checklist"))?;
        let summarizer = config.summarizer.as_ref().unwrap_or(checklist);

        let mut backends = BTreeMap::new();
        backends.insert(ModelRole::Action, build(action));
        backends.insert(ModelRole::Planner, build(planner));
        backends.insert(ModelRole::Checklist, build(checklist));
        backends.insert(ModelRole::Summarizer, build(summarizer));

        Ok(ModelGateway {
            backends,
            per_role: BTreeMap::new(),
            call_order: Vec::new(),
        })
    }

    pub fn complete(
        &mut self,
        role: ModelRole,
        request: &ModelRequest,
    ) -> Result<ModelResponse, GatewayError> {
        let size = request.system.len() + request.user.len();
        if size > REQUEST_CHAR_LIMIT {
            return Err(GatewayError::Oversize {
                size,
                limit: REQUEST_CHAR_LIMIT,
            });
        }
        let backend = self
            .backends
            .get_mut(&role)
            .ok_or(GatewayError::RoleUnbound(role.name()))?;
        let response = match backend {
            Backend::Scripted(script) => {
                let text = script.respond(role, &request.match_text())?;
                ModelResponse {
                    prompt_tokens: (size / 4) as u64,
                    completion_tokens: (text.len() / 4) as u64,
                    latency_ms: 0,
                    text,
                }
            }
            Backend::Http(http) => http.complete(request)?,
        };
        *self.per_role.entry(role).or_insert(0) += 1;
        self.call_order.push(role);
        Ok(response)
    }

    pub fn calls_for(&self, role: ModelRole) -> usize {
        self.per_role.get(&role).copied().unwrap_or(0)
    }

    pub fn total_calls(&self) -> usize {
        self.per_role.values().sum()
    }

    pub fn per_role_counts(&self) -> BTreeMap<ModelRole, usize> {
        let mut all = BTreeMap::new();
        for role in ModelRole::ALL {
            all.insert(role, self.calls_for(role));
        }
        all
    }

    /// Chronological role sequence of completed calls.
    pub fn call_order(&self) -> &[ModelRole] {
        &self.call_order
    }
}
