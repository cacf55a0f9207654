//! Initialization-phase synthesis of a site-specific strategic plan from
//! external how-to knowledge. The plan is 2-4 imperative directives and
//! stays abstract: a lexical filter rejects selector- or coordinate-like
//! content regardless of model behavior.

use crate::domain::Task;
use crate::gateway::{ModelGateway, ModelRequest, ModelRole};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub const MIN_DIRECTIVES: usize = 2;
pub const MAX_DIRECTIVES: usize = 4;
/// Per-document character budget when splicing docs into the prompt.
const DOC_BODY_BUDGET: usize = 4000;

const SYNTHESIZE_PROMPT: &str = "You plan web navigation for the task below. Using the site \
guidance (when present), reply with 2-4 imperative sentences, one per line, describing how to \
complete the task on this site. Use visible labels and concrete interaction steps. Never mention \
CSS selectors, XPath, or pixel coordinates.\n\nTask: {instruction}\nSite: {domain}\n\nSite guidance:\n{docs}\n";

const LIVE_SEARCH_PROMPT: &str = "Search for the official help documentation, community forums, \
or user guides of {domain} that explain how to: {instruction}. Reply with the most useful \
guidance you find, as plain text.";

pub const FALLBACK_DIRECTIVES: [&str; 2] = [
    "Explore the site's main navigation to locate the task's starting point.",
    "Scroll to the page footer and check its links if navigation does not surface the goal.",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeDoc {
    pub source_url: String,
    pub title: String,
    pub body: String,
    pub retrieved_for: String,
}

#[derive(Clone, Debug)]
pub enum KnowledgeSource {
    /// Directory of fixture docs keyed by site domain (`<domain>.json`).
    CannedCorpus(PathBuf),
    /// Delegates to the planner model's own search capability.
    LiveSearch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanOrigin {
    /// Synthesized from retrieved documents.
    Docs,
    /// No documents; synthesized from the instruction alone (low confidence).
    InstructionOnly,
    /// Generic directive set after rejected model output.
    Fallback,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub directives: Vec<String>,
    pub provenance: Vec<String>,
    /// Asserts no selector- or coordinate-like tokens are present.
    pub abstract_only: bool,
    pub origin: PlanOrigin,
}

impl Plan {
    /// Rendering injected into the `{strategic_reasoning}` slot: one
    /// directive per line, verbatim.
    pub fn strategic_reasoning(&self) -> String {
        self.directives.join("\n")
    }
}

#[derive(Clone, Debug, Deserialize)]
struct CorpusFile {
    domain: String,
    docs: Vec<CorpusDoc>,
}

#[derive(Clone, Debug, Deserialize)]
struct CorpusDoc {
    source_url: String,
    title: String,
    body: String,
}

/// Returns 0..N docs for the task's site; an empty list is a legal result
/// and retrieval failures degrade to it rather than aborting the session.
pub fn retrieve_knowledge(
    task: &Task,
    source: &KnowledgeSource,
    gateway: Option<&mut ModelGateway>,
) -> Vec<KnowledgeDoc> {
    let Some(domain) = task.site_domain() else {
        log::warn!("source unavailable: task URL has no host");
        return Vec::new();
    };
    match source {
        KnowledgeSource::CannedCorpus(dir) => {
            let path = dir.join(format!("{domain}.json"));
            let raw = match std::fs::read_to_string(&path) {
                Ok(r) => r,
                Err(_) => return Vec::new(),
            };
            match serde_json::from_str::<CorpusFile>(&raw) {
                Ok(file) => file
                    .docs
                    .into_iter()
                    .filter(|d| !d.body.trim().is_empty())
                    .map(|d| KnowledgeDoc {
                        source_url: d.source_url,
                        title: d.title,
                        body: d.body,
                        retrieved_for: file.domain.clone(),
                    })
                    .collect(),
                Err(e) => {
                    log::warn!("source unavailable: corpus file {}: {e}", path.display());
                    Vec::new()
                }
            }
        }
        KnowledgeSource::LiveSearch => {
            let Some(gw) = gateway else {
                log::warn!("source unavailable: live search without a planner binding");
                return Vec::new();
            };
            let prompt = LIVE_SEARCH_PROMPT
                .replace("{domain}", &domain)
                .replace("{instruction}", &task.instruction);
            match gw.complete(ModelRole::Planner, &ModelRequest::new("", prompt)) {
                Ok(resp) if !resp.text.trim().is_empty() => vec![KnowledgeDoc {
                    source_url: format!("planner-search:{domain}"),
                    title: format!("Search results for {domain}"),
                    body: resp.text,
                    retrieved_for: domain,
                }],
                Ok(_) => Vec::new(),
                Err(e) => {
                    log::warn!("source unavailable: live search failed: {e}");
                    Vec::new()
                }
            }
        }
    }
}

/// Lexical abstractness check: rejects tokens carrying `#`, `//`, `css=`,
/// `xpath`, or bracketed integer pairs anywhere in the directive.
pub fn is_abstract_directive(directive: &str) -> bool {
    for token in directive.split_whitespace() {
        let lower = token.to_lowercase();
        if token.contains('#') || token.contains("//") || lower.contains("css=") || lower.contains("xpath") {
            return false;
        }
    }
    !contains_coordinate_pair(directive)
}

fn contains_coordinate_pair(s: &str) -> bool {
    let bytes = s.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b != b'[' {
            continue;
        }
        let rest = &s[i + 1..];
        let Some(end) = rest.find(']') else { continue };
        let inner = &rest[..end];
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.len() == 2 && parts.iter().all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_digit())) {
            return true;
        }
    }
    false
}

fn parse_directives(text: &str) -> Vec<String> {
    text.lines()
        .map(|line| {
            let trimmed = line.trim();
            let without_bullet = trimmed
                .trim_start_matches(['-', '*', '•'])
                .trim_start();
            // Strip a leading "1." / "2)" style enumerator.
            let digits: String = without_bullet.chars().take_while(|c| c.is_ascii_digit()).collect();
            if !digits.is_empty() {
                let rest = &without_bullet[digits.len()..];
                if let Some(stripped) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
                    return stripped.trim().to_string();
                }
            }
            without_bullet.to_string()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

fn fallback_plan(provenance: Vec<String>) -> Plan {
    Plan {
        directives: FALLBACK_DIRECTIVES.iter().map(|d| d.to_string()).collect(),
        provenance,
        abstract_only: true,
        origin: PlanOrigin::Fallback,
    }
}

/// Synthesizes the 2-4 directive plan once per session. Violating outputs
/// (selector-like content, out-of-range counts) get one corrective
/// re-prompt; a second violation falls back to the generic directive set,
/// except that a persistent overflow is truncated to the first four.
pub fn synthesize_plan(task: &Task, docs: &[KnowledgeDoc], gateway: &mut ModelGateway) -> Plan {
    let domain = task.site_domain().unwrap_or_else(|| "unknown".into());
    let docs_text = if docs.is_empty() {
        "(no site guidance retrieved; plan from the instruction alone)".to_string()
    } else {
        docs.iter()
            .map(|d| {
                let body: String = d.body.chars().take(DOC_BODY_BUDGET).collect();
                format!("## {} ({})\n{}", d.title, d.source_url, body)
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    };
    let provenance: Vec<String> = docs.iter().map(|d| d.source_url.clone()).collect();
    let base_prompt = SYNTHESIZE_PROMPT
        .replace("{instruction}", &task.instruction)
        .replace("{domain}", &domain)
        .replace("{docs}", &docs_text);

    let origin = if docs.is_empty() {
        PlanOrigin::InstructionOnly
    } else {
        PlanOrigin::Docs
    };

    let mut prompt = base_prompt.clone();
    let mut last_overflow: Option<Vec<String>> = None;
    for attempt in 0..2 {
        let response = match gateway.complete(ModelRole::Planner, &ModelRequest::new("", prompt.clone())) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("plan synthesis attempt {attempt} failed: {e}");
                return fallback_plan(provenance);
            }
        };
        let directives = parse_directives(&response.text);
        let all_abstract = directives.iter().all(|d| is_abstract_directive(d.as_str()));
        if all_abstract && (MIN_DIRECTIVES..=MAX_DIRECTIVES).contains(&directives.len()) {
            return Plan {
                directives,
                provenance,
                abstract_only: true,
                origin,
            };
        }
        if all_abstract && directives.len() > MAX_DIRECTIVES {
            last_overflow = Some(directives.clone());
        }
        log::warn!(
            "plan synthesis attempt {attempt} rejected ({} directives, abstract: {all_abstract})",
            directives.len()
        );
        prompt = format!(
            "{base_prompt}\nYour previous reply was rejected: respond with 2-4 plain imperative \
             sentences, one per line, with no selectors or coordinates."
        );
    }

    // Persistent overflow of otherwise-clean directives: keep the first four.
    if let Some(directives) = last_overflow {
        return Plan {
            directives: directives.into_iter().take(MAX_DIRECTIVES).collect(),
            provenance,
            abstract_only: true,
            origin,
        };
    }
    fallback_plan(provenance)
}
