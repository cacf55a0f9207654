//! Declarative scripted-website definition driving the simulator: plain
//! JSON pages, elements, and modals, with dynamic behavior encoded as
//! operation-matched transitions.

use super::{EnvError, EnvOp, ScrollDirection};
use crate::domain::{ElementRecord, Task};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SitePack {
    pub site_id: String,
    /// Optional embedded task so a fixture is self-contained for `run`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    pub pages: BTreeMap<String, PageDef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transitions: Vec<Transition>,
}

fn default_scroll_height() -> i64 {
    1000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PageDef {
    pub url: String,
    #[serde(default)]
    pub visible_text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub elements: Vec<ElementRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modals: Vec<ModalDef>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub initial: bool,
    /// Total scrollable height in normalized units (viewport is 1000).
    #[serde(default = "default_scroll_height")]
    pub scroll_height: i64,
}

/// Modal overlay on a page. `trigger: null` opens it on page entry;
/// otherwise it opens when the matcher fires.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModalDef {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<OpMatcher>,
    pub elements: Vec<ElementRecord>,
    #[serde(default)]
    pub text: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Transition {
    pub from_page: String,
    pub on: OpMatcher,
    /// Effects applied in order when the matcher fires.
    pub effect: Vec<Effect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Effect {
    Goto { page: String },
    OpenModal { modal: String },
    CloseModal,
    SetValue { element: String, value: String },
    Focus { element: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKindMatcher {
    /// Coordinate click inside the named element's bbox, or an element click
    /// with its key.
    Click,
    CoordinateClick,
    ElementClick,
    Hover,
    Key,
    SetValue,
    Focus,
    Scroll,
    Navigate,
    Any,
}

/// Deterministic predicate over environment operations; first match wins in
/// declaration order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OpMatcher {
    pub op: OpKindMatcher,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<ScrollDirection>,
    /// Gate on whether any modal is open on the current page.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when_modal: Option<bool>,
}

impl OpMatcher {
    /// `resolve_bbox` maps an element key to its bbox on the current page
    /// state (including open modal elements).
    pub fn matches(
        &self,
        op: &EnvOp,
        modal_open: bool,
        resolve_bbox: &dyn Fn(&str) -> Option<crate::domain::BBox>,
    ) -> bool {
        if let Some(want) = self.when_modal {
            if modal_open != want {
                return false;
            }
        }
        let element_hit_by_point = |x: i64, y: i64| -> bool {
            match &self.element {
                None => true,
                Some(key) => resolve_bbox(key).is_some_and(|b| b.contains(x, y)),
            }
        };
        let element_hit_by_key = |key: &str| -> bool {
            self.element.as_deref().is_none_or(|want| want == key)
        };
        match (self.op, op) {
            (OpKindMatcher::Any, _) => true,
            (OpKindMatcher::Click, EnvOp::CoordinateClick { x, y }) => element_hit_by_point(*x, *y),
            (OpKindMatcher::Click, EnvOp::ElementClick { key }) => element_hit_by_key(key),
            (OpKindMatcher::CoordinateClick, EnvOp::CoordinateClick { x, y }) => {
                element_hit_by_point(*x, *y)
            }
            (OpKindMatcher::ElementClick, EnvOp::ElementClick { key }) => element_hit_by_key(key),
            (OpKindMatcher::Hover, EnvOp::Hover { x, y }) => element_hit_by_point(*x, *y),
            (OpKindMatcher::Key, EnvOp::KeyCode { code }) => {
                self.code.as_deref().is_none_or(|want| want == code)
            }
            (OpKindMatcher::Key, EnvOp::KeyText { text }) => {
                self.code.is_none()
                    && self
                        .text_contains
                        .as_deref()
                        .is_none_or(|want| text.contains(want))
            }
            (OpKindMatcher::SetValue, EnvOp::SetElementValue { key, value }) => {
                element_hit_by_key(key) && self.value.as_deref().is_none_or(|want| want == value)
            }
            (OpKindMatcher::Focus, EnvOp::FocusElement { key }) => element_hit_by_key(key),
            (OpKindMatcher::Focus, EnvOp::FocusCoordinate { x, y }) => element_hit_by_point(*x, *y),
            (OpKindMatcher::Scroll, EnvOp::Scroll { direction, .. }) => {
                self.direction.is_none_or(|want| want == *direction)
            }
            (OpKindMatcher::Navigate, EnvOp::Navigate { .. }) => true,
            _ => false,
        }
    }
}

impl SitePack {
    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let raw = std::fs::read_to_string(path)?;
        let pack: SitePack = serde_json::from_str(&raw)
            .map_err(|e| EnvError::PackInvalid(format!("{}: {e}", path.display())))?;
        pack.validate()?;
        Ok(pack)
    }

    pub fn initial_page(&self) -> Option<&str> {
        self.pages
            .iter()
            .find(|(_, p)| p.initial)
            .map(|(id, _)| id.as_str())
    }

    /// Lints the pack: exactly one initial page, resolvable references,
    /// element invariants, modal ids, matcher targets.
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::PackInvalid(msg));

        let initial_count = self.pages.values().filter(|p| p.initial).count();
        if initial_count != 1 {
            return bad(format!("expected exactly one initial page, found {initial_count}"));
        }

        for (page_id, page) in &self.pages {
            let mut keys = std::collections::BTreeSet::new();
            for e in &page.elements {
                e.validate()
                    .map_err(|m| EnvError::PackInvalid(format!("page `{page_id}`: {m}")))?;
                if !keys.insert(&e.key) {
                    return bad(format!("page `{page_id}`: duplicate element key `{}`", e.key));
                }
            }
            for m in &page.modals {
                if m.elements.is_empty() {
                    return bad(format!("page `{page_id}` modal `{}`: no elements", m.id));
                }
                for e in &m.elements {
                    e.validate().map_err(|msg| {
                        EnvError::PackInvalid(format!("page `{page_id}` modal `{}`: {msg}", m.id))
                    })?;
                    if !keys.insert(&e.key) {
                        return bad(format!(
                            "page `{page_id}` modal `{}`: duplicate element key `{}`",
                            m.id, e.key
                        ));
                    }
                }
            }
            if page.scroll_height < 1000 {
                return bad(format!("page `{page_id}`: scroll_height below viewport"));
            }
        }

        for (i, t) in self.transitions.iter().enumerate() {
            let page = match self.pages.get(&t.from_page) {
                Some(p) => p,
                None => {
                    return bad(format!(
                        "transition {i}: from_page `{}` does not exist",
                        t.from_page
                    ))
                }
            };
            let page_keys: std::collections::BTreeSet<&str> = page
                .elements
                .iter()
                .map(|e| e.key.as_str())
                .chain(
                    page.modals
                        .iter()
                        .flat_map(|m| m.elements.iter().map(|e| e.key.as_str())),
                )
                .collect();
            if let Some(el) = &t.on.element {
                if !page_keys.contains(el.as_str()) {
                    return bad(format!(
                        "transition {i}: matcher element `{el}` not on page `{}`",
                        t.from_page
                    ));
                }
            }
            if t.effect.is_empty() {
                return bad(format!("transition {i}: empty effect list"));
            }
            for effect in &t.effect {
                match effect {
                    Effect::Goto { page } => {
                        if !self.pages.contains_key(page) {
                            return bad(format!(
                                "transition {i}: to_page `{page}` does not exist"
                            ));
                        }
                    }
                    Effect::OpenModal { modal } => {
                        if !page.modals.iter().any(|m| &m.id == modal) {
                            return bad(format!(
                                "transition {i}: modal `{modal}` not defined on page `{}`",
                                t.from_page
                            ));
                        }
                    }
                    Effect::SetValue { element, .. } | Effect::Focus { element } => {
                        if !page_keys.contains(element.as_str()) {
                            return bad(format!(
                                "transition {i}: effect element `{element}` not on page `{}`",
                                t.from_page
                            ));
                        }
                    }
                    Effect::CloseModal => {}
                }
            }
        }
        Ok(())
    }
}
