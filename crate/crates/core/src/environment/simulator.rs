//! Deterministic scripted-site simulator. Identical operation sequences on
//! the same pack yield identical snapshot sequences; unmatched operations
//! leave state unchanged, which is exactly how no-op failures are modeled.

use super::sitepack::{Effect, SitePack};
use super::{Capabilities, EnvError, EnvOp, Environment, ScrollDirection};
use crate::domain::{BBox, ElementRecord, ElementRole, PageSnapshot};
use crate::raster::{Canvas, RasterHandle, Rgb};
use std::collections::BTreeMap;

const SCROLL_STEP: i64 = 300;
const RASTER_SIZE: u32 = 256;

#[derive(Clone, Copy, Debug, Default)]
pub struct SimOptions {
    /// Render a synthetic raster (solid background + element boxes) so
    /// screenshot-dependent paths are exercisable without a browser.
    pub synthetic_raster: bool,
}

pub struct SimEnvironment {
    pack: SitePack,
    options: SimOptions,
    current_page: String,
    open_modal: Option<String>,
    focused: Option<String>,
    scroll: (i64, i64),
    selection_armed: bool,
    value_overrides: BTreeMap<(String, String), String>,
    history: Vec<String>,
    forward: Vec<String>,
    op_log: Vec<EnvOp>,
}

/// Validates the pack and positions the environment at the initial page.
pub fn sim_load(pack: SitePack) -> Result<SimEnvironment, EnvError> {
    sim_load_with(pack, SimOptions::default())
}

pub fn sim_load_with(pack: SitePack, options: SimOptions) -> Result<SimEnvironment, EnvError> {
    pack.validate()?;
    let initial = pack
        .initial_page()
        .expect("validated pack has an initial page")
        .to_string();
    let mut env = SimEnvironment {
        pack,
        options,
        current_page: initial.clone(),
        open_modal: None,
        focused: None,
        scroll: (0, 0),
        selection_armed: false,
        value_overrides: BTreeMap::new(),
        history: Vec::new(),
        forward: Vec::new(),
        op_log: Vec::new(),
    };
    env.enter_page(initial);
    Ok(env)
}

impl SimEnvironment {
    pub fn pack(&self) -> &SitePack {
        &self.pack
    }

    pub fn current_page(&self) -> &str {
        &self.current_page
    }

    /// Every operation ever dispatched, for fixture assertions.
    pub fn op_log(&self) -> &[EnvOp] {
        &self.op_log
    }

    fn enter_page(&mut self, page_id: String) {
        self.current_page = page_id;
        self.focused = None;
        self.scroll = (0, 0);
        self.selection_armed = false;
        self.open_modal = None;
        // Auto modals (trigger: null) open on entry.
        let auto = self.pack.pages[&self.current_page]
            .modals
            .iter()
            .find(|m| m.trigger.is_none())
            .map(|m| m.id.clone());
        self.open_modal = auto;
    }

    /// Page elements plus open-modal elements, with value overrides applied.
    fn live_elements(&self) -> Vec<ElementRecord> {
        let page = &self.pack.pages[&self.current_page];
        let mut out: Vec<ElementRecord> = page.elements.clone();
        if let Some(modal_id) = &self.open_modal {
            if let Some(modal) = page.modals.iter().find(|m| &m.id == modal_id) {
                out.extend(modal.elements.iter().cloned());
            }
        }
        for e in &mut out {
            let key = (self.current_page.clone(), e.key.clone());
            if let Some(v) = self.value_overrides.get(&key) {
                e.value = Some(v.clone());
            }
        }
        out
    }

    fn bbox_of(&self, key: &str) -> Option<BBox> {
        self.live_elements().iter().find(|e| e.key == key).map(|e| e.bbox)
    }

    fn value_of(&self, key: &str) -> Option<String> {
        self.live_elements()
            .iter()
            .find(|e| e.key == key)
            .and_then(|e| e.value.clone())
    }

    fn set_value(&mut self, key: &str, value: String) {
        self.value_overrides
            .insert((self.current_page.clone(), key.to_string()), value);
    }

    /// Smallest enabled element whose bbox contains the point.
    fn element_at(&self, x: i64, y: i64) -> Option<ElementRecord> {
        self.live_elements()
            .into_iter()
            .filter(|e| e.enabled && e.bbox.contains(x, y))
            .min_by_key(|e| (e.bbox.area(), e.key.clone()))
    }

    fn apply_builtin(&mut self, op: &EnvOp) -> Result<(), EnvError> {
        match op {
            EnvOp::FocusCoordinate { x, y } => {
                self.focused = self.element_at(*x, *y).map(|e| e.key);
                self.selection_armed = false;
            }
            EnvOp::FocusElement { key } => {
                if self.bbox_of(key).is_none() {
                    return Err(EnvError::NoSuchElement { key: key.clone() });
                }
                self.focused = Some(key.clone());
                self.selection_armed = false;
            }
            EnvOp::KeyText { text } => {
                if let Some(key) = self.focused.clone() {
                    let editable = self
                        .live_elements()
                        .iter()
                        .any(|e| e.key == key && e.role == ElementRole::Input);
                    if editable {
                        let prior = if self.selection_armed {
                            String::new()
                        } else {
                            self.value_of(&key).unwrap_or_default()
                        };
                        self.set_value(&key, format!("{prior}{text}"));
                        self.selection_armed = false;
                    }
                }
            }
            EnvOp::KeyCode { code } => match code.as_str() {
                "SelectAll" => self.selection_armed = true,
                "Delete" | "Backspace" => {
                    if let Some(key) = self.focused.clone() {
                        let current = self.value_of(&key).unwrap_or_default();
                        let next = if self.selection_armed {
                            String::new()
                        } else {
                            let mut chars = current.chars().collect::<Vec<_>>();
                            chars.pop();
                            chars.into_iter().collect()
                        };
                        self.set_value(&key, next);
                        self.selection_armed = false;
                    }
                }
                _ => {}
            },
            EnvOp::SetElementValue { key, value } => {
                let element = self
                    .live_elements()
                    .into_iter()
                    .find(|e| e.key == *key)
                    .ok_or_else(|| EnvError::NoSuchElement { key: key.clone() })?;
                match element.role {
                    ElementRole::Select => {
                        // Script-level assignment only lands on an existing
                        // option; anything else is a silent no-op, like a
                        // browser ignoring an invalid <select> value.
                        let valid = element
                            .options
                            .as_ref()
                            .is_some_and(|opts| opts.iter().any(|o| o == value));
                        if valid {
                            self.set_value(key, value.clone());
                        }
                    }
                    _ => self.set_value(key, value.clone()),
                }
            }
            EnvOp::Scroll { direction, .. } => {
                let max = self.pack.pages[&self.current_page].scroll_height - 1000;
                let y = match direction {
                    ScrollDirection::Up => (self.scroll.1 - SCROLL_STEP).max(0),
                    ScrollDirection::Down => (self.scroll.1 + SCROLL_STEP).min(max),
                    ScrollDirection::Top => 0,
                    ScrollDirection::Bottom => max,
                };
                self.scroll.1 = y;
            }
            EnvOp::Navigate { url } => {
                let target = self
                    .pack
                    .pages
                    .iter()
                    .find(|(_, p)| &p.url == url)
                    .map(|(id, _)| id.clone());
                if let Some(page) = target {
                    self.history.push(self.current_page.clone());
                    self.forward.clear();
                    self.enter_page(page);
                }
            }
            EnvOp::GoBack => {
                if let Some(prev) = self.history.pop() {
                    self.forward.push(self.current_page.clone());
                    self.enter_page(prev);
                }
            }
            EnvOp::GoForward => {
                if let Some(next) = self.forward.pop() {
                    self.history.push(self.current_page.clone());
                    self.enter_page(next);
                }
            }
            // Clicks, hover, tabs, wait: transitions only.
            EnvOp::CoordinateClick { .. }
            | EnvOp::ElementClick { .. }
            | EnvOp::Hover { .. }
            | EnvOp::NewTab
            | EnvOp::CloseTab
            | EnvOp::Wait { .. } => {}
        }
        Ok(())
    }

    fn run_effects(&mut self, effects: Vec<Effect>) {
        for effect in effects {
            match effect {
                Effect::Goto { page } => {
                    self.history.push(self.current_page.clone());
                    self.forward.clear();
                    self.enter_page(page);
                }
                Effect::OpenModal { modal } => self.open_modal = Some(modal),
                Effect::CloseModal => self.open_modal = None,
                Effect::SetValue { element, value } => self.set_value(&element, value),
                Effect::Focus { element } => self.focused = Some(element),
            }
        }
    }

    fn fire_transitions(&mut self, op: &EnvOp) {
        let modal_open = self.open_modal.is_some();
        let elements = self.live_elements();
        let resolve = |key: &str| elements.iter().find(|e| e.key == key).map(|e| e.bbox);

        // Modal trigger predicates first, then page transitions; first match
        // wins in declaration order.
        let page = &self.pack.pages[&self.current_page];
        for modal in &page.modals {
            if let Some(trigger) = &modal.trigger {
                if trigger.matches(op, modal_open, &resolve) {
                    let id = modal.id.clone();
                    self.open_modal = Some(id);
                    return;
                }
            }
        }

        let fired: Option<Vec<Effect>> = self
            .pack
            .transitions
            .iter()
            .find(|t| t.from_page == self.current_page && t.on.matches(op, modal_open, &resolve))
            .map(|t| t.effect.clone());
        if let Some(effects) = fired {
            self.run_effects(effects);
        }
    }

    fn render_raster(&self) -> RasterHandle {
        let mut canvas = Canvas::solid(RASTER_SIZE, RASTER_SIZE, (230, 230, 230));
        let scale = |v: i64| v * i64::from(RASTER_SIZE) / 1000;
        let color = |role: ElementRole| -> Rgb {
            match role {
                ElementRole::Button => (30, 90, 200),
                ElementRole::Link => (120, 40, 160),
                ElementRole::Input => (30, 150, 70),
                ElementRole::Select => (200, 120, 20),
                ElementRole::Option => (200, 160, 60),
                ElementRole::Image => (90, 90, 90),
                ElementRole::Container => (160, 160, 160),
                ElementRole::IframeBoundary => (200, 40, 40),
                ElementRole::Other => (60, 60, 60),
            }
        };
        for e in self.live_elements() {
            canvas.outline_rect(
                scale(e.bbox.x),
                scale(e.bbox.y),
                scale(e.bbox.w).max(2),
                scale(e.bbox.h).max(2),
                color(e.role),
            );
        }
        if self.open_modal.is_some() {
            canvas.outline_rect(0, 0, i64::from(RASTER_SIZE), i64::from(RASTER_SIZE), (20, 20, 20));
        }
        canvas.freeze()
    }

    fn assemble_snapshot(&self) -> PageSnapshot {
        let page = &self.pack.pages[&self.current_page];
        let mut text = page.visible_text.clone();
        let mut modal_element = None;
        if let Some(modal_id) = &self.open_modal {
            if let Some(modal) = page.modals.iter().find(|m| &m.id == modal_id) {
                if !modal.text.is_empty() {
                    text.push('\n');
                    text.push_str(&modal.text);
                }
                modal_element = modal.elements.first().map(|e| e.key.clone());
            }
        }
        let mut snapshot = PageSnapshot {
            url: page.url.clone(),
            visible_text: text,
            interactive_elements: self.live_elements(),
            focused_element: self.focused.clone(),
            scroll_position: self.scroll,
            modal_open: self.open_modal.is_some(),
            modal_element,
            screenshot: self.options.synthetic_raster.then(|| self.render_raster()),
            unavailable_channels: Default::default(),
        };
        snapshot.dedup_elements();
        snapshot
    }
}

impl Environment for SimEnvironment {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            raster_screenshots: self.options.synthetic_raster,
            script_level_select: true,
        }
    }

    fn snapshot(&mut self) -> Result<PageSnapshot, EnvError> {
        Ok(self.assemble_snapshot())
    }

    fn apply(&mut self, op: &EnvOp) -> Result<PageSnapshot, EnvError> {
        self.op_log.push(op.clone());
        self.apply_builtin(op)?;
        self.fire_transitions(op);
        Ok(self.assemble_snapshot())
    }
}
