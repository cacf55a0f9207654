//! Real-browser adapter speaking the Chrome DevTools wire protocol over a
//! remote-debugging endpoint. Snapshot assembly runs one injected script
//! that flattens same-origin iframes into a single element list, so the
//! agent sees the viewport as one canvas.

use super::{Capabilities, EnvError, EnvOp, Environment, ScrollDirection};
use crate::domain::{BBox, ElementRecord, ElementRole, PageSnapshot};
use crate::raster::RasterHandle;
use serde_json::{json, Value};
use std::net::TcpStream;
use tungstenite::stream::MaybeTlsStream;
use tungstenite::WebSocket;

#[derive(Clone, Debug)]
pub struct BrowserConfig {
    /// Remote-debugging HTTP endpoint, e.g. `http://127.0.0.1:9222`.
    pub endpoint: String,
    pub viewport: (u32, u32),
    /// Fixed post-action settle delay in milliseconds.
    pub settle_delay_ms: u64,
    pub nav_timeout_ms: u64,
}

impl Default for BrowserConfig {
    fn default() -> Self {
        BrowserConfig {
            endpoint: "http://127.0.0.1:9222".into(),
            viewport: (1280, 800),
            settle_delay_ms: 500,
            nav_timeout_ms: 15_000,
        }
    }
}

/// Normalized `[0,1000]` coordinates to device pixels for the given viewport.
pub fn norm_to_device(coord: (i64, i64), viewport: (u32, u32)) -> (f64, f64) {
    (
        coord.0 as f64 * f64::from(viewport.0) / 1000.0,
        coord.1 as f64 * f64::from(viewport.1) / 1000.0,
    )
}

/// Device pixels back to the normalized space (used for scroll reporting).
pub fn device_to_norm(px: (f64, f64), viewport: (u32, u32)) -> (i64, i64) {
    (
        (px.0 * 1000.0 / f64::from(viewport.0)).round() as i64,
        (px.1 * 1000.0 / f64::from(viewport.1)).round() as i64,
    )
}

/// Injected page function returning the six snapshot channels as JSON.
/// Walks same-origin iframes recursively, offsetting child coordinates by
/// the frame's own box and recording the frame key path. Elements are
/// stamped with a stable `data-wa-key` on first sight.
const SNAPSHOT_JS: &str = r#"
(() => {
  const SELECTOR = "a,button,input,select,textarea,[role=button],[role=link],[onclick],iframe,img[alt]";
  let counter = window.__waKeyCounter || 0;
  const roleOf = (el) => {
    const tag = el.tagName.toLowerCase();
    if (tag === "a") return "link";
    if (tag === "button") return "button";
    if (tag === "select") return "select";
    if (tag === "input" || tag === "textarea") return "input";
    if (tag === "iframe") return "iframe_boundary";
    if (tag === "img") return "image";
    const role = (el.getAttribute("role") || "").toLowerCase();
    if (role === "button") return "button";
    if (role === "link") return "link";
    return "other";
  };
  const labelOf = (el) =>
    (el.getAttribute("aria-label") || el.getAttribute("placeholder") ||
     el.getAttribute("alt") || el.innerText || el.value || "").trim().slice(0, 120);
  const out = { url: location.href, text: "", elements: [], focused: null,
                scroll: [window.scrollX, window.scrollY], modal: null };
  const vw = window.innerWidth, vh = window.innerHeight;
  const walk = (doc, offX, offY, framePath) => {
    for (const el of doc.querySelectorAll(SELECTOR)) {
      const r = el.getBoundingClientRect();
      if (r.width <= 0 || r.height <= 0) continue;
      const x = r.left + offX, y = r.top + offY;
      if (x + r.width < 0 || y + r.height < 0 || x > vw || y > vh) continue;
      if (!el.dataset.waKey) { counter += 1; el.dataset.waKey = "e" + counter; }
      const rec = {
        key: el.dataset.waKey,
        role: roleOf(el),
        label: labelOf(el),
        bbox: [Math.max(0, Math.round(x * 1000 / vw)),
               Math.max(0, Math.round(y * 1000 / vh)),
               Math.max(1, Math.round(r.width * 1000 / vw)),
               Math.max(1, Math.round(r.height * 1000 / vh))],
        value: ("value" in el) ? String(el.value) : null,
        options: el.tagName.toLowerCase() === "select"
          ? Array.from(el.options).map(o => o.label || o.value) : null,
        frame_path: framePath,
        enabled: !el.disabled,
      };
      out.elements.push(rec);
      if (doc.activeElement === el) out.focused = el.dataset.waKey;
      if (el.tagName.toLowerCase() === "iframe") {
        try {
          const inner = el.contentDocument;
          if (inner) walk(inner, x, y, framePath.concat([el.dataset.waKey]));
        } catch (e) { /* cross-origin frame stays a boundary */ }
      }
    }
    const dialog = doc.querySelector("dialog[open],[role=dialog],[aria-modal=true]");
    if (dialog && !out.modal) {
      if (!dialog.dataset.waKey) { counter += 1; dialog.dataset.waKey = "e" + counter; }
      out.modal = dialog.dataset.waKey;
    }
  };
  walk(document, 0, 0, []);
  out.text = (document.body ? document.body.innerText : "").slice(0, 20000);
  window.__waKeyCounter = counter;
  return JSON.stringify(out);
})()
"#;

pub struct BrowserEnvironment {
    ws: WebSocket<MaybeTlsStream<TcpStream>>,
    config: BrowserConfig,
    next_id: u64,
}

/// Discovers the first page target on the endpoint and attaches to it.
pub fn browser_connect(config: BrowserConfig) -> Result<BrowserEnvironment, EnvError> {
    let list_url = format!("{}/json/list", config.endpoint.trim_end_matches('/'));
    let mut resp = ureq::get(&list_url)
        .call()
        .map_err(|e| EnvError::ConnectFailed { detail: e.to_string() })?;
    let targets: Value = resp
        .body_mut()
        .read_json()
        .map_err(|e| EnvError::ConnectFailed { detail: e.to_string() })?;
    let ws_url = targets
        .as_array()
        .and_then(|arr| {
            arr.iter()
                .find(|t| t["type"] == "page")
                .and_then(|t| t["webSocketDebuggerUrl"].as_str())
        })
        .ok_or_else(|| EnvError::ConnectFailed {
            detail: "no page target with a webSocketDebuggerUrl".into(),
        })?
        .to_string();

    let (ws, _) = tungstenite::connect(&ws_url).map_err(|e| EnvError::ConnectFailed {
        detail: e.to_string(),
    })?;
    let mut env = BrowserEnvironment {
        ws,
        config,
        next_id: 0,
    };
    env.call("Page.enable", json!({}))?;
    env.call("Runtime.enable", json!({}))?;
    Ok(env)
}

impl BrowserEnvironment {
    fn call(&mut self, method: &str, params: Value) -> Result<Value, EnvError> {
        self.next_id += 1;
        let id = self.next_id;
        let msg = json!({"id": id, "method": method, "params": params});
        self.ws
            .send(tungstenite::Message::Text(msg.to_string().into()))
            .map_err(|e| EnvError::ProtocolError { detail: e.to_string() })?;
        loop {
            let reply = self
                .ws
                .read()
                .map_err(|e| EnvError::ProtocolError { detail: e.to_string() })?;
            let text = match reply {
                tungstenite::Message::Text(t) => t.to_string(),
                _ => continue,
            };
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| EnvError::ProtocolError { detail: e.to_string() })?;
            if v["id"] == json!(id) {
                if let Some(err) = v.get("error") {
                    return Err(EnvError::ProtocolError { detail: err.to_string() });
                }
                return Ok(v["result"].clone());
            }
            // Everything else is an event; this client does not consume them.
        }
    }

    fn evaluate(&mut self, expression: &str) -> Result<Value, EnvError> {
        let result = self.call(
            "Runtime.evaluate",
            json!({"expression": expression, "returnByValue": true}),
        )?;
        Ok(result["result"]["value"].clone())
    }

    /// Drains events until the named one arrives or the deadline passes.
    /// Only safe with no command in flight.
    fn wait_for_event(&mut self, method: &str, timeout_ms: u64) {
        let deadline = std::time::Instant::now() + std::time::Duration::from_millis(timeout_ms);
        self.set_read_timeout(Some(std::time::Duration::from_millis(200)));
        while std::time::Instant::now() < deadline {
            match self.ws.read() {
                Ok(tungstenite::Message::Text(text)) => {
                    if let Ok(v) = serde_json::from_str::<Value>(&text) {
                        if v["method"] == json!(method) {
                            break;
                        }
                    }
                }
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(
                        e.kind(),
                        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                    ) => {}
                Err(_) => break,
            }
        }
        self.set_read_timeout(None);
    }

    fn set_read_timeout(&mut self, timeout: Option<std::time::Duration>) {
        if let MaybeTlsStream::Plain(stream) = self.ws.get_mut() {
            let _ = stream.set_read_timeout(timeout);
        }
    }

    fn settle(&self) {
        std::thread::sleep(std::time::Duration::from_millis(self.config.settle_delay_ms));
    }

    fn dispatch_click(&mut self, x: i64, y: i64) -> Result<(), EnvError> {
        let (dx, dy) = norm_to_device((x, y), self.config.viewport);
        for (kind, count) in [("mousePressed", 1), ("mouseReleased", 1)] {
            self.call(
                "Input.dispatchMouseEvent",
                json!({"type": kind, "x": dx, "y": dy, "button": "left", "clickCount": count}),
            )?;
        }
        Ok(())
    }

    fn js_on_key<T: AsRef<str>>(&mut self, key: T, body: &str) -> Result<Value, EnvError> {
        let expr = format!(
            r#"(() => {{
  const find = (doc) => {{
    let el = doc.querySelector('[data-wa-key="{key}"]');
    if (el) return el;
    for (const f of doc.querySelectorAll('iframe')) {{
      try {{ if (f.contentDocument) {{ const r = find(f.contentDocument); if (r) return r; }} }} catch (e) {{}}
    }}
    return null;
  }};
  const el = find(document);
  if (!el) return "__missing__";
  {body}
  return "ok";
}})()"#,
            key = key.as_ref(),
            body = body
        );
        self.evaluate(&expr)
    }

    fn require_found(&self, key: &str, value: &Value) -> Result<(), EnvError> {
        if value == &json!("__missing__") {
            return Err(EnvError::NoSuchElement { key: key.to_string() });
        }
        Ok(())
    }
}

/// Parses the snapshot-script payload into a `PageSnapshot`. Split out for
/// fixture tests against recorded payloads.
pub fn parse_snapshot_payload(
    payload: &str,
    viewport: (u32, u32),
    screenshot: Option<RasterHandle>,
) -> Result<PageSnapshot, EnvError> {
    let v: Value = serde_json::from_str(payload).map_err(|e| EnvError::ProtocolError {
        detail: format!("snapshot payload: {e}"),
    })?;
    let mut elements = Vec::new();
    for el in v["elements"].as_array().cloned().unwrap_or_default() {
        let bbox = el["bbox"].as_array().cloned().unwrap_or_default();
        if bbox.len() != 4 {
            continue;
        }
        let n = |i: usize| bbox[i].as_i64().unwrap_or(0).clamp(0, 1000);
        let role = match el["role"].as_str().unwrap_or("other") {
            "button" => ElementRole::Button,
            "link" => ElementRole::Link,
            "input" => ElementRole::Input,
            "select" => ElementRole::Select,
            "option" => ElementRole::Option,
            "image" => ElementRole::Image,
            "container" => ElementRole::Container,
            "iframe_boundary" => ElementRole::IframeBoundary,
            _ => ElementRole::Other,
        };
        let mut rec = ElementRecord::new(
            el["key"].as_str().unwrap_or_default(),
            role,
            el["label"].as_str().unwrap_or_default(),
            BBox::new(
                n(0),
                n(1),
                n(2).min(1000 - n(0)).max(1),
                n(3).min(1000 - n(1)).max(1),
            ),
        );
        rec.value = el["value"].as_str().map(str::to_string);
        let options: Vec<String> = el["options"]
            .as_array()
            .map(|a| a.iter().filter_map(|o| o.as_str().map(str::to_string)).collect())
            .unwrap_or_default();
        if role == ElementRole::Select {
            rec.options = Some(if options.is_empty() {
                vec![String::new()]
            } else {
                options
            });
        }
        rec.frame_path = el["frame_path"]
            .as_array()
            .map(|a| a.iter().filter_map(|f| f.as_str().map(str::to_string)).collect())
            .unwrap_or_default();
        rec.enabled = el["enabled"].as_bool().unwrap_or(true);
        elements.push(rec);
    }
    let scroll_px = (
        v["scroll"][0].as_f64().unwrap_or(0.0),
        v["scroll"][1].as_f64().unwrap_or(0.0),
    );
    let modal_element = v["modal"].as_str().map(str::to_string);
    let mut snapshot = PageSnapshot {
        url: v["url"].as_str().unwrap_or_default().to_string(),
        visible_text: v["text"].as_str().unwrap_or_default().to_string(),
        interactive_elements: elements,
        focused_element: v["focused"].as_str().map(str::to_string),
        scroll_position: device_to_norm(scroll_px, viewport),
        modal_open: modal_element.is_some(),
        modal_element,
        screenshot,
        unavailable_channels: Default::default(),
    };
    snapshot.dedup_elements();
    Ok(snapshot)
}

/// Markers that the hosting infrastructure refused service before any
/// action could run.
pub fn looks_blocked(snapshot: &PageSnapshot) -> bool {
    const MARKERS: [&str; 4] = [
        "Checking your browser",
        "Just a moment",
        "Verify you are human",
        "Access denied",
    ];
    MARKERS.iter().any(|m| snapshot.visible_text.contains(m))
}

impl Environment for BrowserEnvironment {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            raster_screenshots: true,
            script_level_select: true,
        }
    }

    fn snapshot(&mut self) -> Result<PageSnapshot, EnvError> {
        let payload = self.evaluate(SNAPSHOT_JS)?;
        let payload = payload.as_str().ok_or_else(|| EnvError::ProtocolError {
            detail: "snapshot script returned no string".into(),
        })?;
        let screenshot = self
            .call("Page.captureScreenshot", json!({"format": "png"}))
            .ok()
            .and_then(|r| r["data"].as_str().map(str::to_string))
            .and_then(|b64| decode_base64(&b64))
            .and_then(|png| RasterHandle::from_png(&png).ok());
        parse_snapshot_payload(payload, self.config.viewport, screenshot)
    }

    fn apply(&mut self, op: &EnvOp) -> Result<PageSnapshot, EnvError> {
        match op {
            EnvOp::CoordinateClick { x, y } => self.dispatch_click(*x, *y)?,
            EnvOp::Hover { x, y } => {
                let (dx, dy) = norm_to_device((*x, *y), self.config.viewport);
                self.call(
                    "Input.dispatchMouseEvent",
                    json!({"type": "mouseMoved", "x": dx, "y": dy}),
                )?;
            }
            EnvOp::ElementClick { key } => {
                let r = self.js_on_key(key, "el.click();")?;
                self.require_found(key, &r)?;
            }
            EnvOp::FocusCoordinate { x, y } => {
                let (dx, dy) = norm_to_device((*x, *y), self.config.viewport);
                self.evaluate(&format!(
                    "(() => {{ const el = document.elementFromPoint({dx},{dy}); if (el) el.focus(); }})()"
                ))?;
            }
            EnvOp::FocusElement { key } => {
                let r = self.js_on_key(key, "el.focus();")?;
                self.require_found(key, &r)?;
            }
            EnvOp::KeyText { text } => {
                self.call("Input.insertText", json!({"text": text}))?;
            }
            EnvOp::KeyCode { code } => match code.as_str() {
                "SelectAll" => {
                    self.evaluate(
                        "(() => { const el = document.activeElement; if (el && el.select) el.select(); })()",
                    )?;
                }
                _ => {
                    for kind in ["rawKeyDown", "keyUp"] {
                        self.call(
                            "Input.dispatchKeyEvent",
                            json!({"type": kind, "code": code, "key": code}),
                        )?;
                    }
                }
            },
            EnvOp::SetElementValue { key, value } => {
                let body = format!(
                    r#"if (el.tagName.toLowerCase() === "select") {{
  const opt = Array.from(el.options).find(o => (o.label || o.value) === {v} || o.value === {v});
  if (opt) el.value = opt.value;
}} else {{
  el.value = {v};
}}
el.dispatchEvent(new Event("input", {{bubbles: true}}));
el.dispatchEvent(new Event("change", {{bubbles: true}}));"#,
                    v = serde_json::to_string(value).expect("string encodes")
                );
                let r = self.js_on_key(key, &body)?;
                self.require_found(key, &r)?;
            }
            EnvOp::Scroll { direction, at } => {
                let amount = match direction {
                    ScrollDirection::Up => "-window.innerHeight * 0.8",
                    ScrollDirection::Down => "window.innerHeight * 0.8",
                    ScrollDirection::Top => "top",
                    ScrollDirection::Bottom => "bottom",
                };
                let expr = match (direction, at) {
                    (ScrollDirection::Top, _) => "window.scrollTo(0, 0)".to_string(),
                    (ScrollDirection::Bottom, _) => {
                        "window.scrollTo(0, document.body.scrollHeight)".to_string()
                    }
                    (_, None) => format!("window.scrollBy(0, {amount})"),
                    (_, Some((x, y))) => {
                        let (dx, dy) = norm_to_device((*x, *y), self.config.viewport);
                        format!(
                            "(() => {{ const el = document.elementFromPoint({dx},{dy}); (el || window).scrollBy(0, {amount}); }})()"
                        )
                    }
                };
                self.evaluate(&expr)?;
            }
            EnvOp::Navigate { url } => {
                self.call("Page.navigate", json!({"url": url}))?;
                let timeout = self.config.nav_timeout_ms;
                self.wait_for_event("Page.loadEventFired", timeout);
            }
            EnvOp::NewTab => {
                self.call("Target.createTarget", json!({"url": "about:blank"}))?;
            }
            EnvOp::CloseTab => {
                self.evaluate("window.close()")?;
            }
            EnvOp::GoBack => {
                self.evaluate("history.back()")?;
            }
            EnvOp::GoForward => {
                self.evaluate("history.forward()")?;
            }
            EnvOp::Wait { seconds } => {
                std::thread::sleep(std::time::Duration::from_secs_f64(seconds.max(0.0)));
            }
        }
        self.settle();
        self.snapshot()
    }
}

fn decode_base64(s: &str) -> Option<Vec<u8>> {
    let mut out = Vec::with_capacity(s.len() / 4 * 3);
    let mut buf = 0u32;
    let mut bits = 0u8;
    for c in s.bytes() {
        let v = match c {
            b'A'..=b'Z' => c - b'A',
            b'a'..=b'z' => c - b'a' + 26,
            b'0'..=b'9' => c - b'0' + 52,
            b'+' => 62,
            b'/' => 63,
            b'=' | b'\n' | b'\r' => continue,
            _ => return None,
        };
        buf = (buf << 6) | u32::from(v);
        bits += 6;
        if bits >= 8 {
            bits -= 8;
            out.push((buf >> bits) as u8);
        }
    }
    Some(out)
}
