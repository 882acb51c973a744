//! Chat-completion backed experts with cassette replay and scripted fallback.
//!
//! Each role renders a prompt, posts it through a [`Transport`] and expects a
//! reply holding exactly one fenced block tagged `decision` with a JSON
//! object in the role's schema.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::perception::{FilteredLabel, FilteredSemantics, FilteredView, RegionPanorama, Sector, ViewSemantics};

use super::scripted::ScriptedExperts;
use super::*;

pub const API_KEY_ENV: &str = "SPATIAL_VLN_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    /// Total attempts per call before falling back to the scripted handler.
    pub max_attempts: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            model: "gpt-4o".to_string(),
            timeout_secs: 30,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("http: {0}")]
    Http(String),
    #[error("missing credential: set {API_KEY_ENV}")]
    MissingKey,
    #[error("cassette has no reply left for role {0}")]
    Exhausted(String),
    #[error("cassette {path}: {reason}")]
    Cassette { path: PathBuf, reason: String },
}

pub trait Transport: Send + Sync {
    fn complete(&self, role: &str, request: &ChatRequest) -> Result<String, TransportError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
}

impl HttpTransport {
    pub fn from_env(cfg: &RemoteConfig) -> Result<Self, TransportError> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| TransportError::MissingKey)?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        Ok(HttpTransport {
            agent,
            endpoint: cfg.endpoint.clone(),
            api_key,
        })
    }
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

impl Transport for HttpTransport {
    fn complete(&self, _role: &str, request: &ChatRequest) -> Result<String, TransportError> {
        let reply: Completion = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(request)
            .map_err(|e| TransportError::Http(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| TransportError::Http(e.to_string()))?;
        reply
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| TransportError::Http("reply has no choices".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<ChatRequest>,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cassette {
    pub interactions: Vec<Interaction>,
}

/// Replays recorded replies in order, separately per role.
pub struct CassetteTransport {
    queues: Mutex<HashMap<String, VecDeque<String>>>,
}

impl CassetteTransport {
    pub fn new(cassette: Cassette) -> Self {
        let mut queues: HashMap<String, VecDeque<String>> = HashMap::new();
        for i in cassette.interactions {
            queues.entry(i.role).or_default().push_back(i.response);
        }
        CassetteTransport {
            queues: Mutex::new(queues),
        }
    }

    pub fn load(path: &Path) -> Result<Self, TransportError> {
        let err = |reason: String| TransportError::Cassette {
            path: path.to_path_buf(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let c: Cassette = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Ok(Self::new(c))
    }
}

impl Transport for CassetteTransport {
    fn complete(&self, role: &str, _request: &ChatRequest) -> Result<String, TransportError> {
        self.queues
            .lock()
            .expect("cassette lock")
            .get_mut(role)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| TransportError::Exhausted(role.to_string()))
    }
}

/// Wraps a live transport and keeps every exchange for later replay.
pub struct RecordingTransport {
    inner: Box<dyn Transport>,
    log: Mutex<Vec<Interaction>>,
}

impl RecordingTransport {
    pub fn new(inner: Box<dyn Transport>) -> Self {
        RecordingTransport {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn cassette(&self) -> Cassette {
        Cassette {
            interactions: self.log.lock().expect("recording lock").clone(),
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.cassette()).map_err(std::io::Error::other)?)
    }
}

impl Transport for RecordingTransport {
    fn complete(&self, role: &str, request: &ChatRequest) -> Result<String, TransportError> {
        let response = self.inner.complete(role, request)?;
        self.log.lock().expect("recording lock").push(Interaction {
            role: role.to_string(),
            request: Some(request.clone()),
            response: response.clone(),
        });
        Ok(response)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReplyError {
    #[error("expected exactly one decision block, found {0}")]
    BlockCount(usize),
    #[error("unterminated decision block")]
    Unterminated,
    #[error("decision block is not valid JSON: {0}")]
    Json(String),
    #[error("reply does not fit the {role} schema: {reason}")]
    Schema { role: String, reason: String },
}

/// Extracts and parses the single ```decision fenced block of a reply.
pub fn parse_decision(reply: &str) -> Result<Value, ReplyError> {
    const OPEN: &str = "```decision";
    let count = reply.matches(OPEN).count();
    if count != 1 {
        return Err(ReplyError::BlockCount(count));
    }
    let start = reply.find(OPEN).unwrap() + OPEN.len();
    let body = &reply[start..];
    let end = body.find("```").ok_or(ReplyError::Unterminated)?;
    serde_json::from_str(body[..end].trim()).map_err(|e| ReplyError::Json(e.to_string()))
}

const SYSTEM_PROMPT: &str = "You are one expert in an indoor navigation agent. Answer with a short \
explanation followed by exactly one fenced code block tagged `decision` containing a JSON object \
in the schema given for your role.";

fn role_instructions(role: &str) -> &'static str {
    match role {
        "filter" => "Keep only per-view labels that the sector panorama confirms. Schema: {\"views\": [[label, ...] x12]}",
        "decompose" => "Split the instruction into waypoint subtasks (furniture, doors) and region subtasks (rooms). Schema: {\"waypoint\": [{\"verb\": str, \"target\": str}], \"region\": [{\"verb\": str, \"target\": str}]}",
        "history_w" => "Summarize the waypoint-level observation history in one sentence. Schema: {\"summary\": str}",
        "history_r" => "Summarize the region-level observation history in one sentence. Schema: {\"summary\": str}",
        "progress_w" => "Give the index of the next unfinished waypoint subtask. Schema: {\"index\": int}",
        "progress_r" => "Give the index of the next unfinished region subtask. Schema: {\"index\": int}",
        "act_w" => "Choose the candidate waypoint to move to next, or stop. Schema: {\"choice\": int | \"stop\", \"reason\": str}",
        "act_r" => "Name the region the agent should be heading into. Schema: {\"region\": str, \"reason\": str}",
        "explore" => "Pick the sector to explore to resolve the disagreement. Schema: {\"sector\": \"Front\" | \"Left\" | \"Back\" | \"Right\"}",
        _ => "",
    }
}

fn schema_err(role: &str, reason: impl Into<String>) -> ReplyError {
    ReplyError::Schema {
        role: role.to_string(),
        reason: reason.into(),
    }
}

pub struct RemoteExperts {
    transport: Box<dyn Transport>,
    fallback: ScriptedExperts,
    model: String,
    max_attempts: usize,
    events: Mutex<Vec<ExpertEvent>>,
}

impl RemoteExperts {
    pub fn new(transport: Box<dyn Transport>, fallback: ScriptedExperts, cfg: &RemoteConfig) -> Self {
        RemoteExperts {
            transport,
            fallback,
            model: cfg.model.clone(),
            max_attempts: cfg.max_attempts.max(1),
            events: Mutex::new(Vec::new()),
        }
    }

    pub fn request(&self, role: &str, context: &Value) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: format!("{SYSTEM_PROMPT}\nRole: {role}. {}", role_instructions(role)),
                },
                ChatMessage {
                    role: "user".into(),
                    content: serde_json::to_string_pretty(context).unwrap_or_default(),
                },
            ],
            temperature: 0.0,
        }
    }

    /// Runs a role with retries; `None` means the caller must fall back.
    fn call<T>(&self, role: &str, context: Value, parse: impl Fn(Value) -> Result<T, ReplyError>) -> Option<T> {
        let request = self.request(role, &context);
        let mut last = String::new();
        for _ in 0..self.max_attempts {
            let outcome = self
                .transport
                .complete(role, &request)
                .map_err(|e| e.to_string())
                .and_then(|reply| parse_decision(&reply).and_then(&parse).map_err(|e| e.to_string()));
            match outcome {
                Ok(v) => return Some(v),
                Err(e) => {
                    log::warn!("remote expert {role}: {e}");
                    last = e;
                }
            }
        }
        self.events.lock().expect("event lock").push(ExpertEvent {
            role: role.to_string(),
            attempts: self.max_attempts,
            error: last,
            fallback: true,
        });
        None
    }
}

fn parse_tasks(role: &str, v: &Value, key: &str, track: Track) -> Result<Vec<SubTask>, ReplyError> {
    let Some(items) = v.get(key) else {
        return Ok(Vec::new());
    };
    let items = items.as_array().ok_or_else(|| schema_err(role, format!("{key} must be a list")))?;
    items
        .iter()
        .map(|t| {
            let verb = t.get("verb").and_then(Value::as_str).unwrap_or("go");
            let target = t.get("target").and_then(Value::as_str).unwrap_or("");
            Ok(SubTask::new(verb.to_lowercase(), target.to_lowercase(), track))
        })
        .collect()
}

fn parse_index(role: &str, v: Value) -> Result<usize, ReplyError> {
    v.get("index")
        .and_then(Value::as_u64)
        .map(|i| i as usize)
        .ok_or_else(|| schema_err(role, "index must be a non-negative integer"))
}

fn parse_summary(role: &str, v: Value) -> Result<String, ReplyError> {
    v.get("summary")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| schema_err(role, "summary must be a string"))
}

impl ExpertSuite for RemoteExperts {
    fn backend(&self) -> &'static str {
        "remote"
    }

    fn filter(&self, views: &[ViewSemantics], panoramas: &[RegionPanorama]) -> FilteredSemantics {
        let ctx = json!({ "views": views, "panoramas": panoramas });
        let parsed = self.call("filter", ctx, |v| {
            let lists = v
                .get("views")
                .and_then(Value::as_array)
                .filter(|a| a.len() == views.len())
                .ok_or_else(|| schema_err("filter", "views must list every view"))?;
            let mut out = Vec::new();
            for (view, kept) in views.iter().zip(lists) {
                let kept = kept.as_array().ok_or_else(|| schema_err("filter", "each view must be a list"))?;
                let sector = Sector::of_view(view.view_index);
                let pano = panoramas.iter().find(|p| p.sector == sector);
                // only labels that exist and have a panorama witness survive
                let labels = view
                    .labels
                    .iter()
                    .filter(|l| kept.iter().any(|k| k.as_str().is_some_and(|k| matches_label(k, &l.label))))
                    .filter_map(|l| {
                        let w = crate::perception::find_label(&pano?.labels, &l.label)?;
                        Some(FilteredLabel {
                            label: l.label.clone(),
                            confidence: l.confidence.max(w.confidence),
                            witness: Some(sector),
                        })
                    })
                    .collect();
                out.push(FilteredView {
                    view_index: view.view_index,
                    labels,
                });
            }
            Ok(FilteredSemantics { views: out })
        });
        parsed.unwrap_or_else(|| self.fallback.filter(views, panoramas))
    }

    fn decompose(&self, instruction: &str) -> Result<Decomposition, ExpertError> {
        let lexicon = &self.fallback.lexicon;
        let parsed = self.call("decompose", json!({ "instruction": instruction }), |v| {
            let waypoint_tasks = parse_tasks("decompose", &v, "waypoint", Track::Waypoint)?;
            let region_tasks = parse_tasks("decompose", &v, "region", Track::Region)?;
            if let Some(t) = region_tasks.iter().find(|t| !lexicon.is_region(&t.target)) {
                return Err(schema_err("decompose", format!("'{}' is not a known region", t.target)));
            }
            if waypoint_tasks.is_empty() {
                return Err(schema_err("decompose", "no waypoint subtasks"));
            }
            Ok(Decomposition {
                waypoint_tasks,
                region_tasks,
            })
        });
        match parsed {
            Some(d) => Ok(d),
            None => self.fallback.decompose(instruction),
        }
    }

    fn update_history_w(
        &self,
        h: &HistoryState,
        step: usize,
        heading: f64,
        filtered: &FilteredSemantics,
        relations: &[String],
    ) -> HistoryState {
        let scripted = self.fallback.update_history_w(h, step, heading, filtered, relations);
        let ctx = json!({ "history": h, "step": step, "filtered": filtered, "relations": relations });
        match (self.call("history_w", ctx, |v| parse_summary("history_w", v)), scripted.entries.back()) {
            (Some(summary), Some(e)) if e.step == step => h.push(step, summary, e.dominant.clone(), heading),
            _ => scripted,
        }
    }

    fn update_history_r(
        &self,
        h: &HistoryState,
        step: usize,
        heading: f64,
        panoramas: &[RegionPanorama],
        relations: &[String],
    ) -> HistoryState {
        let scripted = self.fallback.update_history_r(h, step, heading, panoramas, relations);
        let ctx = json!({ "history": h, "step": step, "panoramas": panoramas, "relations": relations });
        match (self.call("history_r", ctx, |v| parse_summary("history_r", v)), scripted.entries.back()) {
            (Some(summary), Some(e)) if e.step == step => h.push(step, summary, e.dominant.clone(), heading),
            _ => scripted,
        }
    }

    fn update_progress_w(
        &self,
        p: &Progress,
        decomposition: &Decomposition,
        h: &HistoryState,
        filtered: &FilteredSemantics,
    ) -> Progress {
        if p.is_complete() {
            return p.clone();
        }
        let ctx = json!({ "tasks": decomposition.waypoint_tasks, "progress": p, "history": h, "filtered": filtered });
        match self.call("progress_w", ctx, |v| parse_index("progress_w", v)) {
            Some(i) => p.advanced_to(i),
            None => self.fallback.update_progress_w(p, decomposition, h, filtered),
        }
    }

    fn update_progress_r(
        &self,
        p: &Progress,
        decomposition: &Decomposition,
        h: &HistoryState,
        panoramas: &[RegionPanorama],
    ) -> Progress {
        if p.is_complete() {
            return self.fallback.update_progress_r(p, decomposition, h, panoramas);
        }
        let ctx = json!({ "tasks": decomposition.region_tasks, "progress": p, "history": h, "panoramas": panoramas });
        match self.call("progress_r", ctx, |v| parse_index("progress_r", v)) {
            Some(i) => {
                let mut next = p.advanced_to(i);
                next.last_dominant = self.fallback.dominant_region(panoramas).or(next.last_dominant);
                next
            }
            None => self.fallback.update_progress_r(p, decomposition, h, panoramas),
        }
    }

    fn act_waypoint(&self, ctx: &WaypointContext<'_>) -> Result<WaypointDecision, ExpertError> {
        if ctx.candidates.is_empty() && !ctx.progress.is_complete() {
            return Err(ExpertError::NoCandidates);
        }
        let payload = json!({
            "instruction": ctx.instruction,
            "tasks": ctx.decomposition.waypoint_tasks,
            "progress": ctx.progress,
            "history": ctx.history,
            "filtered": ctx.filtered,
            "relations": ctx.relations,
            "doors": ctx.doors,
            "candidates": ctx.candidates,
        });
        let parsed = self.call("act_w", payload, |v| {
            let reason = v.get("reason").and_then(Value::as_str).unwrap_or("").to_string();
            match v.get("choice") {
                Some(Value::String(s)) if s.eq_ignore_ascii_case("stop") => Ok(WaypointDecision::stop(reason)),
                Some(c) => {
                    let id = c.as_u64().ok_or_else(|| schema_err("act_w", "choice must be an id or \"stop\""))? as usize;
                    if ctx.candidates.iter().any(|w| w.id == id) {
                        Ok(WaypointDecision::goto(id, reason))
                    } else {
                        Err(schema_err("act_w", format!("no candidate with id {id}")))
                    }
                }
                None => Err(schema_err("act_w", "missing choice")),
            }
        });
        match parsed {
            Some(d) => Ok(d),
            None => self.fallback.act_waypoint(ctx),
        }
    }

    fn act_region(&self, ctx: &RegionContext<'_>) -> RegionDecision {
        let payload = json!({
            "instruction": ctx.instruction,
            "tasks": ctx.decomposition.region_tasks,
            "progress": ctx.progress,
            "history": ctx.history,
            "panoramas": ctx.panoramas,
            "relations": ctx.relations,
            "doors": ctx.doors,
        });
        let parsed = self.call("act_r", payload, |v| {
            let region = v
                .get("region")
                .and_then(Value::as_str)
                .ok_or_else(|| schema_err("act_r", "region must be a string"))?;
            Ok(RegionDecision {
                region: region.to_lowercase(),
                rationale: v.get("reason").and_then(Value::as_str).unwrap_or("").to_string(),
            })
        });
        parsed.unwrap_or_else(|| self.fallback.act_region(ctx))
    }

    fn explore(&self, ctx: &ExploreContext<'_>) -> ExplorationTarget {
        let payload = json!({
            "instruction": ctx.instruction,
            "panoramas": ctx.panoramas,
            "relations": ctx.relations,
            "waypoint_decision": ctx.a_w,
            "region_decision": ctx.a_r,
            "waypoint_sector": ctx.waypoint_sector,
        });
        let parsed = self.call("explore", payload, |v| {
            v.get("sector")
                .and_then(Value::as_str)
                .and_then(Sector::parse)
                .map(|sector| ExplorationTarget { sector })
                .ok_or_else(|| schema_err("explore", "sector must be Front, Left, Back or Right"))
        });
        parsed.unwrap_or_else(|| self.fallback.explore(ctx))
    }

    fn drain_events(&self) -> Vec<ExpertEvent> {
        std::mem::take(&mut *self.events.lock().expect("event lock"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cassette(items: &[(&str, &str)]) -> Box<dyn Transport> {
        Box::new(CassetteTransport::new(Cassette {
            interactions: items
                .iter()
                .map(|(r, s)| Interaction {
                    role: r.to_string(),
                    request: None,
                    response: s.to_string(),
                })
                .collect(),
        }))
    }

    #[test]
    fn fenced_block_parsing() {
        let ok = "Sure.\n```decision\n{\"choice\": 2, \"reason\": \"sofa ahead\"}\n```\n";
        assert_eq!(parse_decision(ok).unwrap()["choice"], 2);
        assert_eq!(parse_decision("no block"), Err(ReplyError::BlockCount(0)));
        let two = format!("{ok}{ok}");
        assert_eq!(parse_decision(&two), Err(ReplyError::BlockCount(2)));
        assert_eq!(parse_decision("```decision\n{}"), Err(ReplyError::Unterminated));
        assert!(matches!(parse_decision("```decision\nnot json\n```"), Err(ReplyError::Json(_))));
    }

    #[test]
    fn well_formed_decompose_reply() {
        let reply = "```decision\n{\"waypoint\":[{\"verb\":\"go through\",\"target\":\"door\"}],\"region\":[{\"verb\":\"enter\",\"target\":\"kitchen\"}]}\n```";
        let r = RemoteExperts::new(cassette(&[("decompose", reply)]), ScriptedExperts::default(), &RemoteConfig::default());
        let d = r.decompose("whatever the words").unwrap();
        assert_eq!(d.waypoint_tasks[0].target, "door");
        assert_eq!(d.region_tasks[0].target, "kitchen");
        assert!(r.drain_events().is_empty());
    }

    #[test]
    fn malformed_replies_fall_back() {
        let r = RemoteExperts::new(
            cassette(&[("decompose", "nope"), ("decompose", "```decision\n{oops\n```"), ("decompose", "still no")]),
            ScriptedExperts::default(),
            &RemoteConfig::default(),
        );
        let d = r.decompose("stop by the sofa").unwrap();
        assert_eq!(d.waypoint_tasks[0].target, "sofa");
        let ev = r.drain_events();
        assert_eq!(ev.len(), 1);
        assert!(ev[0].fallback);
        assert_eq!(ev[0].attempts, 3);
    }

    #[test]
    fn recording_round_trips_through_cassette() {
        let inner = cassette(&[("explore", "```decision\n{\"sector\":\"left\"}\n```")]);
        let rec = RecordingTransport::new(inner);
        let req = ChatRequest {
            model: "m".into(),
            messages: vec![],
            temperature: 0.0,
        };
        let first = rec.complete("explore", &req).unwrap();
        let replay = CassetteTransport::new(rec.cassette());
        assert_eq!(replay.complete("explore", &req).unwrap(), first);
        assert!(matches!(replay.complete("explore", &req), Err(TransportError::Exhausted(_))));
    }

    #[test]
    fn http_requires_key() {
        std::env::remove_var(API_KEY_ENV);
        assert!(matches!(
            HttpTransport::from_env(&RemoteConfig::default()),
            Err(TransportError::MissingKey)
        ));
    }
}
