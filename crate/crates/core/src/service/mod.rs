//! Session host for the browser frontend.
//!
//! The host is sans-IO: feed it decoded frames and the current server time,
//! send back whatever it returns. A transport (websocket, test harness) owns
//! the socket. Frames are JSON [`WireMessage`]s and flow as
//!
//! ```text
//! server hello -> client hello
//! (server ping -> client pong) x k          clock calibration
//! server config
//! repeat per trial:
//!   server trial_start -> client tap -> server stimulus
//!   client response -> server trial_result [-> block_end]
//! server session_summary
//! ```
//!
//! Reaction times come only from client timestamps (`response.client_us -
//! response.displayed_us`); the calibrated offset just maps server-side
//! events onto the client timeline in the log.

pub mod scripted;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::device::ContactEvent;
use crate::protocol::{EnginePhase, ProtocolError, SessionConfig, SessionEngine, SessionSummary};
use crate::signal::{render_transient, Material, MaterialTable, SynthesisConfig};
use crate::storage::EventLog;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ServiceError {
    #[error("clock calibration needs {required} exchanges, completed {completed}")]
    CalibrationFailed { completed: usize, required: usize },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// One frame on the message channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    #[serde(rename = "type")]
    pub kind: String,
    pub session_id: String,
    pub seq: u64,
    /// Client `seq` this frame answers, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ack: Option<u64>,
    #[serde(default)]
    pub body: Value,
}

impl WireMessage {
    pub fn new(kind: &str, session_id: &str, seq: u64, body: Value) -> Self {
        Self {
            kind: kind.to_string(),
            session_id: session_id.to_string(),
            seq,
            ack: None,
            body,
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("wire message serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Deserialize)]
struct PongBody {
    ping_seq: u64,
    client_us: u64,
}

#[derive(Debug, Deserialize)]
struct TapBody {
    trial: usize,
    velocity: f64,
    client_us: u64,
}

#[derive(Debug, Deserialize)]
struct ResponseBody {
    trial: usize,
    key: Material,
    client_us: u64,
    displayed_us: u64,
}

/// One ping/pong exchange, server times bracketing the client stamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PingSample {
    pub server_send_us: u64,
    pub client_us: u64,
    pub server_recv_us: u64,
}

impl PingSample {
    /// Server minus client clock under the symmetric-delay assumption, µs.
    pub fn offset_us(&self) -> f64 {
        (self.server_send_us as f64 + self.server_recv_us as f64) / 2.0 - self.client_us as f64
    }
}

/// Median offset over `required` completed exchanges. Asymmetric link
/// delays bias the estimate by half their difference.
pub fn estimate_offset(samples: &[PingSample], required: usize) -> Result<f64, ServiceError> {
    let required = required.max(3);
    if samples.len() < required {
        return Err(ServiceError::CalibrationFailed {
            completed: samples.len(),
            required,
        });
    }
    let mut offsets: Vec<f64> = samples.iter().map(PingSample::offset_us).collect();
    offsets.sort_by(f64::total_cmp);
    let mid = offsets.len() / 2;
    Ok(if offsets.len() % 2 == 1 {
        offsets[mid]
    } else {
        (offsets[mid - 1] + offsets[mid]) / 2.0
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostConfig {
    pub session: SessionConfig,
    pub materials: MaterialTable,
    pub synthesis: SynthesisConfig,
    /// Calibration exchanges, at least 3.
    pub ping_count: usize,
    /// Range the client samples synthetic tap speeds from, m/s.
    pub velocity_range: (f64, f64),
    pub masking: bool,
}

impl Default for HostConfig {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            materials: MaterialTable::placeholder(),
            synthesis: SynthesisConfig::default(),
            ping_count: 5,
            velocity_range: (0.3, 0.9),
            masking: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostPhase {
    AwaitHello,
    Calibrating,
    Running,
    Finished,
    Closed,
}

/// Frames to send and whether to close the connection afterwards.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Reply {
    pub messages: Vec<WireMessage>,
    pub close: bool,
}

/// Per-connection session state.
#[derive(Debug, Clone)]
pub struct SessionHost {
    id: String,
    config: HostConfig,
    phase: HostPhase,
    engine: Option<SessionEngine>,
    seq: u64,
    last_client_seq: Option<u64>,
    pending_ping: Option<(u64, u64)>,
    samples: Vec<PingSample>,
    offset_us: f64,
}

impl SessionHost {
    pub fn new(id: impl Into<String>, config: HostConfig) -> Result<Self, ServiceError> {
        config.session.validate()?;
        if config.ping_count < 3 {
            return Err(ServiceError::CalibrationFailed {
                completed: 0,
                required: 3,
            });
        }
        Ok(Self {
            id: id.into(),
            config,
            phase: HostPhase::AwaitHello,
            engine: None,
            seq: 0,
            last_client_seq: None,
            pending_ping: None,
            samples: Vec::new(),
            offset_us: 0.0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> HostPhase {
        self.phase
    }

    pub fn engine(&self) -> Option<&SessionEngine> {
        self.engine.as_ref()
    }

    /// Calibrated server-minus-client offset, µs.
    pub fn clock_offset_us(&self) -> f64 {
        self.offset_us
    }

    pub fn ping_samples(&self) -> &[PingSample] {
        &self.samples
    }

    pub fn is_finished(&self) -> bool {
        self.phase == HostPhase::Finished
    }

    /// The session log so far. Empty until calibration completes.
    pub fn log(&self) -> EventLog {
        self.engine.as_ref().map(|e| e.log().clone()).unwrap_or_default()
    }

    pub fn summary(&self) -> Option<Result<SessionSummary, ProtocolError>> {
        self.engine.as_ref().map(SessionEngine::summary)
    }

    fn msg(&mut self, kind: &str, ack: Option<u64>, body: Value) -> WireMessage {
        self.seq += 1;
        let mut m = WireMessage::new(kind, &self.id, self.seq, body);
        m.ack = ack;
        m
    }

    fn to_client_time(&self, server_us: u64) -> u64 {
        (server_us as f64 - self.offset_us).round().max(0.0) as u64
    }

    /// Opening frame, sent as soon as the connection is accepted.
    pub fn start(&mut self) -> Reply {
        let body = json!({
            "session_id": self.id,
            "protocol": PROTOCOL_VERSION,
            "pings": self.config.ping_count,
        });
        Reply {
            messages: vec![self.msg("hello", None, body)],
            close: false,
        }
    }

    /// Marks the connection gone. An unfinished session keeps its partial
    /// log, which has no `SessionEnd` record.
    pub fn disconnect(&mut self) -> Result<(), ServiceError> {
        let was = self.phase;
        self.phase = HostPhase::Closed;
        if was == HostPhase::Calibrating {
            return Err(ServiceError::CalibrationFailed {
                completed: self.samples.len(),
                required: self.config.ping_count,
            });
        }
        if was == HostPhase::Finished {
            self.phase = HostPhase::Finished;
        }
        Ok(())
    }

    fn fail(&mut self, ack: Option<u64>, code: &str, message: String) -> Reply {
        log::warn!("session {}: protocol error {code}: {message}", self.id);
        let body = json!({ "error": code, "message": message });
        let m = self.msg("protocol_error", ack, body);
        if self.phase != HostPhase::Finished {
            self.phase = HostPhase::Closed;
        }
        Reply {
            messages: vec![m],
            close: true,
        }
    }

    /// Parses and handles one text frame.
    pub fn handle_text(&mut self, text: &str, now_us: u64) -> Reply {
        match WireMessage::from_text(text) {
            Ok(m) => self.handle(&m, now_us),
            Err(e) => self.fail(None, "MalformedMessage", e.to_string()),
        }
    }

    pub fn handle(&mut self, msg: &WireMessage, now_us: u64) -> Reply {
        let ack = Some(msg.seq);
        if matches!(self.phase, HostPhase::Closed | HostPhase::Finished) {
            return self.fail(ack, "SessionClosed", "session is no longer accepting messages".into());
        }
        if msg.session_id != self.id {
            return self.fail(ack, "WrongSession", format!("unknown session `{}`", msg.session_id));
        }
        if self.last_client_seq.is_some_and(|last| msg.seq <= last) {
            return self.fail(ack, "OutOfOrder", format!("seq {} not after {:?}", msg.seq, self.last_client_seq));
        }
        self.last_client_seq = Some(msg.seq);

        match (msg.kind.as_str(), self.phase) {
            ("hello", HostPhase::AwaitHello) => {
                self.phase = HostPhase::Calibrating;
                Reply {
                    messages: vec![self.ping(ack, now_us)],
                    close: false,
                }
            }
            ("pong", HostPhase::Calibrating) => self.on_pong(msg, now_us),
            ("tap", HostPhase::Running) => self.on_tap(msg, now_us),
            ("response", HostPhase::Running) => self.on_response(msg, now_us),
            ("hello" | "pong" | "tap" | "response", phase) => {
                self.fail(ack, "OutOfOrder", format!("`{}` not expected while {phase:?}", msg.kind))
            }
            (other, _) => self.fail(ack, "UnknownType", format!("unknown message type `{other}`")),
        }
    }

    fn ping(&mut self, ack: Option<u64>, now_us: u64) -> WireMessage {
        let m = self.msg("ping", ack, json!({ "server_us": now_us }));
        self.pending_ping = Some((m.seq, now_us));
        m
    }

    fn on_pong(&mut self, msg: &WireMessage, now_us: u64) -> Reply {
        let ack = Some(msg.seq);
        let body: PongBody = match serde_json::from_value(msg.body.clone()) {
            Ok(b) => b,
            Err(e) => return self.fail(ack, "MalformedMessage", e.to_string()),
        };
        let Some((ping_seq, sent)) = self.pending_ping.take() else {
            return self.fail(ack, "OutOfOrder", "pong without a ping".into());
        };
        if body.ping_seq != ping_seq {
            return self.fail(ack, "OutOfOrder", format!("pong for ping {}, expected {ping_seq}", body.ping_seq));
        }
        self.samples.push(PingSample {
            server_send_us: sent,
            client_us: body.client_us,
            server_recv_us: now_us,
        });
        if self.samples.len() < self.config.ping_count {
            return Reply {
                messages: vec![self.ping(ack, now_us)],
                close: false,
            };
        }
        self.offset_us = match estimate_offset(&self.samples, self.config.ping_count) {
            Ok(o) => o,
            Err(e) => return self.fail(ack, "CalibrationFailed", e.to_string()),
        };
        let start_us = self.to_client_time(now_us);
        let engine = match SessionEngine::new(self.config.session.clone(), self.config.materials.clone(), start_us) {
            Ok(e) => e,
            Err(e) => return self.fail(ack, e.code(), e.to_string()),
        };
        self.engine = Some(engine);
        self.phase = HostPhase::Running;

        let s = &self.config.session;
        let body = json!({
            "trials_per_condition": s.trials_per_condition,
            "blocks": s.block_order.blocks(),
            "velocity_range": [self.config.velocity_range.0, self.config.velocity_range.1],
            "velocity_limit": s.velocity_limit,
            "keys": { "r": "rubber", "a": "aluminum" },
            "masking": self.config.masking,
            "clock_offset_us": self.offset_us,
        });
        let mut messages = vec![self.msg("config", ack, body)];
        messages.extend(self.next_trial(now_us));
        Reply {
            messages,
            close: false,
        }
    }

    fn next_trial(&mut self, now_us: u64) -> Option<WireMessage> {
        let t = self.to_client_time(now_us);
        let engine = self.engine.as_mut()?;
        let trial = engine.begin_trial(t).ok()?.clone();
        let block_len = engine.trials().iter().filter(|x| x.block == trial.block).count();
        let position = engine
            .trials()
            .iter()
            .filter(|x| x.block == trial.block && x.index < trial.index)
            .count();
        Some(self.msg(
            "trial_start",
            None,
            json!({
                "trial": trial.index,
                "block": trial.block,
                "position": position,
                "block_len": block_len,
            }),
        ))
    }

    fn engine_error(&mut self, ack: Option<u64>, err: ProtocolError) -> Reply {
        if matches!(err, ProtocolError::IgnoredContact(_)) {
            // stray taps are reported but do not end the session
            let m = self.msg(
                "protocol_error",
                ack,
                json!({ "error": err.code(), "message": err.to_string(), "fatal": false }),
            );
            return Reply {
                messages: vec![m],
                close: false,
            };
        }
        self.fail(ack, err.code(), err.to_string())
    }

    fn on_tap(&mut self, msg: &WireMessage, _now_us: u64) -> Reply {
        let ack = Some(msg.seq);
        let body: TapBody = match serde_json::from_value(msg.body.clone()) {
            Ok(b) => b,
            Err(e) => return self.fail(ack, "MalformedMessage", e.to_string()),
        };
        if !(body.velocity.is_finite() && body.velocity >= 0.0) {
            return self.fail(ack, "MalformedMessage", format!("tap velocity {} is invalid", body.velocity));
        }
        let contact = ContactEvent {
            timestamp_us: body.client_us,
            velocity: body.velocity,
            tick_index: body.client_us / 100,
        };
        let engine = self.engine.as_mut().expect("running session has an engine");
        let assignment = match engine.on_contact(body.trial, contact) {
            Ok(a) => a,
            Err(e) => return self.engine_error(ack, e),
        };
        let tactile = match assignment.tactile {
            None => Value::Null,
            Some((params, v)) => {
                let buf = render_transient(&params, v, &self.config.synthesis);
                let (n, peak) = buf.map_or((0, 0.0), |b| (b.len(), b.peak()));
                json!({
                    "material": params.material,
                    "velocity": v,
                    "transient": format!("/transient/{}?velocity={v}", params.material),
                    "n_samples": n,
                    "sample_rate": self.config.synthesis.sample_rate,
                    "peak": peak,
                })
            }
        };
        let body = json!({
            "trial": assignment.trial,
            "texture": assignment.visual_texture,
            "tactile": tactile,
        });
        Reply {
            messages: vec![self.msg("stimulus", ack, body)],
            close: false,
        }
    }

    fn on_response(&mut self, msg: &WireMessage, now_us: u64) -> Reply {
        let ack = Some(msg.seq);
        let body: ResponseBody = match serde_json::from_value(msg.body.clone()) {
            Ok(b) => b,
            Err(e) => return self.fail(ack, "MalformedMessage", e.to_string()),
        };
        let engine = self.engine.as_mut().expect("running session has an engine");
        if engine.phase() == EnginePhase::AwaitingResponse && engine.current_trial().map(|t| t.index) == Some(body.trial) {
            // refuse before revising so a bad response leaves the onset alone
            if body.client_us <= body.displayed_us {
                let err = ProtocolError::NonPositiveRt {
                    onset_us: body.displayed_us,
                    timestamp_us: body.client_us,
                };
                return self.engine_error(ack, err);
            }
            if let Err(e) = engine.revise_onset(body.trial, body.displayed_us) {
                return self.engine_error(ack, e);
            }
        }
        let outcome = match engine.on_response(body.trial, body.key, body.client_us) {
            Ok(o) => o,
            Err(e) => return self.engine_error(ack, e),
        };
        let summary = outcome.session_ended.then(|| engine.summary());

        let r = outcome.result;
        let mut messages = vec![self.msg(
            "trial_result",
            ack,
            json!({ "trial": r.trial, "block": r.block, "rt_ms": r.rt_ms, "correct": r.correct }),
        )];
        if let Some(block) = outcome.block_ended {
            messages.push(self.msg("block_end", None, json!({ "block": block })));
        }
        match summary {
            Some(result) => {
                let body = match result {
                    Ok(s) => json!({ "summary": s }),
                    Err(e) => json!({ "summary": null, "error": e.code(), "message": e.to_string() }),
                };
                messages.push(self.msg("session_summary", None, body));
                self.phase = HostPhase::Finished;
                Reply { messages, close: true }
            }
            None => {
                messages.extend(self.next_trial(now_us));
                Reply {
                    messages,
                    close: false,
                }
            }
        }
    }
}
