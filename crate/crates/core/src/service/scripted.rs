//! Scripted stand-in for the browser client, and a simulated network link
//! with per-message delays, for exercising [`SessionHost`] without a browser.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::{HostConfig, Reply, ServiceError, SessionHost, WireMessage};
use crate::participant::{ResponderModel, SimulatedParticipant, SimulationError};
use crate::protocol::{Block, ProtocolError, SessionSummary};
use crate::signal::Material;
use crate::storage::EventLog;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub model: ResponderModel,
    /// Seed for synthetic tap speeds and hover times.
    pub seed: u64,
    pub velocity_range: (f64, f64),
    /// Delay from `trial_start` to the tap, µs range.
    pub hover_us: (u64, u64),
    /// Time from receiving `stimulus` to the texture being on screen, µs.
    pub render_delay_us: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            model: ResponderModel::default(),
            seed: 0,
            velocity_range: (0.3, 0.9),
            hover_us: (200_000, 600_000),
            render_delay_us: 16_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClientTimer {
    Tap { trial: usize },
    Respond { trial: usize, key: Material },
}

/// What the client wants done after handling an input.
#[derive(Debug, Default)]
pub struct ClientActions {
    pub send: Vec<WireMessage>,
    /// (delay µs on the client clock, timer)
    pub timers: Vec<(u64, ClientTimer)>,
}

/// Deterministic client following the wire protocol.
#[derive(Debug, Clone)]
pub struct ScriptedClient {
    session_id: String,
    seq: u64,
    config: ClientConfig,
    participant: SimulatedParticipant,
    rng: ChaCha8Rng,
    block: Option<Block>,
    displayed_us: Option<u64>,
    /// (trial, rt_ms) as computed locally from the client clock.
    pub local_rts: Vec<(usize, f64)>,
    pub summary: Option<Value>,
    pub errors: Vec<Value>,
    pub closed: bool,
}

impl ScriptedClient {
    pub fn new(session_id: impl Into<String>, config: ClientConfig) -> Result<Self, SimulationError> {
        let participant = SimulatedParticipant::new(config.model.clone())?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            session_id: session_id.into(),
            seq: 0,
            config,
            participant,
            rng,
            block: None,
            displayed_us: None,
            local_rts: Vec::new(),
            summary: None,
            errors: Vec::new(),
            closed: false,
        })
    }

    fn msg(&mut self, kind: &str, body: Value) -> WireMessage {
        self.seq += 1;
        WireMessage::new(kind, &self.session_id, self.seq, body)
    }

    pub fn on_message(&mut self, msg: &WireMessage, now_us: u64) -> ClientActions {
        let mut out = ClientActions::default();
        match msg.kind.as_str() {
            "hello" => out.send.push(self.msg("hello", json!({ "client": "scripted" }))),
            "ping" => {
                let pong = self.msg("pong", json!({ "ping_seq": msg.seq, "client_us": now_us }));
                out.send.push(pong);
            }
            "trial_start" => {
                let trial = msg.body["trial"].as_u64().unwrap_or_default() as usize;
                self.block = serde_json::from_value(msg.body["block"].clone()).ok();
                self.displayed_us = None;
                let (lo, hi) = self.config.hover_us;
                let hover = self.rng.random_range(lo..=hi.max(lo));
                out.timers.push((hover, ClientTimer::Tap { trial }));
            }
            "stimulus" => {
                let trial = msg.body["trial"].as_u64().unwrap_or_default() as usize;
                let texture: Material = match serde_json::from_value(msg.body["texture"].clone()) {
                    Ok(m) => m,
                    Err(_) => return out,
                };
                let shown = now_us + self.config.render_delay_us;
                self.displayed_us = Some(shown);
                let block = self.block.unwrap_or(Block::Practice);
                let response = self.participant.sample_response(block, texture);
                let rt_us = ((response.rt_ms * 1e3).round() as u64).max(1);
                out.timers.push((
                    self.config.render_delay_us + rt_us,
                    ClientTimer::Respond {
                        trial,
                        key: response.key,
                    },
                ));
            }
            "session_summary" => {
                self.summary = Some(msg.body.clone());
                self.closed = true;
            }
            "protocol_error" => {
                self.errors.push(msg.body.clone());
                if msg.body["fatal"] != Value::Bool(false) {
                    self.closed = true;
                }
            }
            _ => {}
        }
        out
    }

    pub fn on_timer(&mut self, timer: ClientTimer, now_us: u64) -> Vec<WireMessage> {
        if self.closed {
            return Vec::new();
        }
        match timer {
            ClientTimer::Tap { trial } => {
                let (lo, hi) = self.config.velocity_range;
                let velocity = self.rng.random_range(lo..=hi.max(lo));
                vec![self.msg("tap", json!({ "trial": trial, "velocity": velocity, "client_us": now_us }))]
            }
            ClientTimer::Respond { trial, key } => {
                let Some(displayed) = self.displayed_us else {
                    return Vec::new();
                };
                self.local_rts.push((trial, (now_us - displayed) as f64 / 1000.0));
                vec![self.msg(
                    "response",
                    json!({ "trial": trial, "key": key, "client_us": now_us, "displayed_us": displayed }),
                )]
            }
        }
    }
}

/// One-way delay ranges in µs, drawn uniformly per message. Each direction
/// stays FIFO, like a single websocket.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinkConfig {
    pub seed: u64,
    pub uplink_us: (u64, u64),
    pub downlink_us: (u64, u64),
    /// Client clock minus server clock, µs.
    pub client_clock_ahead_us: i64,
}

impl LinkConfig {
    pub fn fixed(delay_us: u64) -> Self {
        Self {
            uplink_us: (delay_us, delay_us),
            downlink_us: (delay_us, delay_us),
            ..Self::default()
        }
    }

    pub fn jitter(seed: u64, max_delay_us: u64) -> Self {
        Self {
            seed,
            uplink_us: (0, max_delay_us),
            downlink_us: (0, max_delay_us),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Direction {
    ToServer,
    ToClient,
}

#[derive(Debug, Clone)]
pub struct ScriptedRun {
    pub server_log: EventLog,
    pub server_summary: Option<Result<SessionSummary, ProtocolError>>,
    pub clock_offset_us: f64,
    pub client: ScriptedClient,
    pub finished: bool,
    /// Every frame in delivery order with its delivery time (server clock).
    pub transcript: Vec<(u64, Direction, WireMessage)>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Pending {
    Deliver(Direction, String),
    Timer(usize),
}

struct SimNet {
    link: LinkConfig,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<(u64, u64, Pending)>>,
    order: u64,
    last_up: u64,
    last_down: u64,
}

impl SimNet {
    fn new(link: LinkConfig) -> Self {
        Self {
            link,
            rng: ChaCha8Rng::seed_from_u64(link.seed),
            queue: BinaryHeap::new(),
            order: 0,
            last_up: 0,
            last_down: 0,
        }
    }

    fn schedule(&mut self, at: u64, pending: Pending) {
        self.order += 1;
        self.queue.push(Reverse((at, self.order, pending)));
    }

    fn send(&mut self, now: u64, dir: Direction, msg: &WireMessage) {
        let (range, last) = match dir {
            Direction::ToServer => (self.link.uplink_us, &mut self.last_up),
            Direction::ToClient => (self.link.downlink_us, &mut self.last_down),
        };
        let delay = self.rng.random_range(range.0..=range.1.max(range.0));
        let at = (now + delay).max(*last);
        *last = at;
        self.schedule(at, Pending::Deliver(dir, msg.to_text()));
    }
}

/// Runs a host and a scripted client against each other over a simulated
/// link until the session ends or the connection closes.
pub fn run_scripted_session(
    session_id: &str,
    host_config: HostConfig,
    client_config: ClientConfig,
    link: LinkConfig,
) -> Result<ScriptedRun, ServiceError> {
    let mut host = SessionHost::new(session_id, host_config)?;
    let mut client = ScriptedClient::new(session_id, client_config)
        .map_err(|e| ServiceError::Protocol(ProtocolError::InvalidConfig(e.to_string())))?;
    let mut net = SimNet::new(link);
    let mut timers: Vec<ClientTimer> = Vec::new();
    let mut transcript = Vec::new();
    let mut server_closed = false;

    let client_time = |server_us: u64| (server_us as i64 + link.client_clock_ahead_us).max(0) as u64;

    let start_at = 1_000_000;
    let Reply { messages, .. } = host.start();
    for m in &messages {
        net.send(start_at, Direction::ToClient, m);
    }

    while let Some(Reverse((now, _, pending))) = net.queue.pop() {
        match pending {
            Pending::Deliver(Direction::ToServer, text) => {
                if server_closed {
                    continue;
                }
                let msg = WireMessage::from_text(&text).expect("client frames are well-formed");
                transcript.push((now, Direction::ToServer, msg));
                let reply = host.handle_text(&text, now);
                for m in &reply.messages {
                    net.send(now, Direction::ToClient, m);
                }
                server_closed |= reply.close;
            }
            Pending::Deliver(Direction::ToClient, text) => {
                let msg = WireMessage::from_text(&text).expect("host frames are well-formed");
                let actions = client.on_message(&msg, client_time(now));
                transcript.push((now, Direction::ToClient, msg));
                for m in &actions.send {
                    net.send(now, Direction::ToServer, m);
                }
                for (delay, timer) in actions.timers {
                    timers.push(timer);
                    net.schedule(now + delay, Pending::Timer(timers.len() - 1));
                }
            }
            Pending::Timer(idx) => {
                for m in client.on_timer(timers[idx], client_time(now)) {
                    net.send(now, Direction::ToServer, &m);
                }
            }
        }
    }
    if !host.is_finished() {
        // a session without a summary ends as a dropped connection
        let _ = host.disconnect();
    }

    Ok(ScriptedRun {
        server_log: host.log(),
        server_summary: host.summary(),
        clock_offset_us: host.clock_offset_us(),
        finished: host.is_finished(),
        client,
        transcript,
    })
}
