//! Stroop session state machine.
//!
//! A session runs three blocks of trials: a practice block with visual
//! stimuli only, then a congruent and an incongruent block in the configured
//! order. Each trial accepts exactly one contact followed by exactly one
//! response; anything else is rejected and leaves the trial unchanged.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::ContactEvent;
use crate::signal::{Material, MaterialParams, MaterialTable};
use crate::storage::{Event, EventLog, TactileStimulus};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProtocolError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("contact ignored: {0}")]
    IgnoredContact(String),
    #[error("response for trial {trial} before any contact")]
    EarlyResponse { trial: usize },
    #[error("trial {trial} already has a response")]
    DuplicateResponse { trial: usize },
    #[error("no trial {trial} in this session")]
    UnknownTrial { trial: usize },
    #[error("trial {trial} is still active")]
    TrialActive { trial: usize },
    #[error("session already finished")]
    SessionFinished,
    #[error("response at {timestamp_us} µs is not after stimulus onset {onset_us} µs")]
    NonPositiveRt { onset_us: u64, timestamp_us: u64 },
    #[error("stimulus onset {onset_us} µs precedes contact at {contact_us} µs")]
    OnsetBeforeContact { onset_us: u64, contact_us: u64 },
    #[error("no includable trials in the {0} condition")]
    InsufficientData(Block),
}

impl ProtocolError {
    /// Stable name used on the wire and in logs.
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::InvalidConfig(_) => "InvalidConfig",
            ProtocolError::IgnoredContact(_) => "IgnoredContact",
            ProtocolError::EarlyResponse { .. } => "EarlyResponse",
            ProtocolError::DuplicateResponse { .. } => "DuplicateResponse",
            ProtocolError::UnknownTrial { .. } => "UnknownTrial",
            ProtocolError::TrialActive { .. } => "TrialActive",
            ProtocolError::SessionFinished => "SessionFinished",
            ProtocolError::NonPositiveRt { .. } => "NonPositiveRt",
            ProtocolError::OnsetBeforeContact { .. } => "OnsetBeforeContact",
            ProtocolError::InsufficientData(_) => "InsufficientData",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Practice,
    Congruent,
    Incongruent,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Block::Practice => "practice",
            Block::Congruent => "congruent",
            Block::Incongruent => "incongruent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOrder {
    #[default]
    PracticeCongruentIncongruent,
    PracticeIncongruentCongruent,
}

impl BlockOrder {
    pub fn blocks(self) -> [Block; 3] {
        match self {
            BlockOrder::PracticeCongruentIncongruent => [Block::Practice, Block::Congruent, Block::Incongruent],
            BlockOrder::PracticeIncongruentCongruent => [Block::Practice, Block::Incongruent, Block::Congruent],
        }
    }
}

/// Which trials feed the reaction-time means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RtPolicy {
    #[default]
    CorrectOnly,
    AllResponses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub seed: u64,
    pub trials_per_condition: usize,
    /// Tap speeds above this are rendered at the limit, m/s.
    pub velocity_limit: f64,
    pub block_order: BlockOrder,
    pub rt_policy: RtPolicy,
    /// Responses slower than this are logged as late; never enforced.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_timeout_ms: Option<f64>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials_per_condition: 6,
            velocity_limit: 1.0,
            block_order: BlockOrder::default(),
            rt_policy: RtPolicy::default(),
            response_timeout_ms: None,
        }
    }
}

impl SessionConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let n = self.trials_per_condition;
        if n < 2 || !n.is_multiple_of(2) {
            return Err(ProtocolError::InvalidConfig(format!(
                "trials per condition must be even and >= 2, got {n}"
            )));
        }
        if !(self.velocity_limit.is_finite() && self.velocity_limit > 0.0) {
            return Err(ProtocolError::InvalidConfig(format!(
                "velocity limit must be > 0, got {}",
                self.velocity_limit
            )));
        }
        Ok(())
    }

    pub fn total_trials(&self) -> usize {
        3 * self.trials_per_condition
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub material: Material,
    pub timestamp_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub block: Block,
    pub visual_material: Material,
    pub tactile_material: Option<Material>,
    pub contact: Option<ContactEvent>,
    pub stimulus_onset_us: Option<u64>,
    pub response: Option<Response>,
    pub rt_ms: Option<f64>,
    pub correct: Option<bool>,
}

impl Trial {
    pub fn pending(index: usize, block: Block, visual: Material) -> Self {
        let tactile_material = match block {
            Block::Practice => None,
            Block::Congruent => Some(visual),
            Block::Incongruent => Some(visual.other()),
        };
        Self {
            index,
            block,
            visual_material: visual,
            tactile_material,
            contact: None,
            stimulus_onset_us: None,
            response: None,
            rt_ms: None,
            correct: None,
        }
    }

    /// Checks the block-composition and timing invariants.
    pub fn is_consistent(&self) -> bool {
        let pairing = match self.block {
            Block::Practice => self.tactile_material.is_none(),
            Block::Congruent => self.tactile_material == Some(self.visual_material),
            Block::Incongruent => self.tactile_material == Some(self.visual_material.other()),
        };
        let timing = match (self.rt_ms, self.response, self.stimulus_onset_us) {
            (Some(rt), Some(resp), Some(onset)) => rt > 0.0 && resp.timestamp_us > onset,
            (Some(_), _, _) => false,
            _ => true,
        };
        pairing && timing
    }
}

/// All trials of a session in presentation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub block_order: BlockOrder,
    pub trials: Vec<Trial>,
}

impl Schedule {
    pub fn block(&self, block: Block) -> impl Iterator<Item = &Trial> {
        self.trials.iter().filter(move |t| t.block == block)
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

/// Builds the seeded, balanced three-block schedule.
pub fn build_schedule(config: &SessionConfig) -> Result<Schedule, ProtocolError> {
    config.validate()?;
    let n = config.trials_per_condition;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trials = Vec::with_capacity(config.total_trials());
    for block in config.block_order.blocks() {
        let mut visuals: Vec<Material> = Material::ALL
            .iter()
            .flat_map(|&m| std::iter::repeat_n(m, n / 2))
            .collect();
        visuals.shuffle(&mut rng);
        for visual in visuals {
            trials.push(Trial::pending(trials.len(), block, visual));
        }
    }
    Ok(Schedule {
        block_order: config.block_order,
        trials,
    })
}

/// What to present at the moment of contact.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusAssignment {
    pub trial: usize,
    pub visual_texture: Material,
    /// Absent in practice: the vibrator is not driven.
    pub tactile: Option<(MaterialParams, f64)>,
    pub onset_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub block: Block,
    pub rt_ms: f64,
    pub correct: bool,
}

/// Result of a successful response, plus any block/session transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseOutcome {
    pub result: TrialResult,
    pub block_ended: Option<Block>,
    pub session_ended: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnginePhase {
    BetweenTrials,
    AwaitingContact,
    AwaitingResponse,
    Finished,
}

/// Per-condition means and the incongruent minus congruent delta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub mean_rt_congruent_ms: f64,
    pub mean_rt_incongruent_ms: f64,
    pub stroop_delta_ms: f64,
    pub accuracy_congruent: f64,
    pub accuracy_incongruent: f64,
    pub n_used_congruent: usize,
    pub n_used_incongruent: usize,
    /// Set when the log ended before the session did.
    pub partial: bool,
}

struct ConditionStats {
    mean_rt: f64,
    accuracy: f64,
    n_used: usize,
}

fn condition_stats(trials: &[Trial], block: Block, policy: RtPolicy) -> Result<ConditionStats, ProtocolError> {
    let answered: Vec<&Trial> = trials
        .iter()
        .filter(|t| t.block == block && t.rt_ms.is_some() && t.correct.is_some())
        .collect();
    let n_correct = answered.iter().filter(|t| t.correct == Some(true)).count();
    let mut rts: Vec<f64> = answered
        .iter()
        .filter(|t| policy == RtPolicy::AllResponses || t.correct == Some(true))
        .filter_map(|t| t.rt_ms)
        .collect();
    if rts.is_empty() {
        return Err(ProtocolError::InsufficientData(block));
    }
    // fixed summation order keeps the mean independent of trial order
    rts.sort_by(f64::total_cmp);
    let mean_rt = rts.iter().sum::<f64>() / rts.len() as f64;
    Ok(ConditionStats {
        mean_rt,
        accuracy: n_correct as f64 / answered.len() as f64,
        n_used: rts.len(),
    })
}

/// Summarizes answered congruent and incongruent trials. Practice trials
/// never contribute.
pub fn summarize(trials: &[Trial], policy: RtPolicy) -> Result<SessionSummary, ProtocolError> {
    let con = condition_stats(trials, Block::Congruent, policy)?;
    let inc = condition_stats(trials, Block::Incongruent, policy)?;
    Ok(SessionSummary {
        mean_rt_congruent_ms: con.mean_rt,
        mean_rt_incongruent_ms: inc.mean_rt,
        stroop_delta_ms: inc.mean_rt - con.mean_rt,
        accuracy_congruent: con.accuracy,
        accuracy_incongruent: inc.accuracy,
        n_used_congruent: con.n_used,
        n_used_incongruent: inc.n_used,
        partial: false,
    })
}

/// Reaction time in ms from integer microsecond stamps.
pub fn rt_ms_between(onset_us: u64, response_us: u64) -> f64 {
    (response_us - onset_us) as f64 / 1000.0
}

/// Single-writer session state machine. Every accepted transition is
/// appended to the session's event log.
#[derive(Debug, Clone)]
pub struct SessionEngine {
    config: SessionConfig,
    materials: MaterialTable,
    trials: Vec<Trial>,
    cursor: usize,
    phase: EnginePhase,
    log: EventLog,
    rejected: u64,
}

impl SessionEngine {
    pub fn new(config: SessionConfig, materials: MaterialTable, t_us: u64) -> Result<Self, ProtocolError> {
        let schedule = build_schedule(&config)?;
        let mut log = EventLog::new();
        log.push(t_us, Event::SessionStart { config: config.clone() });
        Ok(Self {
            config,
            materials,
            trials: schedule.trials,
            cursor: 0,
            phase: EnginePhase::BetweenTrials,
            log,
            rejected: 0,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn materials(&self) -> &MaterialTable {
        &self.materials
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn phase(&self) -> EnginePhase {
        self.phase
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    /// Number of rejected events so far.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    /// The trial currently running or about to start.
    pub fn current_trial(&self) -> Option<&Trial> {
        self.trials.get(self.cursor)
    }

    pub fn is_finished(&self) -> bool {
        self.phase == EnginePhase::Finished
    }

    fn reject(&mut self, err: ProtocolError) -> ProtocolError {
        self.rejected += 1;
        log::warn!("rejected event: {err}");
        err
    }

    /// Opens the next trial.
    pub fn begin_trial(&mut self, t_us: u64) -> Result<&Trial, ProtocolError> {
        match self.phase {
            EnginePhase::Finished => return Err(self.reject(ProtocolError::SessionFinished)),
            EnginePhase::AwaitingContact | EnginePhase::AwaitingResponse => {
                let trial = self.cursor;
                return Err(self.reject(ProtocolError::TrialActive { trial }));
            }
            EnginePhase::BetweenTrials => {}
        }
        let trial = &self.trials[self.cursor];
        self.log.push(
            t_us,
            Event::TrialStart {
                trial: trial.index,
                block: trial.block,
                visual: trial.visual_material,
                tactile: trial.tactile_material,
            },
        );
        self.phase = EnginePhase::AwaitingContact;
        Ok(&self.trials[self.cursor])
    }

    /// Records the contact for the active trial and assigns its stimulus.
    pub fn on_contact(&mut self, trial: usize, event: ContactEvent) -> Result<StimulusAssignment, ProtocolError> {
        if self.phase != EnginePhase::AwaitingContact || trial != self.cursor {
            let reason = match self.phase {
                EnginePhase::AwaitingResponse if trial == self.cursor => {
                    format!("trial {trial} already has a contact")
                }
                EnginePhase::AwaitingContact => format!("trial {trial} is not the active trial {}", self.cursor),
                _ => "no trial active".to_string(),
            };
            return Err(self.reject(ProtocolError::IgnoredContact(reason)));
        }
        let velocity = event.velocity.min(self.config.velocity_limit);
        let current = &mut self.trials[self.cursor];
        current.contact = Some(event);
        current.stimulus_onset_us = Some(event.timestamp_us);
        let tactile = current
            .tactile_material
            .map(|m| (*self.materials.get(m), velocity));
        let assignment = StimulusAssignment {
            trial,
            visual_texture: current.visual_material,
            tactile,
            onset_us: event.timestamp_us,
        };
        self.log.push(event.timestamp_us, Event::Contact { trial, contact: event });
        self.log.push(
            event.timestamp_us,
            Event::Stimulus {
                trial,
                onset_us: event.timestamp_us,
                texture: assignment.visual_texture,
                tactile: tactile.map(|(p, v)| TactileStimulus {
                    material: p.material,
                    velocity: v,
                }),
            },
        );
        self.phase = EnginePhase::AwaitingResponse;
        Ok(assignment)
    }

    /// Moves the stimulus onset of the active trial to when the stimulus was
    /// actually shown, which may be later than the contact.
    pub fn revise_onset(&mut self, trial: usize, onset_us: u64) -> Result<(), ProtocolError> {
        if self.phase != EnginePhase::AwaitingResponse || trial != self.cursor {
            let err = self.response_state_error(trial);
            return Err(self.reject(err));
        }
        let current = &self.trials[self.cursor];
        let contact_us = current.contact.map_or(0, |c| c.timestamp_us);
        if onset_us < contact_us {
            return Err(self.reject(ProtocolError::OnsetBeforeContact { onset_us, contact_us }));
        }
        let texture = current.visual_material;
        let tactile = current.tactile_material.map(|m| TactileStimulus {
            material: m,
            velocity: current
                .contact
                .map_or(0.0, |c| c.velocity.min(self.config.velocity_limit)),
        });
        self.trials[self.cursor].stimulus_onset_us = Some(onset_us);
        self.log.push(
            onset_us,
            Event::Stimulus {
                trial,
                onset_us,
                texture,
                tactile,
            },
        );
        Ok(())
    }

    fn response_state_error(&self, trial: usize) -> ProtocolError {
        match self.trials.get(trial) {
            None => ProtocolError::UnknownTrial { trial },
            Some(t) if t.response.is_some() => ProtocolError::DuplicateResponse { trial },
            Some(_) => ProtocolError::EarlyResponse { trial },
        }
    }

    /// Records the keypad answer and finalizes the active trial.
    pub fn on_response(
        &mut self,
        trial: usize,
        key: Material,
        timestamp_us: u64,
    ) -> Result<ResponseOutcome, ProtocolError> {
        if self.phase != EnginePhase::AwaitingResponse || trial != self.cursor {
            let err = self.response_state_error(trial);
            return Err(self.reject(err));
        }
        let onset_us = self.trials[self.cursor].stimulus_onset_us.unwrap_or(0);
        if timestamp_us <= onset_us {
            return Err(self.reject(ProtocolError::NonPositiveRt { onset_us, timestamp_us }));
        }
        let rt_ms = rt_ms_between(onset_us, timestamp_us);
        if let Some(limit) = self.config.response_timeout_ms {
            if rt_ms > limit {
                log::warn!("trial {trial}: response after {rt_ms} ms exceeds timeout {limit} ms");
            }
        }
        let current = &mut self.trials[self.cursor];
        let correct = key == current.visual_material;
        current.response = Some(Response {
            material: key,
            timestamp_us,
        });
        current.rt_ms = Some(rt_ms);
        current.correct = Some(correct);
        let result = TrialResult {
            trial,
            block: current.block,
            rt_ms,
            correct,
        };
        self.log.push(timestamp_us, Event::Response { trial, key, timestamp_us });
        self.log.push(timestamp_us, Event::TrialResult { trial, rt_ms, correct });

        self.cursor += 1;
        let block_ended = match self.trials.get(self.cursor) {
            Some(next) if next.block == result.block => None,
            _ => Some(result.block),
        };
        if let Some(block) = block_ended {
            self.log.push(timestamp_us, Event::BlockEnd { block });
        }
        let session_ended = self.cursor == self.trials.len();
        if session_ended {
            self.phase = EnginePhase::Finished;
            let summary = self.summary().ok();
            self.log.push(timestamp_us, Event::SessionEnd { summary });
        } else {
            self.phase = EnginePhase::BetweenTrials;
        }
        Ok(ResponseOutcome {
            result,
            block_ended,
            session_ended,
        })
    }

    /// Summary over the trials answered so far.
    pub fn summary(&self) -> Result<SessionSummary, ProtocolError> {
        let mut summary = summarize(&self.trials, self.config.rt_policy)?;
        summary.partial = !self.is_finished();
        Ok(summary)
    }
}
