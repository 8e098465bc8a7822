//! Synthetic participant and end-to-end simulated sessions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{DeviceConfig, DeviceError, DeviceSim, Trajectory};
use crate::protocol::{Block, ProtocolError, SessionConfig, SessionEngine, SessionSummary};
use crate::signal::{Material, MaterialTable};
use crate::storage::EventLog;

#[derive(Debug, Error, PartialEq)]
pub enum SimulationError {
    #[error("invalid responder model: {0}")]
    InvalidModel(String),
    #[error("invalid tap profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("trial {0}: scripted tap produced no contact")]
    MissedContact(usize),
}

/// Lognormal reaction times with an additive incongruent penalty and
/// per-condition error rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResponderModel {
    /// Mean congruent RT, ms.
    pub base_rt_ms: f64,
    /// RT standard deviation, ms.
    pub rt_sigma_ms: f64,
    pub stroop_delta_ms: f64,
    pub p_error_congruent: f64,
    pub p_error_incongruent: f64,
    pub seed: u64,
}

impl Default for ResponderModel {
    fn default() -> Self {
        Self {
            base_rt_ms: 500.0,
            rt_sigma_ms: 50.0,
            stroop_delta_ms: 60.0,
            p_error_congruent: 0.02,
            p_error_incongruent: 0.08,
            seed: 0,
        }
    }
}

impl ResponderModel {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |msg: String| Err(SimulationError::InvalidModel(msg));
        if !(self.base_rt_ms.is_finite() && self.base_rt_ms > 0.0) {
            return bad(format!("base RT must be > 0, got {}", self.base_rt_ms));
        }
        if !(self.rt_sigma_ms.is_finite() && self.rt_sigma_ms >= 0.0) {
            return bad(format!("RT sigma must be >= 0, got {}", self.rt_sigma_ms));
        }
        if !(self.stroop_delta_ms.is_finite() && self.stroop_delta_ms >= 0.0) {
            return bad(format!("stroop delta must be >= 0, got {}", self.stroop_delta_ms));
        }
        for p in [self.p_error_congruent, self.p_error_incongruent] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("error probability {p} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Mean RT for a block. Practice uses the congruent parameters.
    pub fn mean_rt_ms(&self, block: Block) -> f64 {
        match block {
            Block::Incongruent => self.base_rt_ms + self.stroop_delta_ms,
            Block::Practice | Block::Congruent => self.base_rt_ms,
        }
    }

    pub fn p_error(&self, block: Block) -> f64 {
        match block {
            Block::Incongruent => self.p_error_incongruent,
            Block::Practice | Block::Congruent => self.p_error_congruent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledResponse {
    pub key: Material,
    pub rt_ms: f64,
}

/// Seeded responder. Each response consumes exactly one normal and one
/// uniform draw, so models differing only in parameters share a stream.
#[derive(Debug, Clone)]
pub struct SimulatedParticipant {
    model: ResponderModel,
    rng: ChaCha8Rng,
}

impl SimulatedParticipant {
    pub fn new(model: ResponderModel) -> Result<Self, SimulationError> {
        model.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(model.seed);
        Ok(Self { model, rng })
    }

    pub fn model(&self) -> &ResponderModel {
        &self.model
    }

    pub fn sample_response(&mut self, block: Block, visual: Material) -> SampledResponse {
        let z: f64 = self.rng.sample(StandardNormal);
        let u: f64 = self.rng.random();
        let mean = self.model.mean_rt_ms(block);
        // lognormal with the requested mean and standard deviation
        let cv2 = (self.model.rt_sigma_ms / mean).powi(2);
        let shape = cv2.ln_1p().sqrt();
        let location = mean.ln() - 0.5 * shape * shape;
        let rt_ms = (location + shape * z).exp();
        let key = if u < self.model.p_error(block) {
            visual.other()
        } else {
            visual
        };
        SampledResponse { key, rt_ms }
    }
}

/// How the scripted stylus taps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TapProfile {
    pub min_velocity: f64,
    pub max_velocity: f64,
    /// Time from trial start to the beginning of the tap, ms.
    pub hover_ms: f64,
    /// Tip travel from rest to the cube face, m.
    pub approach_distance: f64,
    /// Tip travel into the foam past the face, m.
    pub press_depth: f64,
    pub retract_ms: f64,
    pub settle_ms: f64,
}

impl Default for TapProfile {
    fn default() -> Self {
        Self {
            min_velocity: 0.3,
            max_velocity: 0.9,
            hover_ms: 300.0,
            approach_distance: 0.02,
            press_depth: 0.002,
            retract_ms: 100.0,
            settle_ms: 100.0,
        }
    }
}

impl TapProfile {
    pub fn validate(&self) -> Result<(), SimulationError> {
        if !(self.min_velocity > 0.0 && self.min_velocity <= self.max_velocity && self.max_velocity.is_finite()) {
            return Err(SimulationError::InvalidProfile(format!(
                "velocity range [{}, {}] is invalid",
                self.min_velocity, self.max_velocity
            )));
        }
        let positive = [self.hover_ms, self.approach_distance, self.press_depth, self.retract_ms];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) || self.settle_ms.is_nan() || self.settle_ms < 0.0 {
            return Err(SimulationError::InvalidProfile("durations and distances must be > 0".into()));
        }
        Ok(())
    }
}

/// Output of one simulated session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRun {
    pub log: EventLog,
    /// The engine's live summary; `Err` when a condition had no usable trials.
    pub summary: Result<SessionSummary, ProtocolError>,
    /// Tap speeds the script commanded, one per trial.
    pub commanded_velocities: Vec<f64>,
}

const TAP_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Runs a full session: scripted taps through the device loop, contacts into
/// the protocol engine, sampled responses back out.
pub fn run_simulated_session(
    config: &SessionConfig,
    model: &ResponderModel,
    profile: &TapProfile,
    materials: &MaterialTable,
    device: &DeviceConfig,
) -> Result<SessionRun, SimulationError> {
    profile.validate()?;
    let mut participant = SimulatedParticipant::new(model.clone())?;
    let mut engine = SessionEngine::new(config.clone(), materials.clone(), 0)?;
    let mut tap_rng = ChaCha8Rng::seed_from_u64(config.seed ^ TAP_SEED_SALT);

    let r = device.geometry.arm_length;
    let rest = device.geometry.contact_angle - profile.approach_distance / r;
    let pressed = device.geometry.contact_angle + profile.press_depth / r;
    let mut sim = DeviceSim::new(*device, Trajectory::from_points([(0.0, rest)])?)?;
    let mut commanded = Vec::with_capacity(config.total_trials());

    while !engine.is_finished() {
        let t0 = sim.now_us();
        let trial = engine.begin_trial(t0)?.clone();
        let v = tap_rng.random_range(profile.min_velocity..=profile.max_velocity);
        commanded.push(v);

        let tap_start = t0 as f64 + profile.hover_ms * 1e3;
        let tap_end = tap_start + (pressed - rest) * r / v * 1e6;
        let traj = sim.source_mut();
        traj.push(tap_start, rest)?;
        traj.push(tap_end, pressed)?;

        let deadline = tap_end as u64 + device.refractory_us + 10_000;
        let contact = sim
            .run_until_contact(deadline)
            .ok_or(SimulationError::MissedContact(trial.index))?;
        let assignment = engine.on_contact(trial.index, contact)?;

        let response = participant.sample_response(trial.block, trial.visual_material);
        let rt_us = ((response.rt_ms * 1e3).round() as u64).max(1);
        let t_resp = assignment.onset_us + rt_us;
        engine.on_response(trial.index, response.key, t_resp)?;

        let hold_until = (t_resp as f64).max(tap_end + 1.0);
        let retracted = hold_until + profile.retract_ms * 1e3;
        let traj = sim.source_mut();
        traj.push(hold_until, pressed)?;
        traj.push(retracted, rest)?;
        let stray = sim.run_until((retracted + profile.settle_ms * 1e3) as u64);
        debug_assert!(stray.is_empty(), "unexpected contacts {stray:?}");
    }

    Ok(SessionRun {
        summary: engine.summary(),
        log: engine.into_log(),
        commanded_velocities: commanded,
    })
}

/// Session and responder seeds for session `i` of a batch.
pub fn batch_seeds(base_seed: u64, i: u64) -> (u64, u64) {
    let session = base_seed.wrapping_add(i);
    (session, session.wrapping_mul(0xD134_2543_DE82_EF95).wrapping_add(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::RtPolicy;

    #[test]
    fn model_validation() {
        assert!(ResponderModel::default().validate().is_ok());
        let m = ResponderModel { p_error_congruent: 1.5, ..Default::default() };
        assert!(m.validate().is_err());
        let m = ResponderModel { base_rt_ms: 0.0, ..Default::default() };
        assert!(m.validate().is_err());
        let m = ResponderModel { stroop_delta_ms: 0.0, ..Default::default() };
        assert!(m.validate().is_ok());
    }

    #[test]
    fn null_model_matches_across_conditions() {
        let model = ResponderModel {
            stroop_delta_ms: 0.0,
            p_error_congruent: 0.0,
            p_error_incongruent: 0.0,
            seed: 4,
            ..Default::default()
        };
        let mut a = SimulatedParticipant::new(model.clone()).unwrap();
        let mut b = SimulatedParticipant::new(model).unwrap();
        for _ in 0..100 {
            let x = a.sample_response(Block::Congruent, Material::Rubber);
            let y = b.sample_response(Block::Incongruent, Material::Rubber);
            assert_eq!(x, y);
        }
    }

    #[test]
    fn always_wrong_when_error_is_certain() {
        let model = ResponderModel { p_error_incongruent: 1.0, ..Default::default() };
        let mut p = SimulatedParticipant::new(model).unwrap();
        for _ in 0..200 {
            assert_eq!(p.sample_response(Block::Incongruent, Material::Aluminum).key, Material::Rubber);
        }
    }

    #[test]
    fn lognormal_moments() {
        let mut p = SimulatedParticipant::new(ResponderModel { seed: 9, ..Default::default() }).unwrap();
        let n = 100_000;
        let rts: Vec<f64> = (0..n).map(|_| p.sample_response(Block::Congruent, Material::Rubber).rt_ms).collect();
        let mean = rts.iter().sum::<f64>() / n as f64;
        let sd = (rts.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - 500.0).abs() < 1.0, "{mean}");
        assert!((sd - 50.0).abs() < 1.0, "{sd}");
        assert!(rts.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn simulated_session_is_deterministic() {
        let cfg = SessionConfig::with_seed(7);
        let model = ResponderModel { seed: 7, ..Default::default() };
        let run = || {
            run_simulated_session(&cfg, &model, &TapProfile::default(), &MaterialTable::placeholder(), &DeviceConfig::default())
                .unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a.commanded_velocities.len(), 18);
        assert!(a.summary.is_ok());
    }

    #[test]
    fn error_free_policies_coincide() {
        let model = ResponderModel {
            p_error_congruent: 0.0,
            p_error_incongruent: 0.0,
            seed: 3,
            ..Default::default()
        };
        let summaries: Vec<SessionSummary> = [RtPolicy::CorrectOnly, RtPolicy::AllResponses]
            .into_iter()
            .map(|rt_policy| {
                let cfg = SessionConfig { rt_policy, ..SessionConfig::with_seed(3) };
                run_simulated_session(&cfg, &model, &TapProfile::default(), &MaterialTable::placeholder(), &DeviceConfig::default())
                    .unwrap()
                    .summary
                    .unwrap()
            })
            .collect();
        assert_eq!(summaries[0], summaries[1]);
        assert_eq!(summaries[0].accuracy_congruent, 1.0);
    }

    #[test]
    fn contacts_track_commanded_speed() {
        let cfg = SessionConfig::with_seed(12);
        let run = run_simulated_session(
            &cfg,
            &ResponderModel::default(),
            &TapProfile::default(),
            &MaterialTable::placeholder(),
            &DeviceConfig::default(),
        )
        .unwrap();
        let contacts: Vec<f64> = run
            .log
            .records()
            .iter()
            .filter_map(|r| match &r.event {
                crate::storage::Event::Contact { contact, .. } => Some(contact.velocity),
                _ => None,
            })
            .collect();
        assert_eq!(contacts.len(), run.commanded_velocities.len());
        for (measured, commanded) in contacts.iter().zip(&run.commanded_velocities) {
            assert!((measured - commanded).abs() / commanded < 0.02, "{measured} vs {commanded}");
        }
    }
}
