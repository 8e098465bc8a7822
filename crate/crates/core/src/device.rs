//! Fixed-timestep simulation of the stylus firmware.
//!
//! The stylus pivots about a fixed axis; a quadrature encoder on the pivot
//! reports its angle. Every loop tick the firmware reads the encoder count,
//! checks whether the tip has reached the cube face, and on contact reports
//! the tip speed. The encoder line count is fed edge by edge, as the
//! hardware pulse counter sees it, so fast taps never skip a phase state.

use std::collections::VecDeque;
use std::f64::consts::TAU;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DeviceError {
    #[error("quadrature jump {prev:02b} -> {next:02b} (missed sample)")]
    InvalidTransition { prev: u8, next: u8 },
    #[error("{0:#b} is not a 2-bit quadrature phase")]
    InvalidPhase(u8),
    #[error("velocity window needs {needed} counts, have {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("invalid device config: {0}")]
    InvalidConfig(String),
    #[error("trajectory line {line}: {message}")]
    Trajectory { line: usize, message: String },
}

/// Phase states in forward Gray order: A leads B.
const GRAY: [u8; 4] = [0b00, 0b01, 0b11, 0b10];

fn gray_index(ab: u8) -> Result<usize, DeviceError> {
    GRAY.iter()
        .position(|&g| g == ab)
        .ok_or(DeviceError::InvalidPhase(ab))
}

/// Count change for one observed phase transition.
pub fn decode_quadrature(prev_ab: u8, next_ab: u8) -> Result<i8, DeviceError> {
    let prev = gray_index(prev_ab)?;
    let next = gray_index(next_ab)?;
    match (next + 4 - prev) % 4 {
        0 => Ok(0),
        1 => Ok(1),
        3 => Ok(-1),
        _ => Err(DeviceError::InvalidTransition {
            prev: prev_ab,
            next: next_ab,
        }),
    }
}

/// Phase state the encoder outputs at a given ×4 count.
pub fn phase_for_count(count: i64) -> u8 {
    GRAY[count.rem_euclid(4) as usize]
}

/// ×4-decoded incremental encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pulses_per_rev: u32,
    count: i64,
    last_ab: u8,
    invalid_transitions: u64,
}

impl EncoderModel {
    pub fn new(pulses_per_rev: u32) -> Self {
        Self::at_count(pulses_per_rev, 0)
    }

    pub fn at_count(pulses_per_rev: u32, count: i64) -> Self {
        Self {
            pulses_per_rev,
            count,
            last_ab: phase_for_count(count),
            invalid_transitions: 0,
        }
    }

    pub fn pulses_per_rev(&self) -> u32 {
        self.pulses_per_rev
    }

    pub fn counts_per_rev(&self) -> u32 {
        4 * self.pulses_per_rev
    }

    pub fn count(&self) -> i64 {
        self.count
    }

    pub fn last_ab(&self) -> u8 {
        self.last_ab
    }

    pub fn invalid_transitions(&self) -> u64 {
        self.invalid_transitions
    }

    pub fn angle(&self) -> f64 {
        self.count as f64 * TAU / f64::from(self.counts_per_rev())
    }

    /// Applies one phase sample. A two-state jump leaves the count untouched
    /// and is tallied as a diagnostic.
    pub fn observe(&mut self, ab: u8) -> Result<i8, DeviceError> {
        match decode_quadrature(self.last_ab, ab) {
            Ok(delta) => {
                self.count += i64::from(delta);
                self.last_ab = ab;
                Ok(delta)
            }
            Err(err @ DeviceError::InvalidTransition { .. }) => {
                self.invalid_transitions += 1;
                self.last_ab = ab;
                Err(err)
            }
            Err(err) => Err(err),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StylusGeometry {
    /// Pivot to tip, in meters.
    pub arm_length: f64,
    /// Pivot angle at which the tip meets the cube face, in radians.
    pub contact_angle: f64,
}

impl Default for StylusGeometry {
    fn default() -> Self {
        Self {
            arm_length: 0.10,
            contact_angle: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub sample_rate: u32,
    pub pulses_per_rev: u32,
    pub geometry: StylusGeometry,
    /// Velocity window length in ticks.
    pub velocity_window: usize,
    pub refractory_us: u64,
    pub hysteresis_counts: i64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            sample_rate: 10_000,
            pulses_per_rev: 2000,
            geometry: StylusGeometry::default(),
            velocity_window: 10,
            refractory_us: 50_000,
            hysteresis_counts: 2,
        }
    }
}

impl DeviceConfig {
    pub fn counts_per_rev(&self) -> u32 {
        4 * self.pulses_per_rev
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.sample_rate == 0 || self.sample_rate > 1_000_000 {
            return Err(DeviceError::InvalidConfig(format!(
                "sample rate must lie in 1..=1000000 Hz, got {}",
                self.sample_rate
            )));
        }
        if self.pulses_per_rev == 0 {
            return Err(DeviceError::InvalidConfig("pulses per rev must be > 0".into()));
        }
        if !(self.geometry.arm_length.is_finite() && self.geometry.arm_length > 0.0) {
            return Err(DeviceError::InvalidConfig(format!(
                "arm length must be > 0, got {}",
                self.geometry.arm_length
            )));
        }
        if !self.geometry.contact_angle.is_finite() {
            return Err(DeviceError::InvalidConfig("contact angle must be finite".into()));
        }
        if self.velocity_window < 1 {
            return Err(DeviceError::InvalidConfig("velocity window must be >= 1 tick".into()));
        }
        if self.hysteresis_counts < 0 {
            return Err(DeviceError::InvalidConfig("hysteresis must be >= 0".into()));
        }
        Ok(())
    }

    /// Encoder count at which the measured angle first reaches the cube.
    pub fn contact_count(&self) -> i64 {
        (self.geometry.contact_angle * f64::from(self.counts_per_rev()) / TAU).ceil() as i64
    }

    /// Count the encoder reports for a true pivot angle.
    pub fn count_for_angle(&self, angle: f64) -> i64 {
        (angle * f64::from(self.counts_per_rev()) / TAU).floor() as i64
    }

    pub fn tick_time_us(&self, tick: u64) -> u64 {
        tick * 1_000_000 / u64::from(self.sample_rate)
    }
}

/// Stylus tip impact detected by the firmware loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub timestamp_us: u64,
    /// Tip speed at impact, m/s.
    pub velocity: f64,
    pub tick_index: u64,
}

/// Tip speed from a window of per-tick counts.
///
/// The first and last counts span `counts.len() - 1` ticks; the angular rate
/// over that span times the arm length gives the tip speed.
pub fn estimate_velocity(
    counts: &[i64],
    geometry: &StylusGeometry,
    counts_per_rev: u32,
    sample_rate: u32,
) -> Result<f64, DeviceError> {
    if counts.len() < 2 {
        return Err(DeviceError::InsufficientHistory {
            needed: 2,
            got: counts.len(),
        });
    }
    let delta = (counts[counts.len() - 1] - counts[0]).unsigned_abs() as f64;
    let elapsed = (counts.len() - 1) as f64 / f64::from(sample_rate);
    let omega = delta / f64::from(counts_per_rev) * TAU / elapsed;
    Ok(omega * geometry.arm_length)
}

/// Anything that yields a pivot angle (rad) for a time in µs.
pub trait AngleSource {
    fn angle_at(&self, t_us: f64) -> f64;
}

impl<F: Fn(f64) -> f64> AngleSource for F {
    fn angle_at(&self, t_us: f64) -> f64 {
        self(t_us)
    }
}

/// Piecewise-linear angle trajectory, held constant outside its rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    points: Vec<(f64, f64)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, DeviceError> {
        let mut traj = Self::new();
        for (i, (t, a)) in points.into_iter().enumerate() {
            traj.push(t, a).map_err(|e| match e {
                DeviceError::Trajectory { message, .. } => DeviceError::Trajectory { line: i + 1, message },
                other => other,
            })?;
        }
        Ok(traj)
    }

    /// Appends a row; times must be strictly increasing.
    pub fn push(&mut self, t_us: f64, angle: f64) -> Result<(), DeviceError> {
        let line = self.points.len() + 1;
        if !t_us.is_finite() || !angle.is_finite() {
            return Err(DeviceError::Trajectory {
                line,
                message: "non-finite value".into(),
            });
        }
        if let Some(&(last, _)) = self.points.last() {
            if t_us <= last {
                return Err(DeviceError::Trajectory {
                    line,
                    message: format!("time {t_us} not after {last}"),
                });
            }
        }
        self.points.push((t_us, angle));
        Ok(())
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn end_time_us(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.0)
    }

    /// Reads `t_us,angle_rad` rows; a leading header row is allowed.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DeviceError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut traj = Self::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 1;
            let rec = rec.map_err(|e| DeviceError::Trajectory {
                line,
                message: e.to_string(),
            })?;
            if rec.len() != 2 {
                return Err(DeviceError::Trajectory {
                    line,
                    message: format!("expected 2 fields, got {}", rec.len()),
                });
            }
            if i == 0 && &rec[0] == "t_us" {
                continue;
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| DeviceError::Trajectory {
                    line,
                    message: format!("`{s}`: {e}"),
                })
            };
            let (t, a) = (parse(&rec[0])?, parse(&rec[1])?);
            traj.push(t, a).map_err(|e| match e {
                DeviceError::Trajectory { message, .. } => DeviceError::Trajectory { line, message },
                other => other,
            })?;
        }
        Ok(traj)
    }

    pub fn write_csv<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        writeln!(writer, "t_us,angle_rad")?;
        for (t, a) in &self.points {
            writeln!(writer, "{t},{a}")?;
        }
        Ok(())
    }
}

impl AngleSource for Trajectory {
    fn angle_at(&self, t_us: f64) -> f64 {
        let pts = &self.points;
        match pts.len() {
            0 => 0.0,
            _ if t_us <= pts[0].0 => pts[0].1,
            _ => {
                let i = pts.partition_point(|p| p.0 <= t_us);
                if i >= pts.len() {
                    return pts[pts.len() - 1].1;
                }
                let (t0, a0) = pts[i - 1];
                let (t1, a1) = pts[i];
                a0 + (a1 - a0) * (t_us - t0) / (t1 - t0)
            }
        }
    }
}

/// Firmware loop state: encoder, contact detector and velocity estimator.
#[derive(Debug, Clone)]
pub struct DeviceSim<S> {
    config: DeviceConfig,
    source: S,
    encoder: EncoderModel,
    tick: u64,
    prev_angle: f64,
    counts: VecDeque<i64>,
    // (capture time µs, count after the edge)
    edges: VecDeque<(u64, i64)>,
    armed: bool,
    refractory_until_us: u64,
    contact_count: i64,
}

impl<S: AngleSource> DeviceSim<S> {
    pub fn new(config: DeviceConfig, source: S) -> Result<Self, DeviceError> {
        config.validate()?;
        let angle = source.angle_at(0.0);
        let count = config.count_for_angle(angle);
        let contact_count = config.contact_count();
        let mut counts = VecDeque::with_capacity(config.velocity_window + 1);
        counts.push_back(count);
        Ok(Self {
            encoder: EncoderModel::at_count(config.pulses_per_rev, count),
            config,
            source,
            tick: 0,
            prev_angle: angle,
            counts,
            edges: VecDeque::new(),
            armed: count < contact_count,
            refractory_until_us: 0,
            contact_count,
        })
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    pub fn encoder(&self) -> &EncoderModel {
        &self.encoder
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    pub fn source_mut(&mut self) -> &mut S {
        &mut self.source
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn now_us(&self) -> u64 {
        self.config.tick_time_us(self.tick)
    }

    /// Advances one tick and reports a contact if the tip reached the cube.
    pub fn step(&mut self) -> Option<ContactEvent> {
        let prev_t = self.now_us();
        self.tick += 1;
        let now = self.now_us();
        let angle = self.source.angle_at(now as f64);
        self.feed_edges(prev_t, now, angle);
        self.prev_angle = angle;

        let count = self.encoder.count();
        if self.counts.len() > self.config.velocity_window {
            self.counts.pop_front();
        }
        self.counts.push_back(count);
        let window_start = now.saturating_sub(self.config.velocity_window as u64 * self.period_us());
        while self.edges.front().is_some_and(|&(t, _)| t <= window_start) {
            self.edges.pop_front();
        }

        if !self.armed && count <= self.contact_count - self.config.hysteresis_counts {
            self.armed = true;
        }
        if self.armed && count >= self.contact_count {
            self.armed = false;
            if now >= self.refractory_until_us {
                self.refractory_until_us = now + self.config.refractory_us;
                return Some(ContactEvent {
                    timestamp_us: now,
                    velocity: self.current_velocity(),
                    tick_index: self.tick,
                });
            }
        }
        None
    }

    /// Steps until simulated time reaches `t_us`, collecting contacts.
    pub fn run_until(&mut self, t_us: u64) -> Vec<ContactEvent> {
        let mut events = Vec::new();
        while self.now_us() < t_us {
            events.extend(self.step());
        }
        events
    }

    /// Steps until the next contact or until `deadline_us`.
    pub fn run_until_contact(&mut self, deadline_us: u64) -> Option<ContactEvent> {
        while self.now_us() < deadline_us {
            if let Some(ev) = self.step() {
                return Some(ev);
            }
        }
        None
    }

    /// Tip speed over the last window. Uses edge capture times when at
    /// least two edges fall inside the window, else the tick-count span.
    pub fn current_velocity(&self) -> f64 {
        let r = self.config.geometry.arm_length;
        let cpr = f64::from(self.config.counts_per_rev());
        if let (Some(&(t0, c0)), Some(&(t1, c1))) = (self.edges.front(), self.edges.back()) {
            if t1 > t0 && c1 != c0 {
                let secs = (t1 - t0) as f64 * 1e-6;
                return (c1 - c0).unsigned_abs() as f64 / cpr * TAU / secs * r;
            }
        }
        let counts: Vec<i64> = self.counts.iter().copied().collect();
        estimate_velocity(
            &counts,
            &self.config.geometry,
            self.config.counts_per_rev(),
            self.config.sample_rate,
        )
        .unwrap_or(0.0)
    }

    fn period_us(&self) -> u64 {
        1_000_000 / u64::from(self.config.sample_rate)
    }

    fn feed_edges(&mut self, prev_t: u64, now: u64, angle: f64) {
        let target = self.config.count_for_angle(angle);
        let from = self.prev_angle;
        let span = angle - from;
        let rad_per_count = TAU / f64::from(self.config.counts_per_rev());
        while self.encoder.count() != target {
            let up = target > self.encoder.count();
            let next = self.encoder.count() + if up { 1 } else { -1 };
            let boundary = if up { next } else { self.encoder.count() } as f64 * rad_per_count;
            let frac = if span != 0.0 {
                ((boundary - from) / span).clamp(0.0, 1.0)
            } else {
                1.0
            };
            let t_edge = prev_t as f64 + frac * (now - prev_t) as f64;
            // single-count steps cannot fail
            let _ = self.encoder.observe(phase_for_count(next));
            self.edges.push_back((t_edge.round() as u64, next));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_sequence_counts_up() {
        let seq = [0b00, 0b01, 0b11, 0b10, 0b00];
        let net: i32 = seq.windows(2).map(|w| i32::from(decode_quadrature(w[0], w[1]).unwrap())).sum();
        assert_eq!(net, 4);
        let net_rev: i32 = seq
            .windows(2)
            .map(|w| i32::from(decode_quadrature(w[1], w[0]).unwrap()))
            .sum();
        assert_eq!(net_rev, -4);
    }

    #[test]
    fn same_state_is_zero() {
        for ab in GRAY {
            assert_eq!(decode_quadrature(ab, ab).unwrap(), 0);
        }
    }

    #[test]
    fn two_bit_jump_is_invalid() {
        assert_eq!(
            decode_quadrature(0b00, 0b11),
            Err(DeviceError::InvalidTransition { prev: 0b00, next: 0b11 })
        );
        assert!(decode_quadrature(0b01, 0b10).is_err());
        assert_eq!(decode_quadrature(0b100, 0b00), Err(DeviceError::InvalidPhase(0b100)));
    }

    #[test]
    fn encoder_tracks_and_flags_jumps() {
        let mut enc = EncoderModel::new(2000);
        assert_eq!(enc.counts_per_rev(), 8000);
        for c in 1..=10 {
            enc.observe(phase_for_count(c)).unwrap();
        }
        assert_eq!(enc.count(), 10);
        let before = enc.count();
        assert!(enc.observe(phase_for_count(12)).is_err());
        assert_eq!(enc.count(), before);
        assert_eq!(enc.invalid_transitions(), 1);
    }

    #[test]
    fn velocity_worked_case() {
        let geom = StylusGeometry { arm_length: 0.1, contact_angle: 0.0 };
        // 11 samples span 10 ticks = 1 ms at 10 kHz
        let counts: Vec<i64> = (0..=10).map(|k| (k * 8 / 10) as i64).collect();
        let v = estimate_velocity(&counts, &geom, 8000, 10_000).unwrap();
        assert!((v - 0.628_318_530_717_958_6).abs() < 1e-12, "{v}");

        let still = estimate_velocity(&[5; 11], &geom, 8000, 10_000).unwrap();
        assert_eq!(still, 0.0);

        let long = StylusGeometry { arm_length: 0.2, ..geom };
        let v2 = estimate_velocity(&counts, &long, 8000, 10_000).unwrap();
        assert!((v2 - 2.0 * v).abs() < 1e-12);

        assert_eq!(
            estimate_velocity(&[1], &geom, 8000, 10_000),
            Err(DeviceError::InsufficientHistory { needed: 2, got: 1 })
        );
    }

    #[test]
    fn trajectory_interpolates_and_holds() {
        let traj = Trajectory::from_points([(0.0, 0.0), (100.0, 1.0), (300.0, 0.0)]).unwrap();
        assert_eq!(traj.angle_at(-5.0), 0.0);
        assert_eq!(traj.angle_at(50.0), 0.5);
        assert_eq!(traj.angle_at(200.0), 0.5);
        assert_eq!(traj.angle_at(1e9), 0.0);
        assert!(Trajectory::from_points([(0.0, 0.0), (0.0, 1.0)]).is_err());
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let csv = "t_us,angle_rad\n0,0.1\n1000, 0.2\n# comment\n2500,-0.05\n";
        let traj = Trajectory::read_csv(csv.as_bytes()).unwrap();
        assert_eq!(traj.points(), &[(0.0, 0.1), (1000.0, 0.2), (2500.0, -0.05)]);
        let mut out = Vec::new();
        traj.write_csv(&mut out).unwrap();
        assert_eq!(Trajectory::read_csv(out.as_slice()).unwrap(), traj);

        let err = Trajectory::read_csv("0,0\nabc,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DeviceError::Trajectory { line: 2, .. }), "{err:?}");
        let err = Trajectory::read_csv("0,0\n10,1\n5,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DeviceError::Trajectory { line: 3, .. }), "{err:?}");
    }

    fn approach(speed: f64, config: &DeviceConfig) -> Trajectory {
        let r = config.geometry.arm_length;
        let start = config.geometry.contact_angle - 0.05;
        let end = config.geometry.contact_angle + 0.01;
        let dur_us = (end - start) * r / speed * 1e6;
        Trajectory::from_points([(0.0, start), (5_000.0, start), (5_000.0 + dur_us, end)]).unwrap()
    }

    #[test]
    fn constant_rate_tap_gives_one_event_at_tip_speed() {
        let config = DeviceConfig::default();
        let mut sim = DeviceSim::new(config, approach(0.5, &config)).unwrap();
        let events = sim.run_until(400_000);
        assert_eq!(events.len(), 1);
        let v = events[0].velocity;
        assert!((v - 0.5).abs() / 0.5 < 0.02, "{v}");
        assert_eq!(sim.encoder().invalid_transitions(), 0);
    }

    #[test]
    fn never_reaching_face_gives_no_events() {
        let config = DeviceConfig::default();
        let below = config.geometry.contact_angle - 0.01;
        let traj = Trajectory::from_points([(0.0, -0.2), (50_000.0, below), (90_000.0, -0.1)]).unwrap();
        let mut sim = DeviceSim::new(config, traj).unwrap();
        assert!(sim.run_until(200_000).is_empty());
    }

    #[test]
    fn refractory_suppresses_bounce() {
        let config = DeviceConfig::default();
        let c = config.geometry.contact_angle;
        // bounce 10 ms after the first contact, then a real tap 200 ms later
        let traj = Trajectory::from_points([
            (0.0, c - 0.05),
            (10_000.0, c + 0.005),
            (15_000.0, c - 0.01),
            (20_000.0, c + 0.005),
            (100_000.0, c + 0.005),
            (130_000.0, c - 0.05),
            (200_000.0, c - 0.05),
            (220_000.0, c + 0.005),
        ])
        .unwrap();
        let mut sim = DeviceSim::new(config, traj).unwrap();
        let events = sim.run_until(300_000);
        assert_eq!(events.len(), 2, "{events:?}");
        assert!(events[1].timestamp_us - events[0].timestamp_us >= config.refractory_us);
    }

    #[test]
    fn resting_on_face_does_not_chatter() {
        let config = DeviceConfig::default();
        let face = config.contact_count() as f64 * TAU / 8000.0;
        let one = TAU / 8000.0;
        // dither by one count around the face after contact
        let mut pts = vec![(0.0, face - 0.02), (10_000.0, face + 0.2 * one)];
        for k in 0..40 {
            let a = if k % 2 == 0 { face - 0.8 * one } else { face + 0.2 * one };
            pts.push((20_000.0 + 20_000.0 * f64::from(k), a));
        }
        let mut sim = DeviceSim::new(config, Trajectory::from_points(pts).unwrap()).unwrap();
        assert_eq!(sim.run_until(900_000).len(), 1);
    }

    #[test]
    fn config_validation() {
        let mut cfg = DeviceConfig::default();
        cfg.geometry.arm_length = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = DeviceConfig { sample_rate: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = DeviceConfig { velocity_window: 0, ..Default::default() };
        assert!(DeviceSim::new(cfg, |_t: f64| 0.0).is_err());
    }
}
