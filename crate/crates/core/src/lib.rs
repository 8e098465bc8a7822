//! Visuo-tactile Stroop tapping experiments in software.
//!
//! A stylus taps a cube; at contact the cube's texture appears and a decaying
//! sinusoidal vibration for one of two materials plays through the stylus.
//! The participant names the material they *see*. When the felt material
//! conflicts with the seen one, answers slow down, and the session reports
//! that slowdown as the difference of mean reaction times.
//!
//! Modules:
//!
//! - [`signal`]: transient synthesis, 12-bit DAC quantization, masking noise
//! - [`device`]: 10 kHz stylus firmware loop with quadrature decoding,
//!   contact detection and tip-speed estimation
//! - [`protocol`]: schedule construction and the trial state machine
//! - [`participant`]: a synthetic responder and full simulated sessions
//! - [`storage`]: JSONL session logs, WAV export, material files, analysis
//! - [`service`]: the transport-agnostic session host spoken to by the
//!   browser frontend, plus clock calibration
//!
//! Runnable walkthroughs live in `examples/`.

pub mod device;
pub mod participant;
pub mod protocol;
pub mod service;
pub mod signal;
pub mod storage;

pub use device::{ContactEvent, DeviceConfig, DeviceSim, StylusGeometry, Trajectory};
pub use participant::{run_simulated_session, ResponderModel, SessionRun, TapProfile};
pub use protocol::{build_schedule, summarize, Block, SessionConfig, SessionEngine, SessionSummary, Trial};
pub use signal::{render_transient, synth_sample, Material, MaterialParams, MaterialTable, SynthesisConfig, WaveformBuffer};
pub use storage::{analyze, read_log, write_log, write_wav, Event, EventLog, EventRecord};
