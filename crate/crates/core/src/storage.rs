//! Session logs, waveform export, material files and offline analysis.
//!
//! Logs are JSONL: one record per line with keys `seq`, `t_us`, `kind` and
//! `payload`. Sequence numbers start at 1 and increase by one, so a dropped
//! or reordered line is detected on read.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::ContactEvent;
use crate::protocol::{summarize, Block, Response, RtPolicy, SessionConfig, SessionSummary, Trial};
use crate::protocol::ProtocolError;
use crate::signal::{Material, MaterialParams, MaterialTable, SignalError, WaveformBuffer};

/// Current material file schema version.
pub const MATERIALS_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("corrupt log at record {record}: {reason}")]
    CorruptLog { record: usize, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Stream(#[from] io::Error),
    #[error("material file: {0}")]
    Materials(String),
    #[error("cannot write an empty waveform")]
    EmptyWaveform,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

impl StorageError {
    fn io(path: &Path, source: io::Error) -> Self {
        StorageError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TactileStimulus {
    pub material: Material,
    pub velocity: f64,
}

/// Log entry payloads, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Event {
    SessionStart {
        config: SessionConfig,
    },
    TrialStart {
        trial: usize,
        block: Block,
        visual: Material,
        tactile: Option<Material>,
    },
    Contact {
        trial: usize,
        contact: ContactEvent,
    },
    Stimulus {
        trial: usize,
        onset_us: u64,
        texture: Material,
        tactile: Option<TactileStimulus>,
    },
    Response {
        trial: usize,
        key: Material,
        timestamp_us: u64,
    },
    TrialResult {
        trial: usize,
        rt_ms: f64,
        correct: bool,
    },
    BlockEnd {
        block: Block,
    },
    SessionEnd {
        summary: Option<SessionSummary>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub t_us: u64,
    #[serde(flatten)]
    pub event: Event,
}

/// Append-only record sequence with monotone `seq` and `t_us`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    records: Vec<EventRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an event. Timestamps earlier than the last record are raised
    /// to it so the log stays non-decreasing.
    pub fn push(&mut self, t_us: u64, event: Event) -> u64 {
        let seq = self.records.len() as u64 + 1;
        let t_us = self.records.last().map_or(t_us, |r| r.t_us.max(t_us));
        self.records.push(EventRecord { seq, t_us, event });
        seq
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<EventRecord> {
        self.records
    }

    /// Keeps only the first `n` records.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            records: self.records[..n.min(self.records.len())].to_vec(),
        }
    }

    /// Validates a record sequence read from elsewhere.
    pub fn from_records(records: Vec<EventRecord>) -> Result<Self, StorageError> {
        check_sequence(&records)?;
        Ok(Self { records })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = Vec::new();
        write_log(&self.records, &mut out).expect("writing to memory");
        String::from_utf8(out).expect("serde_json emits UTF-8")
    }
}

fn check_sequence(records: &[EventRecord]) -> Result<(), StorageError> {
    let mut last_t = 0;
    for (i, rec) in records.iter().enumerate() {
        let expected = i as u64 + 1;
        if rec.seq != expected {
            return Err(StorageError::CorruptLog {
                record: i + 1,
                reason: format!("expected seq {expected}, found {}", rec.seq),
            });
        }
        if rec.t_us < last_t {
            return Err(StorageError::CorruptLog {
                record: i + 1,
                reason: format!("timestamp {} before {last_t}", rec.t_us),
            });
        }
        last_t = rec.t_us;
    }
    Ok(())
}

/// Writes one JSON object per line, `\n` terminated.
pub fn write_log<W: Write>(records: &[EventRecord], mut writer: W) -> Result<(), StorageError> {
    for rec in records {
        serde_json::to_writer(&mut writer, rec).map_err(|e| StorageError::Stream(e.into()))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_log<R: Read>(reader: R) -> Result<Vec<EventRecord>, StorageError> {
    let mut records = Vec::new();
    let mut lines = BufReader::new(reader).lines().enumerate().peekable();
    while let Some((i, line)) = lines.next() {
        let line = line?;
        if line.is_empty() && lines.peek().is_none() {
            break;
        }
        let rec: EventRecord =
            serde_json::from_str(&line).map_err(|source| StorageError::Parse { line: i + 1, source })?;
        records.push(rec);
    }
    check_sequence(&records)?;
    Ok(records)
}

pub fn write_log_file(records: &[EventRecord], path: &Path) -> Result<(), StorageError> {
    let file = File::create(path).map_err(|e| StorageError::io(path, e))?;
    write_log(records, BufWriter::new(file)).map_err(|e| match e {
        StorageError::Stream(source) => StorageError::io(path, source),
        other => other,
    })
}

pub fn read_log_file(path: &Path) -> Result<Vec<EventRecord>, StorageError> {
    let file = File::open(path).map_err(|e| StorageError::io(path, e))?;
    read_log(file).map_err(|e| match e {
        StorageError::Stream(source) => StorageError::io(path, source),
        other => other,
    })
}

/// Trials and settings recovered from a log.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub config: Option<SessionConfig>,
    pub trials: Vec<Trial>,
    pub complete: bool,
}

/// Rebuilds trial state from a record sequence.
pub fn reconstruct(records: &[EventRecord]) -> Result<Reconstruction, StorageError> {
    let mut out = Reconstruction {
        config: None,
        trials: Vec::new(),
        complete: false,
    };
    for (i, rec) in records.iter().enumerate() {
        let unknown = |trial: usize| StorageError::CorruptLog {
            record: i + 1,
            reason: format!("event for trial {trial} before its TrialStart"),
        };
        match &rec.event {
            Event::SessionStart { config } => out.config = Some(config.clone()),
            Event::TrialStart {
                trial,
                block,
                visual,
                tactile,
            } => {
                let mut t = Trial::pending(*trial, *block, *visual);
                t.tactile_material = *tactile;
                out.trials.push(t);
            }
            Event::Contact { trial, contact } => {
                find(&mut out.trials, *trial).ok_or_else(|| unknown(*trial))?.contact = Some(*contact);
            }
            Event::Stimulus { trial, onset_us, .. } => {
                find(&mut out.trials, *trial).ok_or_else(|| unknown(*trial))?.stimulus_onset_us = Some(*onset_us);
            }
            Event::Response {
                trial,
                key,
                timestamp_us,
            } => {
                find(&mut out.trials, *trial).ok_or_else(|| unknown(*trial))?.response = Some(Response {
                    material: *key,
                    timestamp_us: *timestamp_us,
                });
            }
            Event::TrialResult { trial, rt_ms, correct } => {
                let t = find(&mut out.trials, *trial).ok_or_else(|| unknown(*trial))?;
                t.rt_ms = Some(*rt_ms);
                t.correct = Some(*correct);
            }
            Event::BlockEnd { .. } => {}
            Event::SessionEnd { .. } => out.complete = true,
        }
    }
    Ok(out)
}

fn find(trials: &mut [Trial], index: usize) -> Option<&mut Trial> {
    trials.iter_mut().rev().find(|t| t.index == index)
}

/// Recomputes the session summary from records. Logs without a
/// `SessionEnd` are summarized over what they contain and flagged partial.
pub fn analyze_records(records: &[EventRecord]) -> Result<SessionSummary, StorageError> {
    let rec = reconstruct(records)?;
    let policy = rec.config.as_ref().map_or(RtPolicy::default(), |c| c.rt_policy);
    let mut summary = summarize(&rec.trials, policy)?;
    summary.partial = !rec.complete;
    Ok(summary)
}

pub fn analyze<R: Read>(reader: R) -> Result<SessionSummary, StorageError> {
    analyze_records(&read_log(reader)?)
}

pub fn analyze_file(path: &Path) -> Result<SessionSummary, StorageError> {
    analyze_records(&read_log_file(path)?)
}

/// 16-bit PCM value for a normalized sample.
pub fn pcm16(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

/// Encodes a mono 16-bit little-endian PCM RIFF/WAVE stream.
pub fn encode_wav<W: Write>(buffer: &WaveformBuffer, mut writer: W) -> io::Result<()> {
    let data_len = u32::try_from(buffer.samples.len() * 2)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "waveform too long for WAV"))?;
    let rate = buffer.sample_rate;
    let mut header = Vec::with_capacity(44);
    header.extend_from_slice(b"RIFF");
    header.extend_from_slice(&(36 + data_len).to_le_bytes());
    header.extend_from_slice(b"WAVE");
    header.extend_from_slice(b"fmt ");
    header.extend_from_slice(&16u32.to_le_bytes());
    header.extend_from_slice(&1u16.to_le_bytes()); // PCM
    header.extend_from_slice(&1u16.to_le_bytes()); // mono
    header.extend_from_slice(&rate.to_le_bytes());
    header.extend_from_slice(&(rate * 2).to_le_bytes());
    header.extend_from_slice(&2u16.to_le_bytes());
    header.extend_from_slice(&16u16.to_le_bytes());
    header.extend_from_slice(b"data");
    header.extend_from_slice(&data_len.to_le_bytes());
    writer.write_all(&header)?;
    let mut data = Vec::with_capacity(data_len as usize);
    for &x in &buffer.samples {
        data.extend_from_slice(&pcm16(x).to_le_bytes());
    }
    writer.write_all(&data)?;
    writer.flush()
}

pub fn write_wav(buffer: &WaveformBuffer, path: &Path) -> Result<(), StorageError> {
    if buffer.is_empty() {
        return Err(StorageError::EmptyWaveform);
    }
    let file = File::create(path).map_err(|e| StorageError::io(path, e))?;
    encode_wav(buffer, BufWriter::new(file)).map_err(|e| StorageError::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsEntry {
    #[serde(rename = "A")]
    a: f64,
    #[serde(rename = "B")]
    b: f64,
    f: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialsFile {
    schema: u32,
    rubber: ParamsEntry,
    aluminum: ParamsEntry,
}

fn entry_params(material: Material, e: &ParamsEntry) -> Result<MaterialParams, StorageError> {
    MaterialParams::new(material, e.a, e.b, e.f).map_err(|err: SignalError| StorageError::Materials(format!("{material}: {err}")))
}

/// Parses a `materials.json` document.
pub fn parse_materials(json: &str) -> Result<MaterialTable, StorageError> {
    let file: MaterialsFile = serde_json::from_str(json).map_err(|e| StorageError::Materials(e.to_string()))?;
    if file.schema != MATERIALS_SCHEMA {
        return Err(StorageError::Materials(format!(
            "unsupported schema {} (expected {MATERIALS_SCHEMA})",
            file.schema
        )));
    }
    Ok(MaterialTable {
        rubber: entry_params(Material::Rubber, &file.rubber)?,
        aluminum: entry_params(Material::Aluminum, &file.aluminum)?,
    })
}

pub fn materials_to_json(table: &MaterialTable) -> String {
    let entry = |p: &MaterialParams| ParamsEntry {
        a: p.amplitude_coeff,
        b: p.decay_rate,
        f: p.frequency,
    };
    let file = MaterialsFile {
        schema: MATERIALS_SCHEMA,
        rubber: entry(&table.rubber),
        aluminum: entry(&table.aluminum),
    };
    serde_json::to_string_pretty(&file).expect("material table serializes")
}

pub fn load_materials(path: &Path) -> Result<MaterialTable, StorageError> {
    let text = std::fs::read_to_string(path).map_err(|e| StorageError::io(path, e))?;
    parse_materials(&text)
}
