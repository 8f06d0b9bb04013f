//! Append-only NDJSON event logs, one file per session.
//!
//! Every observation is written as an `observed` line immediately followed
//! by the `estimator_refit` line it produced, in a single write followed by
//! `fsync`. On load, a torn final line or an `observed` event without its
//! refit is cut off and the file truncated to the last complete pair.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use wynn_core::adaptive::{adaptive_init, AdaptiveState, EstimatorConfig};
use wynn_core::{format, ModelSpec, ModelSpecDocument};

use crate::error::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    Created {
        spec: ModelSpecDocument,
        start: Vec<usize>,
        estimator: EstimatorConfig,
        theta_seed: Option<Vec<f64>>,
    },
    Observed {
        index: usize,
        y: f64,
        /// Milliseconds since the Unix epoch.
        timestamp: u64,
    },
    EstimatorRefit {
        theta_hat: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

impl SessionEvent {
    pub fn to_line(&self) -> String {
        let mut s = format::to_string(self).expect("event serializes");
        s.push('\n');
        s
    }
}

/// Rebuilds the state from an event list, checking sequence numbers and
/// that every refit reproduces the logged estimate bit for bit.
pub fn replay(events: &[SessionEvent]) -> Result<AdaptiveState, ServiceError> {
    let corrupt = |msg: String| ServiceError::Corrupt(msg);
    for (i, e) in events.iter().enumerate() {
        if e.seq != i as u64 {
            return Err(corrupt(format!("event {i} has seq {}", e.seq)));
        }
    }
    let Some(first) = events.first() else {
        return Err(corrupt("empty event log".into()));
    };
    let Event::Created {
        spec,
        start,
        estimator,
        theta_seed,
    } = &first.event
    else {
        return Err(corrupt("first event is not `created`".into()));
    };
    let spec = Arc::new(ModelSpec::new(spec.clone())?);
    let mut state = adaptive_init(
        spec,
        start,
        estimator.clone(),
        theta_seed.clone().map(DVector::from_vec),
    )?;
    let rest = &events[1..];
    if !rest.len().is_multiple_of(2) {
        return Err(corrupt("unpaired observation at end of log".into()));
    }
    for pair in rest.chunks(2) {
        let (Event::Observed { index, y, .. }, Event::EstimatorRefit { theta_hat }) = (&pair[0].event, &pair[1].event)
        else {
            return Err(corrupt(format!("events {} and {} are not an observation pair", pair[0].seq, pair[1].seq)));
        };
        state.observe(*index, *y)?;
        let same = theta_hat.len() == state.theta_hat().len()
            && theta_hat
                .iter()
                .zip(state.theta_hat().iter())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(corrupt(format!("refit at seq {} does not reproduce", pair[1].seq)));
        }
    }
    Ok(state)
}

/// Parses complete lines and returns the events of the longest valid
/// prefix together with its byte length.
pub fn parse_prefix(bytes: &[u8]) -> (Vec<SessionEvent>, usize) {
    let mut events = Vec::new();
    let mut ends = Vec::new();
    let mut pos = 0;
    while let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') {
        let line = &bytes[pos..pos + nl];
        match serde_json::from_slice::<SessionEvent>(line) {
            Ok(e) if e.seq == events.len() as u64 => {
                events.push(e);
                pos += nl + 1;
                ends.push(pos);
            }
            _ => break,
        }
    }
    // keep `created` plus whole observation pairs
    let keep = if events.is_empty() {
        0
    } else {
        1 + (events.len() - 1) / 2 * 2
    };
    events.truncate(keep);
    let len = if keep == 0 { 0 } else { ends[keep - 1] };
    (events, len)
}

pub fn now_millis() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

impl EventLog {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Creates a new log holding only the `created` event.
    pub fn create(path: PathBuf, created: Event) -> Result<Self, ServiceError> {
        let mut file = OpenOptions::new().write(true).create_new(true).open(&path)?;
        let line = SessionEvent { seq: 0, event: created }.to_line();
        file.write_all(line.as_bytes())?;
        file.sync_all()?;
        if let Some(dir) = path.parent() {
            sync_dir(dir);
        }
        Ok(Self { path, file, next_seq: 1 })
    }

    /// Opens an existing log, repairing a torn tail, and replays it.
    pub fn open(path: PathBuf) -> Result<(Self, Vec<SessionEvent>, AdaptiveState), ServiceError> {
        let mut bytes = Vec::new();
        File::open(&path)?.read_to_end(&mut bytes)?;
        let (events, valid) = parse_prefix(&bytes);
        let state = replay(&events)?;
        let file = OpenOptions::new().write(true).open(&path)?;
        if valid < bytes.len() {
            tracing::warn!(path = %path.display(), dropped = bytes.len() - valid, "truncating torn event log tail");
            file.set_len(valid as u64)?;
            file.sync_all()?;
        }
        let mut log = Self {
            path,
            file,
            next_seq: events.len() as u64,
        };
        log.seek_end()?;
        Ok((log, events, state))
    }

    fn seek_end(&mut self) -> std::io::Result<()> {
        use std::io::Seek;
        self.file.seek(std::io::SeekFrom::End(0)).map(|_| ())
    }

    /// Appends an observation and its refit in one write, then syncs.
    pub fn append_pair(&mut self, index: usize, y: f64, theta_hat: &[f64]) -> Result<[SessionEvent; 2], ServiceError> {
        let observed = SessionEvent {
            seq: self.next_seq,
            event: Event::Observed {
                index,
                y,
                timestamp: now_millis(),
            },
        };
        let refit = SessionEvent {
            seq: self.next_seq + 1,
            event: Event::EstimatorRefit {
                theta_hat: theta_hat.to_vec(),
            },
        };
        let mut buf = observed.to_line();
        buf.push_str(&refit.to_line());
        if let Err(e) = self.file.write_all(buf.as_bytes()).and_then(|_| self.file.sync_data()) {
            // leave the file as it was so the in-memory state stays authoritative
            let _ = self.repair();
            return Err(e.into());
        }
        self.next_seq += 2;
        Ok([observed, refit])
    }

    fn repair(&mut self) -> std::io::Result<()> {
        let bytes = fs::read(&self.path)?;
        let (_, valid) = parse_prefix(&bytes);
        self.file.set_len(valid as u64)?;
        self.seek_end()
    }

    pub fn remove(self) -> std::io::Result<()> {
        drop(self.file);
        fs::remove_file(&self.path)
    }
}

fn sync_dir(dir: &Path) {
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_json_shape() {
        let e = SessionEvent {
            seq: 3,
            event: Event::Observed {
                index: 2,
                y: 0.1,
                timestamp: 7,
            },
        };
        let line = e.to_line();
        assert_eq!(
            line,
            "{\"seq\":3,\"kind\":\"observed\",\"payload\":{\"index\":2,\"y\":0.10000000000000001,\"timestamp\":7}}\n"
        );
        let back: SessionEvent = serde_json::from_str(line.trim_end()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn prefix_drops_torn_and_unpaired() {
        let created = SessionEvent {
            seq: 0,
            event: Event::EstimatorRefit { theta_hat: vec![] },
        };
        let obs = SessionEvent {
            seq: 1,
            event: Event::Observed {
                index: 0,
                y: 1.0,
                timestamp: 0,
            },
        };
        let a = created.to_line();
        let b = obs.to_line();
        let (ev, len) = parse_prefix(format!("{a}{b}").as_bytes());
        assert_eq!(ev.len(), 1);
        assert_eq!(len, a.len());
        let (ev, len) = parse_prefix(format!("{a}{}", &b[..5]).as_bytes());
        assert_eq!((ev.len(), len), (1, a.len()));
        assert_eq!(parse_prefix(b"").1, 0);
    }
}
