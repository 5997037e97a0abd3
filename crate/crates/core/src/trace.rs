//! Line-oriented run trace: `time,entity,event_kind,subject_id,detail`.
//!
//! Times are written with Rust's shortest round-trip float formatting, so a
//! trace parses back to the exact values that produced it.

use std::cell::RefCell;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::rc::Rc;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::des::SimTime;

pub const HEADER: &str = "time,entity,event_kind,subject_id,detail";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub time: f64,
    pub entity: String,
    pub kind: String,
    pub subject: String,
    /// `key=value` pairs joined by `;`.
    pub detail: String,
}

impl TraceRecord {
    /// Value of `key` in the detail field.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.detail.split(';').find_map(|kv| {
            let (k, v) = kv.split_once('=')?;
            (k == key).then_some(v)
        })
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{}",
            self.time, self.entity, self.kind, self.subject, self.detail
        )
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("trace line {line}: {reason}")]
pub struct TraceParseError {
    pub line: usize,
    pub reason: String,
}

impl FromStr for TraceRecord {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.splitn(5, ',');
        let mut next = |what: &str| parts.next().ok_or_else(|| format!("missing {what}"));
        let time = next("time")?;
        let time: f64 = time.parse().map_err(|_| format!("bad time {time:?}"))?;
        Ok(TraceRecord {
            time,
            entity: next("entity")?.to_string(),
            kind: next("event_kind")?.to_string(),
            subject: next("subject_id")?.to_string(),
            detail: next("detail")?.to_string(),
        })
    }
}

/// Builds a detail string from key/value pairs.
pub fn detail<I, K, V>(pairs: I) -> String
where
    I: IntoIterator<Item = (K, V)>,
    K: fmt::Display,
    V: fmt::Display,
{
    pairs
        .into_iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Shared append-only record buffer handed to every entity of a run.
#[derive(Debug, Clone, Default)]
pub struct TraceSink(Rc<RefCell<Vec<TraceRecord>>>);

impl TraceSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(
        &self,
        time: SimTime,
        entity: impl Into<String>,
        kind: &str,
        subject: impl Into<String>,
        detail: impl Into<String>,
    ) {
        self.0.borrow_mut().push(TraceRecord {
            time: time.as_secs(),
            entity: entity.into(),
            kind: kind.to_string(),
            subject: subject.into(),
            detail: detail.into(),
        });
    }

    pub fn len(&self) -> usize {
        self.0.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.borrow().is_empty()
    }

    pub fn snapshot(&self) -> Vec<TraceRecord> {
        self.0.borrow().clone()
    }
}

pub fn write_csv<W: Write>(records: &[TraceRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{HEADER}")?;
    for r in records {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

pub fn to_csv_string(records: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_csv(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("trace is UTF-8")
}

pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<TraceRecord>, TraceParseError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| TraceParseError {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if (i == 0 && line == HEADER) || line.is_empty() {
            continue;
        }
        out.push(line.parse().map_err(|reason| TraceParseError { line: i + 1, reason })?);
    }
    Ok(out)
}
