use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::WorkloadError;
use crate::path::VfsPath;
use crate::vfs::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Stat,
    Open,
    Mkdir,
    Create,
    Rename,
    Chmod,
}

/// One line of a JSON Lines trace, as stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    pub op: Op,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_path: Option<String>,
    /// Octal permission bits, e.g. `"0755"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    pub at_ms: u64,
}

/// A checked trace event with parsed paths and mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub op: Op,
    pub path: VfsPath,
    pub new_path: Option<VfsPath>,
    pub mode: Option<Mode>,
    pub at_ms: u64,
}

impl TraceEvent {
    pub fn check(&self) -> Result<Event, String> {
        let path = normalized(&self.path)?;
        let new_path = match (&self.new_path, self.op) {
            (Some(p), Op::Rename) => Some(normalized(p)?),
            (None, Op::Rename) => return Err("rename needs new_path".into()),
            (Some(_), _) => return Err("new_path is only valid for rename".into()),
            (None, _) => None,
        };
        let mode = match &self.mode {
            Some(m) => Some(Mode::parse_octal(m).ok_or_else(|| format!("bad mode `{m}`"))?),
            None if self.op == Op::Chmod => return Err("chmod needs mode".into()),
            None => None,
        };
        if mode.is_some() && !matches!(self.op, Op::Chmod | Op::Create | Op::Mkdir) {
            return Err("mode is only valid for chmod, create and mkdir".into());
        }
        Ok(Event {
            op: self.op,
            path,
            new_path,
            mode,
            at_ms: self.at_ms,
        })
    }
}

impl From<&Event> for TraceEvent {
    fn from(e: &Event) -> Self {
        TraceEvent {
            op: e.op,
            path: e.path.to_string(),
            new_path: e.new_path.as_ref().map(|p| p.to_string()),
            mode: e.mode.map(|m| m.to_string()),
            at_ms: e.at_ms,
        }
    }
}

fn normalized(s: &str) -> Result<VfsPath, String> {
    let p = VfsPath::parse(s).map_err(|e| format!("`{s}`: {e}"))?;
    if p.as_str() != s {
        return Err(format!("`{s}` is not normalized"));
    }
    Ok(p)
}

/// Reads a JSON Lines trace. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_trace<R: BufRead>(reader: R) -> Result<Vec<Event>, WorkloadError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| WorkloadError::TraceMalformed { line: i + 1, reason };
        let raw: TraceEvent = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        events.push(raw.check().map_err(malformed)?);
    }
    Ok(events)
}

pub fn write_trace<W: Write>(mut out: W, events: &[Event]) -> Result<(), WorkloadError> {
    for e in events {
        serde_json::to_writer(&mut out, &TraceEvent::from(e)).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
