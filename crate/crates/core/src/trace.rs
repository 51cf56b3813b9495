//! Task lifecycle events and their CSV form (`seq,worker_id,task_id,kind`).

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 4] = ["seq", "worker_id", "task_id", "kind"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Created,
    ExecStart,
    ExecEnd,
    Erased,
    SkipDependent,
    SkipBusy,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::Created,
        EventKind::ExecStart,
        EventKind::ExecEnd,
        EventKind::Erased,
        EventKind::SkipDependent,
        EventKind::SkipBusy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Created => "Created",
            EventKind::ExecStart => "ExecStart",
            EventKind::ExecEnd => "ExecEnd",
            EventKind::Erased => "Erased",
            EventKind::SkipDependent => "SkipDependent",
            EventKind::SkipBusy => "SkipBusy",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown event kind `{s}`"))
    }
}

/// One lifecycle event. `seq` comes from a global atomic counter, so the
/// order of two events in `seq` is consistent with happens-before.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub seq: u64,
    pub worker_id: u32,
    pub task_id: u64,
    pub kind: EventKind,
}

pub fn write_csv<W: Write>(events: &[TraceEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for e in events {
        w.write_record([
            e.seq.to_string(),
            e.worker_id.to_string(),
            e.task_id.to_string(),
            e.kind.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a trace, with or without the header line. Malformed records are
/// reported with their 1-based line number.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<TraceEvent>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut events = Vec::new();
    for (idx, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::TraceParse {
            line: e.position().map_or(idx as u64 + 1, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(idx as u64 + 1, |p| p.line());
        if idx == 0 && rec.iter().eq(TRACE_HEADER) {
            continue;
        }
        let bad = |message: String| Error::TraceParse { line, message };
        if rec.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", rec.len())));
        }
        let seq = rec[0]
            .trim()
            .parse()
            .map_err(|e| bad(format!("seq `{}`: {e}", &rec[0])))?;
        let worker_id = rec[1]
            .trim()
            .parse()
            .map_err(|e| bad(format!("worker_id `{}`: {e}", &rec[1])))?;
        let task_id = rec[2]
            .trim()
            .parse()
            .map_err(|e| bad(format!("task_id `{}`: {e}", &rec[2])))?;
        let kind = rec[3].trim().parse().map_err(bad)?;
        events.push(TraceEvent {
            seq,
            worker_id,
            task_id,
            kind,
        });
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(seq: u64, task_id: u64, kind: EventKind) -> TraceEvent {
        TraceEvent {
            seq,
            worker_id: 1,
            task_id,
            kind,
        }
    }

    #[test]
    fn csv_round_trip() {
        let events: Vec<_> = EventKind::ALL
            .into_iter()
            .enumerate()
            .map(|(i, k)| ev(i as u64, 3, k))
            .collect();
        let mut buf = Vec::new();
        write_csv(&events, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("seq,worker_id,task_id,kind\n0,1,3,Created\n"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), events);
    }

    #[test]
    fn headerless_input_is_accepted() {
        let got = read_csv("4,0,2,ExecEnd\n".as_bytes()).unwrap();
        assert_eq!(
            got,
            vec![TraceEvent {
                seq: 4,
                worker_id: 0,
                task_id: 2,
                kind: EventKind::ExecEnd
            }]
        );
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let input = "seq,worker_id,task_id,kind\n0,0,0,Created\n1,0,x,ExecStart\n";
        match read_csv(input.as_bytes()) {
            Err(Error::TraceParse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("task_id"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match read_csv("0,0,0,Created\n1,0,0,Started\n".as_bytes()) {
            Err(Error::TraceParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match read_csv("0,0,0\n".as_bytes()) {
            Err(Error::TraceParse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
