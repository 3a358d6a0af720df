use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::model::Process;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub node: usize,
    pub tag: Process,
}

/// Time-ordered events observed on the window `[t_start, t_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    t_start: f64,
    t_end: f64,
    events: Vec<Event>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    t_start: f64,
    t_end: f64,
}

impl EventLog {
    pub fn empty(t_start: f64, t_end: f64) -> Self {
        assert!(t_start <= t_end, "window must be ordered");
        Self { t_start, t_end, events: Vec::new() }
    }

    /// Builds a log, validating ordering, window membership and node range.
    pub fn from_events(t_start: f64, t_end: f64, n: usize, events: Vec<Event>) -> Result<Self> {
        if !(t_start <= t_end) {
            return Err(Error::Domain("window start exceeds end".into()));
        }
        let mut prev = t_start;
        for e in &events {
            if !(e.t >= t_start && e.t <= t_end) {
                return Err(Error::Domain(format!("event at {} outside window", e.t)));
            }
            if e.t < prev {
                return Err(Error::Domain("events must be nondecreasing in time".into()));
            }
            if e.node >= n {
                return Err(Error::Domain(format!("node {} out of range", e.node)));
            }
            prev = e.t;
        }
        Ok(Self { t_start, t_end, events })
    }

    pub(crate) fn push_unchecked(&mut self, event: Event) {
        self.events.push(event);
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn tagged(&self, tag: Process) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.tag == tag)
    }

    /// Per-node event counts for one process, `N_i(t_end) - N_i(t_start)`.
    pub fn counts(&self, n: usize, tag: Process) -> Vec<u64> {
        let mut c = vec![0u64; n];
        for e in self.tagged(tag) {
            c[e.node] += 1;
        }
        c
    }

    /// Per-node counts of events with `t` in `[from, to)`.
    pub fn counts_between(&self, n: usize, tag: Process, from: f64, to: f64) -> Vec<u64> {
        let mut c = vec![0u64; n];
        for e in self.tagged(tag).filter(|e| e.t >= from && e.t < to) {
            c[e.node] += 1;
        }
        c
    }

    /// Concatenates two adjacent logs.
    pub fn append(&self, next: &EventLog) -> Result<EventLog> {
        if next.t_start != self.t_end {
            return Err(Error::Domain("logs are not adjacent".into()));
        }
        let mut events = self.events.clone();
        events.extend_from_slice(&next.events);
        Ok(EventLog { t_start: self.t_start, t_end: next.t_end, events })
    }

    /// JSON Lines: a header `{"t_start","t_end"}` followed by one event per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &Header { t_start: self.t_start, t_end: self.t_end })?;
        w.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R, n: usize) -> Result<Self> {
        let mut lines = r.lines();
        let header: Header = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::Domain("missing header record".into())),
        };
        let mut events = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line)?);
        }
        Self::from_events(header.t_start, header.t_end, n, events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EventLog {
        EventLog::from_events(
            0.0,
            2.0,
            3,
            vec![
                Event { t: 0.25, node: 2, tag: Process::Fake },
                Event { t: 0.5, node: 0, tag: Process::Mitigation },
                Event { t: 1.5, node: 2, tag: Process::Fake },
            ],
        )
        .unwrap()
    }

    #[test]
    fn jsonl_schema() {
        let mut buf = Vec::new();
        sample().write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], r#"{"t_start":0.0,"t_end":2.0}"#);
        assert_eq!(lines[1], r#"{"t":0.25,"node":2,"tag":"F"}"#);
        let back = EventLog::read_jsonl(buf.as_slice(), 3).unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn counts_per_tag() {
        let log = sample();
        assert_eq!(log.counts(3, Process::Fake), vec![0, 0, 2]);
        assert_eq!(log.counts(3, Process::Mitigation), vec![1, 0, 0]);
        assert_eq!(log.counts_between(3, Process::Fake, 1.0, 2.0), vec![0, 0, 1]);
    }

    #[test]
    fn rejects_invalid_events() {
        let e = |t, node| Event { t, node, tag: Process::Fake };
        assert!(EventLog::from_events(0.0, 1.0, 2, vec![e(1.5, 0)]).is_err());
        assert!(EventLog::from_events(0.0, 1.0, 2, vec![e(0.5, 0), e(0.2, 1)]).is_err());
        assert!(EventLog::from_events(0.0, 1.0, 2, vec![e(0.5, 2)]).is_err());
    }
}
