//! Wire transcript: an append-only, totally ordered record of every frame
//! the simulated transport sent, delivered, or dropped. Tests assert against
//! it (message counts, concurrency peaks, absence of traffic).

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Serialize;

use crate::wire::{Message, MessageKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    Sent,
    Delivered,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptEvent {
    /// Nanoseconds of virtual time since the simulation epoch.
    pub at_ns: u64,
    pub event: EventKind,
    pub from: String,
    pub to: String,
    pub kind: MessageKind,
    pub request_id: u64,
    pub path: Option<String>,
    pub stream_index: Option<u32>,
    pub bytes: u64,
    /// Global sequence number; ties on `at_ns` are ordered by this.
    pub seq: u64,
}

#[derive(Clone, Default)]
pub struct Transcript {
    events: Arc<Mutex<Vec<TranscriptEvent>>>,
    seq: Arc<AtomicU64>,
}

impl Transcript {
    pub fn new() -> Self {
        Transcript::default()
    }

    pub fn record(
        &self,
        at: Duration,
        event: EventKind,
        from: &str,
        to: &str,
        msg: &Message,
        bytes: u64,
    ) {
        let ev = TranscriptEvent {
            at_ns: at.as_nanos() as u64,
            event,
            from: from.to_string(),
            to: to.to_string(),
            kind: msg.kind(),
            request_id: msg.request_id,
            path: msg.payload.path().map(|p| p.to_string()),
            stream_index: msg.payload.stream_index(),
            bytes,
            seq: self.seq.fetch_add(1, Ordering::Relaxed),
        };
        self.events.lock().unwrap().push(ev);
    }

    pub fn events(&self) -> Vec<TranscriptEvent> {
        self.events.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.events.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.events.lock().unwrap().clear();
    }

    /// Events matching a predicate, in transcript order.
    pub fn query(&self, pred: impl Fn(&TranscriptEvent) -> bool) -> Vec<TranscriptEvent> {
        self.events.lock().unwrap().iter().filter(|e| pred(e)).cloned().collect()
    }

    pub fn count(&self, pred: impl Fn(&TranscriptEvent) -> bool) -> usize {
        self.events.lock().unwrap().iter().filter(|e| pred(e)).count()
    }

    /// Count of `Sent` events of one message kind.
    pub fn sent_count(&self, kind: MessageKind) -> usize {
        self.count(|e| e.event == EventKind::Sent && e.kind == kind)
    }

    /// Count of `Sent` events of one kind concerning one path.
    pub fn sent_count_for_path(&self, kind: MessageKind, path: &str) -> usize {
        self.count(|e| {
            e.event == EventKind::Sent && e.kind == kind && e.path.as_deref() == Some(path)
        })
    }

    /// Total bytes by event kind, for conservation checks.
    pub fn bytes_of(&self, event: EventKind) -> u64 {
        self.events
            .lock()
            .unwrap()
            .iter()
            .filter(|e| e.event == event)
            .map(|e| e.bytes)
            .sum()
    }

    /// Peak number of concurrently outstanding fetches: windows from each
    /// FETCH_REQ send to the matching FETCH_DONE (or ERROR) delivery.
    pub fn peak_fetch_concurrency(&self) -> usize {
        let events = self.events.lock().unwrap();
        // (time, +1/-1) edges; ties resolved by transcript order, which the
        // sorted-by-(at, seq) scan preserves.
        let mut edges: Vec<(u64, u64, i32)> = Vec::new();
        for e in events.iter() {
            match (e.event, e.kind) {
                (EventKind::Sent, MessageKind::FetchReq) => edges.push((e.at_ns, e.seq, 1)),
                (EventKind::Delivered, MessageKind::FetchDone)
                | (EventKind::Delivered, MessageKind::Error) => {
                    edges.push((e.at_ns, e.seq, -1))
                }
                _ => {}
            }
        }
        edges.sort();
        let mut depth = 0i32;
        let mut peak = 0i32;
        for (_, _, d) in edges {
            depth += d;
            peak = peak.max(depth);
        }
        peak.max(0) as usize
    }

    /// Serializes every event as one JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let events = self.events.lock().unwrap();
        let mut out = String::new();
        for e in events.iter() {
            out.push_str(&serde_json::to_string(e).expect("transcript event serializes"));
            out.push('\n');
        }
        out
    }
}
