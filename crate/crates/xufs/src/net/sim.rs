//! Deterministic in-process network simulator.
//!
//! Endpoints exchange whole protocol messages over simulated full-duplex
//! links that honor a latency/bandwidth profile and can be partitioned at
//! any instant. All timing runs on the tokio clock; under a paused
//! current-thread runtime the simulation is fully deterministic and fast
//! regardless of the simulated latencies.
//!
//! Link model, per direction: every frame is serialized onto the link at
//! the profile bandwidth before propagating for one-way latency, so an
//! N-byte frame arrives no earlier than `latency + N/bandwidth` after it is
//! sent. With `per_stream` set, each stripe stream has its own queue and
//! concurrently busy streams split the bandwidth evenly, so stripes overlap
//! in time without exceeding the link's aggregate rate.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, Notify, Semaphore};
use tokio::time::Instant;

use super::transcript::{EventKind, Transcript};
use super::{Conn, ConnRx, ConnTx};
use crate::error::{Result, XufsError};
use crate::wire::Message;

/// Bytes a sender may have committed but undelivered on one link direction
/// before `send` applies backpressure. Large enough that the link never
/// starves at the profiles used in tests, small enough to bound memory on
/// multi-gigabyte transfers.
const WINDOW_BYTES: usize = 64 * 1024 * 1024;

/// Latency/bandwidth shape of the simulated WAN link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    /// One-way propagation delay in milliseconds.
    pub latency_ms: f64,
    /// Link rate in bytes per second; 0 means unlimited.
    pub bandwidth_bps: u64,
    /// Whether each stripe stream gets an independent share of the
    /// bandwidth (streams overlap) or all frames serialize through one pipe.
    pub per_stream: bool,
}

impl Default for LinkProfile {
    fn default() -> Self {
        LinkProfile { latency_ms: 0.0, bandwidth_bps: 0, per_stream: true }
    }
}

impl LinkProfile {
    pub fn latency(&self) -> Duration {
        Duration::from_nanos((self.latency_ms * 1e6) as u64)
    }

    /// Symmetric RTT/bandwidth profile helper used throughout the tests.
    pub fn wan(rtt_ms: f64, bandwidth_bps: u64) -> Self {
        LinkProfile { latency_ms: rtt_ms / 2.0, bandwidth_bps, per_stream: true }
    }
}

/// A partition window in a scripted simulation profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionWindow {
    pub start_ms: u64,
    pub end_ms: u64,
}

/// On-disk simulation profile (JSON test fixture).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SimProfileFile {
    #[serde(flatten)]
    pub link: LinkProfile,
    #[serde(default)]
    pub partitions: Vec<PartitionWindow>,
    #[serde(default)]
    pub seed: u64,
}

struct Scheduled {
    arrival: Instant,
    seq: u64,
    msg: Message,
    bytes: u64,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.arrival == other.arrival && self.seq == other.seq
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.arrival.cmp(&other.arrival).then(self.seq.cmp(&other.seq))
    }
}

struct DirState {
    /// Frames awaiting link service, one queue per stream (everything maps
    /// to stream 0 when the profile is not per-stream).
    pending: BTreeMap<u32, VecDeque<(Message, u64)>>,
    /// Round-robin service cursor over stream queues.
    rr_next: u32,
    /// The link's serialization horizon: the instant it finishes
    /// transmitting everything scheduled so far.
    link_free: Instant,
    /// Frames on the wire, ordered by arrival.
    inflight: BinaryHeap<Reverse<Scheduled>>,
    broken: bool,
    /// Sender dropped: deliver what is committed, then close.
    closing: bool,
    /// Channel into the receiving endpoint; dropping it is how the
    /// receiver observes connection loss or close.
    out_tx: Option<mpsc::UnboundedSender<Message>>,
}

/// One direction of a simulated connection.
pub(crate) struct SimDir {
    net: Arc<SimNetInner>,
    from: String,
    to: String,
    state: Mutex<DirState>,
    notify: Notify,
    window: Arc<Semaphore>,
}

impl SimDir {
    pub(crate) async fn send(&self, msg: Message) -> Result<()> {
        let bytes = msg.frame_len();
        let permits = bytes.min(WINDOW_BYTES) as u32;
        let permit = self
            .window
            .acquire_many(permits)
            .await
            .map_err(|_| XufsError::ConnectionLost)?;
        permit.forget();
        let now = Instant::now();
        let profile = *self.net.profile.lock().unwrap();
        {
            let mut st = self.state.lock().unwrap();
            if st.broken || st.closing {
                self.window.add_permits(permits as usize);
                return Err(XufsError::ConnectionLost);
            }
            let key = if profile.per_stream {
                msg.payload.stream_index().unwrap_or(0)
            } else {
                0
            };
            self.net.transcript.record(
                self.net.since_epoch(now),
                EventKind::Sent,
                &self.from,
                &self.to,
                &msg,
                bytes as u64,
            );
            st.pending.entry(key).or_default().push_back((msg, bytes as u64));
        }
        self.notify.notify_one();
        Ok(())
    }

    /// Work-conserving link service: schedules every queued frame onto the
    /// wire, one at a time at the full link rate, round-robin across stream
    /// queues. Striped streams therefore interleave in time while the
    /// aggregate rate stays exactly the link bandwidth.
    fn schedule_pending(&self, st: &mut DirState, profile: &LinkProfile) {
        let now = Instant::now();
        if st.link_free < now {
            st.link_free = now;
        }
        while !st.pending.is_empty() {
            // Next non-empty stream queue at or after the cursor, wrapping.
            let key = st
                .pending
                .range(st.rr_next..)
                .next()
                .or_else(|| st.pending.range(..).next())
                .map(|(k, _)| *k)
                .expect("non-empty pending map");
            let queue = st.pending.get_mut(&key).expect("queue exists");
            let (msg, bytes) = queue.pop_front().expect("non-empty queue");
            if queue.is_empty() {
                st.pending.remove(&key);
            }
            st.rr_next = key + 1;
            let tx_dur = if profile.bandwidth_bps == 0 {
                Duration::ZERO
            } else {
                let ns =
                    (bytes as u128) * 1_000_000_000u128 / profile.bandwidth_bps as u128;
                Duration::from_nanos(ns as u64)
            };
            let depart = st.link_free + tx_dur;
            let arrival = depart + profile.latency();
            st.link_free = depart;
            st.inflight.push(Reverse(Scheduled {
                arrival,
                seq: self.net.seq.fetch_add(1, Ordering::Relaxed),
                msg,
                bytes,
            }));
        }
    }

    fn mark_broken(&self) {
        let mut st = self.state.lock().unwrap();
        st.broken = true;
        drop(st);
        self.window.close();
        self.notify.notify_one();
    }

    fn mark_closing(&self) {
        let mut st = self.state.lock().unwrap();
        st.closing = true;
        drop(st);
        self.window.close();
        self.notify.notify_one();
    }

    pub(crate) fn is_down(&self) -> bool {
        let st = self.state.lock().unwrap();
        st.broken || st.closing
    }

    /// Delivery loop: waits for the earliest committed arrival, hands the
    /// frame to the receiver, and releases window permits. On partition it
    /// drops everything still in flight.
    async fn run_delivery(self: Arc<Self>) {
        loop {
            let deadline = {
                let mut st = self.state.lock().unwrap();
                if st.broken {
                    while let Some(Reverse(s)) = st.inflight.pop() {
                        self.net.transcript.record(
                            self.net.since_epoch(Instant::now()),
                            EventKind::Dropped,
                            &self.from,
                            &self.to,
                            &s.msg,
                            s.bytes,
                        );
                    }
                    let pending = std::mem::take(&mut st.pending);
                    for (_, queue) in pending {
                        for (msg, bytes) in queue {
                            self.net.transcript.record(
                                self.net.since_epoch(Instant::now()),
                                EventKind::Dropped,
                                &self.from,
                                &self.to,
                                &msg,
                                bytes,
                            );
                        }
                    }
                    st.out_tx = None; // receiver drains queued frames, then None
                    return;
                }
                let profile = *self.net.profile.lock().unwrap();
                self.schedule_pending(&mut st, &profile);
                let now = Instant::now();
                let mut deadline = None;
                while let Some(Reverse(top)) = st.inflight.peek() {
                    if top.arrival <= now {
                        let Reverse(s) = st.inflight.pop().unwrap();
                        self.net.transcript.record(
                            self.net.since_epoch(s.arrival),
                            EventKind::Delivered,
                            &self.from,
                            &self.to,
                            &s.msg,
                            s.bytes,
                        );
                        self.window.add_permits(s.bytes.min(WINDOW_BYTES as u64) as usize);
                        let ok = match &st.out_tx {
                            Some(tx) => tx.send(s.msg).is_ok(),
                            None => false,
                        };
                        if !ok {
                            // Receiver went away; treat like a reset.
                            st.broken = true;
                        }
                    } else {
                        deadline = Some(top.arrival);
                        break;
                    }
                }
                if st.closing && st.inflight.is_empty() && st.pending.is_empty() {
                    st.out_tx = None;
                    return;
                }
                deadline
            };
            match deadline {
                Some(d) => {
                    tokio::select! {
                        biased;
                        _ = self.notify.notified() => {}
                        _ = tokio::time::sleep_until(d) => {}
                    }
                }
                None => self.notify.notified().await,
            }
        }
    }
}

/// Closes the outgoing direction when the owning endpoint drops its handle.
pub(crate) struct SimConnGuard {
    pub(crate) outgoing: Arc<SimDir>,
}

impl Drop for SimConnGuard {
    fn drop(&mut self) {
        self.outgoing.mark_closing();
    }
}

struct ConnPair {
    a_to_b: Arc<SimDir>,
    b_to_a: Arc<SimDir>,
    host_a: String,
    host_b: String,
}

impl ConnPair {
    fn break_both(&self) {
        self.a_to_b.mark_broken();
        self.b_to_a.mark_broken();
    }

    fn involves(&self, host: &str) -> bool {
        self.host_a == host || self.host_b == host
    }
}

struct SimNetInner {
    profile: Mutex<LinkProfile>,
    partition_all: AtomicBool,
    partitioned_hosts: Mutex<BTreeSet<String>>,
    listeners: Mutex<BTreeMap<String, mpsc::UnboundedSender<Conn>>>,
    conns: Mutex<Vec<Weak<ConnPair>>>,
    transcript: Transcript,
    seq: AtomicU64,
    epoch: Instant,
    seed: u64,
}

impl SimNetInner {
    fn since_epoch(&self, t: Instant) -> Duration {
        t.saturating_duration_since(self.epoch)
    }
}

/// Handle to one simulated network. Cheap to clone.
#[derive(Clone)]
pub struct SimNet {
    inner: Arc<SimNetInner>,
}

pub struct SimListener {
    addr: String,
    rx: mpsc::UnboundedReceiver<Conn>,
}

impl SimNet {
    pub fn new(profile: LinkProfile, seed: u64) -> Self {
        SimNet {
            inner: Arc::new(SimNetInner {
                profile: Mutex::new(profile),
                partition_all: AtomicBool::new(false),
                partitioned_hosts: Mutex::new(BTreeSet::new()),
                listeners: Mutex::new(BTreeMap::new()),
                conns: Mutex::new(Vec::new()),
                transcript: Transcript::new(),
                seq: AtomicU64::new(0),
                epoch: Instant::now(),
                seed,
            }),
        }
    }

    pub fn seed(&self) -> u64 {
        self.inner.seed
    }

    pub fn transcript(&self) -> &Transcript {
        &self.inner.transcript
    }

    pub fn profile(&self) -> LinkProfile {
        *self.inner.profile.lock().unwrap()
    }

    pub fn set_profile(&self, p: LinkProfile) {
        *self.inner.profile.lock().unwrap() = p;
    }

    /// Virtual time since this network was created.
    pub fn elapsed(&self) -> Duration {
        self.inner.since_epoch(Instant::now())
    }

    pub fn listen(&self, addr: &str) -> Result<SimListener> {
        let (tx, rx) = mpsc::unbounded_channel();
        let mut listeners = self.inner.listeners.lock().unwrap();
        if let Some(existing) = listeners.get(addr) {
            if !existing.is_closed() {
                return Err(XufsError::Io(std::io::Error::new(
                    std::io::ErrorKind::AddrInUse,
                    format!("sim address {addr} already bound"),
                )));
            }
        }
        listeners.insert(addr.to_string(), tx);
        Ok(SimListener { addr: addr.to_string(), rx })
    }

    fn is_partitioned(&self, host: &str) -> bool {
        self.inner.partition_all.load(Ordering::SeqCst)
            || self.inner.partitioned_hosts.lock().unwrap().contains(host)
    }

    /// Opens a full-duplex connection from `from` to a listening address.
    pub async fn connect(&self, from: &str, addr: &str) -> Result<Conn> {
        if self.is_partitioned(from) || self.is_partitioned(addr) {
            return Err(XufsError::Unreachable(format!("{addr} (partitioned)")));
        }
        let listener_tx = {
            let listeners = self.inner.listeners.lock().unwrap();
            listeners.get(addr).cloned()
        }
        .ok_or_else(|| XufsError::Unreachable(format!("{addr} (not listening)")))?;

        let (a_out_tx, a_out_rx) = mpsc::unbounded_channel();
        let (b_out_tx, b_out_rx) = mpsc::unbounded_channel();
        let new_dir = |from: &str, to: &str, out_tx| {
            Arc::new(SimDir {
                net: self.inner.clone(),
                from: from.to_string(),
                to: to.to_string(),
                state: Mutex::new(DirState {
                    pending: BTreeMap::new(),
                    rr_next: 0,
                    link_free: Instant::now(),
                    inflight: BinaryHeap::new(),
                    broken: false,
                    closing: false,
                    out_tx: Some(out_tx),
                }),
                notify: Notify::new(),
                window: Arc::new(Semaphore::new(WINDOW_BYTES)),
            })
        };
        let a_to_b = new_dir(from, addr, b_out_tx);
        let b_to_a = new_dir(addr, from, a_out_tx);
        tokio::spawn(a_to_b.clone().run_delivery());
        tokio::spawn(b_to_a.clone().run_delivery());

        let pair = Arc::new(ConnPair {
            a_to_b: a_to_b.clone(),
            b_to_a: b_to_a.clone(),
            host_a: from.to_string(),
            host_b: addr.to_string(),
        });
        self.inner.conns.lock().unwrap().push(Arc::downgrade(&pair));

        let client = Conn {
            local: from.to_string(),
            peer: addr.to_string(),
            tx: ConnTx::sim(a_to_b.clone()),
            rx: ConnRx::sim(a_out_rx, SimConnGuard { outgoing: a_to_b }, pair.clone()),
        };
        let server = Conn {
            local: addr.to_string(),
            peer: from.to_string(),
            tx: ConnTx::sim(b_to_a.clone()),
            rx: ConnRx::sim(b_out_rx, SimConnGuard { outgoing: b_to_a }, pair),
        };
        listener_tx
            .send(server)
            .map_err(|_| XufsError::Unreachable(format!("{addr} (listener closed)")))?;
        Ok(client)
    }

    /// Partitions (or heals) the whole network. Partitioning breaks every
    /// live connection and drops in-flight frames; healing allows new
    /// connections but does not resurrect broken ones.
    pub fn set_partition(&self, on: bool) {
        self.inner.partition_all.store(on, Ordering::SeqCst);
        if on {
            self.break_matching(|_| true);
        }
    }

    /// Partitions a single named endpoint.
    pub fn partition_host(&self, host: &str, on: bool) {
        {
            let mut hosts = self.inner.partitioned_hosts.lock().unwrap();
            if on {
                hosts.insert(host.to_string());
            } else {
                hosts.remove(host);
            }
        }
        if on {
            self.break_matching(|pair| pair.involves(host));
        }
    }

    pub fn partitioned(&self) -> bool {
        self.inner.partition_all.load(Ordering::SeqCst)
    }

    fn break_matching(&self, pred: impl Fn(&ConnPair) -> bool) {
        let mut conns = self.inner.conns.lock().unwrap();
        conns.retain(|w| match w.upgrade() {
            Some(pair) => {
                if pred(&pair) {
                    pair.break_both();
                    false
                } else {
                    true
                }
            }
            None => false,
        });
    }

    /// Spawns a task that toggles a whole-network partition over the given
    /// windows of virtual time (relative to now).
    pub fn spawn_partition_schedule(&self, windows: Vec<PartitionWindow>) {
        let net = self.clone();
        tokio::spawn(async move {
            let start = Instant::now();
            for w in windows {
                tokio::time::sleep_until(start + Duration::from_millis(w.start_ms)).await;
                net.set_partition(true);
                tokio::time::sleep_until(start + Duration::from_millis(w.end_ms)).await;
                net.set_partition(false);
            }
        });
    }
}

impl SimListener {
    pub fn addr(&self) -> &str {
        &self.addr
    }

    pub async fn accept(&mut self) -> Result<Conn> {
        self.rx.recv().await.ok_or(XufsError::ConnectionLost)
    }
}

/// Builds a current-thread runtime with the clock paused and runs a future
/// to completion on it. The paused clock auto-advances whenever every task
/// is idle, so simulated delays cost no wall time and scheduling is
/// deterministic.
pub fn run_sim<F, T>(fut: F) -> T
where
    F: std::future::Future<Output = T>,
{
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_time()
        .start_paused(true)
        .build()
        .expect("build sim runtime");
    rt.block_on(fut)
}
