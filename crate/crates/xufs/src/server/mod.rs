//! The personal file server: serves directory entries and striped file
//! content out of one exported root, applies meta-operation batches,
//! dispatches invalidation callbacks, and manages lock leases.
//!
//! One export has a single writer at a time: all namespace mutations and
//! lease updates serialize through the server's mutexes, while fetch
//! streaming and callback dispatch run outside them.

pub mod callbacks;
pub mod leases;
pub mod namespace;

pub use leases::{Lease, LeaseTable};
pub use namespace::{tree_digest, Invalidation, Namespace};

use std::fs;
use std::os::unix::io::AsRawFd;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::SystemTime;

use rand::{Rng, SeedableRng};
use tokio::sync::watch;

use crate::config::Knobs;
use crate::error::{Result, XufsError};
use crate::net::{Conn, ConnTx, Listener};
use crate::paths;
use crate::wire::auth::{challenge_digest, digests_equal, AuthCredential, NONCE_LEN};
use crate::wire::{plan_stripes, LockResult, Message, Payload};

use callbacks::CallbackRegistry;

#[derive(Clone)]
pub struct ServerConfig {
    pub root: PathBuf,
    pub export_id: String,
    pub credential: AuthCredential,
    pub knobs: Knobs,
    /// Seed for the challenge-nonce generator; simulation harnesses pin it.
    pub seed: u64,
}

pub struct ServerState {
    cfg: ServerConfig,
    ns: Mutex<Namespace>,
    leases: Mutex<LeaseTable>,
    callbacks: Mutex<CallbackRegistry>,
    rng: Mutex<rand::rngs::StdRng>,
    epoch: tokio::time::Instant,
    lease_path: PathBuf,
    _lock: fs::File,
}

impl ServerState {
    fn now_ms(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    fn persist_leases(&self) {
        let now = self.now_ms();
        let _ = self.leases.lock().unwrap().save(&self.lease_path, now);
    }

    /// Test/harness access to the callback registry size.
    pub fn callback_count(&self) -> usize {
        self.callbacks.lock().unwrap().len()
    }

    pub fn lease_count(&self) -> usize {
        self.leases.lock().unwrap().len()
    }
}

pub struct Server {
    state: Arc<ServerState>,
}

/// Running server plus its shutdown switch.
pub struct ServerHandle {
    pub state: Arc<ServerState>,
    shutdown: watch::Sender<bool>,
    task: tokio::task::JoinHandle<()>,
}

impl ServerHandle {
    pub async fn stop(self) {
        let _ = self.shutdown.send(true);
        let _ = self.task.await;
    }

    /// Kills the server without graceful persistence, as a crash would.
    /// Connection handlers still shut down (with a real process they would
    /// die outright), releasing the root lock for a restart.
    pub fn kill(self) {
        let _ = self.shutdown.send(true);
        self.task.abort();
    }
}

impl Server {
    pub fn new(cfg: ServerConfig) -> Result<Server> {
        let ns = Namespace::open(&cfg.root)?;
        let state_dir = ns.state_dir().to_path_buf();
        let lock = acquire_root_lock(&state_dir)?;
        let epoch = tokio::time::Instant::now();
        let lease_path = state_dir.join("leases.bin");
        let leases = LeaseTable::load(&lease_path, cfg.knobs.lease_term_ms, 0)?;
        let seed = cfg.seed;
        Ok(Server {
            state: Arc::new(ServerState {
                cfg,
                ns: Mutex::new(ns),
                leases: Mutex::new(leases),
                callbacks: Mutex::new(CallbackRegistry::new()),
                rng: Mutex::new(rand::rngs::StdRng::seed_from_u64(seed)),
                epoch,
                lease_path,
                _lock: lock,
            }),
        })
    }

    pub fn state(&self) -> Arc<ServerState> {
        self.state.clone()
    }

    /// Serves until the shutdown signal flips, then persists state.
    pub async fn run(self, mut listener: Listener, mut shutdown: watch::Receiver<bool>) {
        let state = self.state;
        let poller = tokio::spawn(poll_loop(state.clone(), shutdown.clone()));
        let mut handlers: Vec<tokio::task::JoinHandle<()>> = Vec::new();
        loop {
            tokio::select! {
                biased;
                _ = shutdown.changed() => break,
                conn = listener.accept() => {
                    match conn {
                        Ok(conn) => {
                            handlers.retain(|h| !h.is_finished());
                            handlers.push(tokio::spawn(handle_conn(
                                state.clone(),
                                conn,
                                shutdown.clone(),
                            )));
                        }
                        Err(_) => break,
                    }
                }
            }
        }
        poller.abort();
        for h in handlers {
            h.abort();
        }
        {
            let ns = state.ns.lock().unwrap();
            let _ = ns.persist();
        }
        state.persist_leases();
    }

    /// Spawns the serve loop on the current runtime.
    pub fn spawn(self, listener: Listener) -> ServerHandle {
        let state = self.state();
        let (tx, rx) = watch::channel(false);
        let task = tokio::spawn(self.run(listener, rx));
        ServerHandle { state, shutdown: tx, task }
    }
}

/// Exclusive root ownership via an advisory lock; a second server on the
/// same root refuses to start.
fn acquire_root_lock(state_dir: &std::path::Path) -> Result<fs::File> {
    let lock_path = state_dir.join("lock");
    let file = fs::OpenOptions::new().create(true).write(true).open(&lock_path)?;
    let rc = unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX | libc::LOCK_NB) };
    if rc != 0 {
        return Err(XufsError::Conflict(format!(
            "another server already owns {}",
            state_dir.display()
        )));
    }
    Ok(file)
}

async fn poll_loop(state: Arc<ServerState>, mut shutdown: watch::Receiver<bool>) {
    let interval = state.cfg.knobs.poll_interval();
    loop {
        tokio::select! {
            biased;
            _ = shutdown.changed() => return,
            _ = tokio::time::sleep(interval) => {}
        }
        let invalidations = {
            let mut ns = state.ns.lock().unwrap();
            match ns.poll_changes() {
                Ok(inv) => {
                    if !inv.is_empty() {
                        let _ = ns.persist();
                    }
                    inv
                }
                Err(_) => continue,
            }
        };
        if !invalidations.is_empty() {
            state.callbacks.lock().unwrap().notify_all(&invalidations, None);
        }
    }
}

fn err_reply(request_id: u64, e: &XufsError) -> Message {
    Message::new(request_id, Payload::Error { code: e.code(), detail: e.to_string() })
}

async fn handle_conn(state: Arc<ServerState>, conn: Conn, mut shutdown: watch::Receiver<bool>) {
    let (tx, mut rx) = conn.split();
    let client_id = match authenticate(&state, &tx, &mut rx).await {
        Ok(id) => id,
        Err(_) => return,
    };
    loop {
        let msg = tokio::select! {
            biased;
            _ = shutdown.changed() => return,
            msg = rx.recv() => match msg {
                Some(m) => m,
                None => return,
            },
        };
        let req = msg.request_id;
        let result = dispatch(&state, &tx, &client_id, msg).await;
        if let Err(e) = result {
            if tx.send(err_reply(req, &e)).await.is_err() {
                return;
            }
        }
    }
}

async fn authenticate(
    state: &Arc<ServerState>,
    tx: &ConnTx,
    rx: &mut crate::net::ConnRx,
) -> Result<String> {
    let hello = rx.recv().await.ok_or(XufsError::ConnectionLost)?;
    let (key, client_id) = match &hello.payload {
        Payload::Hello { key, client_id } => (key.clone(), client_id.clone()),
        _ => {
            let e = XufsError::ProtocolError("expected HELLO".into());
            let _ = tx.send(err_reply(hello.request_id, &e)).await;
            return Err(e);
        }
    };
    let cred = &state.cfg.credential;
    if key != cred.key {
        let e = XufsError::AuthFailed("unknown key".into());
        let _ = tx.send(err_reply(hello.request_id, &e)).await;
        return Err(e);
    }
    let nonce: Vec<u8> = {
        let mut rng = state.rng.lock().unwrap();
        (0..NONCE_LEN).map(|_| rng.random()).collect()
    };
    tx.send(Message::new(hello.request_id, Payload::Challenge { nonce: nonce.clone() })).await?;
    let resp = rx.recv().await.ok_or(XufsError::ConnectionLost)?;
    let digest = match &resp.payload {
        Payload::ChallengeResponse { digest } => *digest,
        _ => {
            let e = XufsError::ProtocolError("expected CHALLENGE_RESPONSE".into());
            let _ = tx.send(err_reply(resp.request_id, &e)).await;
            return Err(e);
        }
    };
    let ok = match challenge_digest(cred, &nonce, SystemTime::now()) {
        Ok(expected) => digests_equal(&expected, &digest),
        Err(_) => false, // expired credential authenticates nobody
    };
    let detail = if ok { String::new() } else { "challenge mismatch".to_string() };
    tx.send(Message::new(resp.request_id, Payload::AuthResult { ok, detail })).await?;
    if ok {
        Ok(client_id)
    } else {
        Err(XufsError::AuthFailed("challenge mismatch".into()))
    }
}

async fn dispatch(
    state: &Arc<ServerState>,
    tx: &ConnTx,
    client_id: &str,
    msg: Message,
) -> Result<()> {
    let req = msg.request_id;
    match msg.payload {
        Payload::ReaddirReq { path } => {
            let rel = paths::normalize(&path)?;
            let entries = state.ns.lock().unwrap().readdir(&rel)?;
            tx.send(Message::new(req, Payload::ReaddirResp { entries })).await?;
        }
        Payload::FetchReq { path, total_length } => {
            handle_fetch(state, tx, req, &path, total_length).await?;
        }
        Payload::MetaOpBatch { client_id: batch_client, ops } => {
            if batch_client != client_id {
                return Err(XufsError::AccessDenied("batch for a different client".into()));
            }
            let (results, invalidations) = {
                let mut ns = state.ns.lock().unwrap();
                let r = ns.apply_batch(client_id, &ops);
                let _ = ns.persist();
                r
            };
            state.callbacks.lock().unwrap().notify_all(&invalidations, Some(client_id));
            tx.send(Message::new(req, Payload::MetaOpAck { results })).await?;
        }
        Payload::CallbackRegister { client_id: reg_client, watched } => {
            if reg_client != client_id {
                return Err(XufsError::AccessDenied("registration for a different client".into()));
            }
            let watched = watched
                .into_iter()
                .map(|w| paths::normalize(&w))
                .collect::<Result<Vec<_>>>()?;
            state.callbacks.lock().unwrap().register(client_id, watched, tx.clone());
            tx.send(Message::new(
                req,
                Payload::AuthResult { ok: true, detail: "registered".into() },
            ))
            .await?;
        }
        Payload::LockReq { path, mode } => {
            let rel = paths::normalize(&path)?;
            let now = state.now_ms();
            let grant = state.leases.lock().unwrap().grant(&rel, mode, client_id, now);
            let result = match grant {
                Ok(lease) => {
                    state.persist_leases();
                    LockResult::Granted {
                        lock_id: lease.lock_id,
                        term_ms: state.cfg.knobs.lease_term_ms,
                    }
                }
                Err(XufsError::Conflict(_)) => LockResult::Conflict,
                Err(e) => return Err(e),
            };
            tx.send(Message::new(req, Payload::LockResp { result })).await?;
        }
        Payload::LeaseRenew { lock_id } => {
            let now = state.now_ms();
            let lease = state.leases.lock().unwrap().renew(lock_id, client_id, now)?;
            state.persist_leases();
            tx.send(Message::new(
                req,
                Payload::LeaseAck { lock_id, expires_in_ms: lease.expires_at_ms - now },
            ))
            .await?;
        }
        Payload::Unlock { lock_id } => {
            state.leases.lock().unwrap().release(lock_id, client_id)?;
            state.persist_leases();
            tx.send(Message::new(req, Payload::LeaseAck { lock_id, expires_in_ms: 0 })).await?;
        }
        other => {
            return Err(XufsError::ProtocolError(format!(
                "unexpected {:?} from client",
                other.kind()
            )));
        }
    }
    Ok(())
}

/// Streams one file as striped FETCH_SEGMENT chunks (round-robin across
/// stripes so streams overlap) followed by FETCH_DONE carrying the version
/// the bytes correspond to.
async fn handle_fetch(
    state: &Arc<ServerState>,
    tx: &ConnTx,
    req: u64,
    path: &str,
    total_length: u64,
) -> Result<()> {
    use std::os::unix::fs::FileExt;
    let rel = paths::normalize(path)?;
    let (len, version) = state.ns.lock().unwrap().file_len_version(&rel)?;
    if len != total_length {
        return Err(XufsError::SizeChanged(format!(
            "/{rel}: {total_length} requested, {len} on disk"
        )));
    }
    let knobs = &state.cfg.knobs;
    let plan = plan_stripes(len, knobs.max_streams, knobs.min_block);
    let file = state.ns.lock().unwrap().open_file(&rel)?;
    let chunk = knobs.fetch_chunk.max(1);
    let mut progress: Vec<u64> = vec![0; plan.segments.len()];
    loop {
        let mut sent_any = false;
        for (i, seg) in plan.segments.iter().enumerate() {
            let done = progress[i];
            let remaining = seg.length - done;
            if remaining == 0 {
                continue;
            }
            let n = remaining.min(chunk) as usize;
            let mut buf = vec![0u8; n];
            file.read_exact_at(&mut buf, seg.offset + done).map_err(|_| {
                XufsError::SizeChanged(format!("/{rel}: shrank during transfer"))
            })?;
            progress[i] += n as u64;
            sent_any = true;
            tx.send(Message::new(
                req,
                Payload::FetchSegment {
                    path: rel.clone(),
                    stream_index: seg.stream_index,
                    offset: seg.offset + done,
                    data: buf,
                },
            ))
            .await?;
        }
        if !sent_any {
            break;
        }
        // The file must stay at one consistent version for the whole
        // transfer; bail out if a mutation landed mid-stream.
        if state.ns.lock().unwrap().version_of(&rel) != version {
            return Err(XufsError::SizeChanged(format!("/{rel}: changed during transfer")));
        }
    }
    tx.send(Message::new(req, Payload::FetchDone { path: rel, version, total_length: len }))
        .await?;
    Ok(())
}
