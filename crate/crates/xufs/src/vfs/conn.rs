//! Client connection layer: authenticated, multiplexed RPC over one
//! transport connection.
//!
//! Requests carry a per-connection monotonically increasing request_id and
//! are routed back by it, so several calls (a stripe fetch, a batch drain,
//! a lease renewal) can be outstanding at once on one connection.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::SystemTime;

use tokio::sync::mpsc;

use crate::error::{Result, XufsError};
use crate::net::{Conn, ConnTx, Transport};
use crate::wire::auth::{challenge_digest, AuthCredential};
use crate::wire::{Message, Payload};

type Routes = Arc<Mutex<Option<BTreeMap<u64, mpsc::UnboundedSender<Message>>>>>;

pub struct RpcClient {
    tx: ConnTx,
    routes: Routes,
    next_id: AtomicU64,
    alive: Arc<AtomicBool>,
    reader: tokio::task::JoinHandle<()>,
}

impl Drop for RpcClient {
    fn drop(&mut self) {
        self.reader.abort();
    }
}

/// Runs the HELLO / CHALLENGE / CHALLENGE_RESPONSE / AUTH_RESULT dance on a
/// fresh connection. Used for both the RPC and the callback channel; every
/// connection authenticates.
pub async fn authenticate_conn(
    conn: &mut Conn,
    cred: &AuthCredential,
    client_id: &str,
) -> Result<()> {
    conn.tx
        .send(Message::new(
            1,
            Payload::Hello { key: cred.key.clone(), client_id: client_id.to_string() },
        ))
        .await?;
    let challenge = conn.recv().await.ok_or(XufsError::ConnectionLost)?;
    let nonce = match challenge.payload {
        Payload::Challenge { nonce } => nonce,
        Payload::Error { code, detail } => return Err(XufsError::from_wire(code, detail)),
        other => {
            return Err(XufsError::ProtocolError(format!(
                "expected CHALLENGE, got {:?}",
                other.kind()
            )))
        }
    };
    let digest = challenge_digest(cred, &nonce, SystemTime::now())?;
    conn.tx.send(Message::new(2, Payload::ChallengeResponse { digest })).await?;
    let result = conn.recv().await.ok_or(XufsError::ConnectionLost)?;
    match result.payload {
        Payload::AuthResult { ok: true, .. } => Ok(()),
        Payload::AuthResult { ok: false, detail } => Err(XufsError::AuthFailed(detail)),
        Payload::Error { code, detail } => Err(XufsError::from_wire(code, detail)),
        other => Err(XufsError::ProtocolError(format!(
            "expected AUTH_RESULT, got {:?}",
            other.kind()
        ))),
    }
}

impl RpcClient {
    /// Connects, authenticates, and starts the response router.
    pub async fn establish(
        transport: &Transport,
        local_label: &str,
        addr: &str,
        cred: &AuthCredential,
        client_id: &str,
    ) -> Result<RpcClient> {
        let mut conn = transport.connect(local_label, addr).await?;
        authenticate_conn(&mut conn, cred, client_id).await?;
        let (tx, mut rx) = conn.split();
        let routes: Routes = Arc::new(Mutex::new(Some(BTreeMap::new())));
        let alive = Arc::new(AtomicBool::new(true));
        let reader = {
            let routes = routes.clone();
            let alive = alive.clone();
            tokio::spawn(async move {
                while let Some(msg) = rx.recv().await {
                    let route = {
                        let guard = routes.lock().unwrap();
                        guard.as_ref().and_then(|m| m.get(&msg.request_id).cloned())
                    };
                    if let Some(route) = route {
                        let _ = route.send(msg);
                    }
                }
                // Connection gone: close every outstanding route.
                alive.store(false, Ordering::SeqCst);
                routes.lock().unwrap().take();
            })
        };
        Ok(RpcClient { tx, routes, next_id: AtomicU64::new(3), alive, reader })
    }

    pub fn is_alive(&self) -> bool {
        self.alive.load(Ordering::SeqCst)
    }

    fn register_route(&self) -> Result<(u64, mpsc::UnboundedReceiver<Message>)> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = mpsc::unbounded_channel();
        let mut guard = self.routes.lock().unwrap();
        match guard.as_mut() {
            Some(map) => {
                map.insert(id, tx);
                Ok((id, rx))
            }
            None => Err(XufsError::ConnectionLost),
        }
    }

    fn drop_route(&self, id: u64) {
        if let Some(map) = self.routes.lock().unwrap().as_mut() {
            map.remove(&id);
        }
    }

    /// One request, one response. A wire ERROR becomes the matching error.
    pub async fn call(&self, payload: Payload) -> Result<Message> {
        let mut stream = self.start(payload).await?;
        let msg = stream.recv().await?;
        match msg.payload {
            Payload::Error { code, detail } => Err(XufsError::from_wire(code, detail)),
            _ => Ok(msg),
        }
    }

    /// Sends a request whose response is a stream (FETCH_SEGMENT* then
    /// FETCH_DONE). The caller reads messages until done or error.
    pub async fn start(&self, payload: Payload) -> Result<RpcStream<'_>> {
        let (id, rx) = self.register_route()?;
        let send = self.tx.send(Message::new(id, payload)).await;
        if send.is_err() {
            self.drop_route(id);
            return Err(XufsError::ConnectionLost);
        }
        Ok(RpcStream { client: self, id, rx })
    }
}

pub struct RpcStream<'a> {
    client: &'a RpcClient,
    id: u64,
    rx: mpsc::UnboundedReceiver<Message>,
}

impl RpcStream<'_> {
    pub async fn recv(&mut self) -> Result<Message> {
        self.rx.recv().await.ok_or(XufsError::ConnectionLost)
    }
}

impl Drop for RpcStream<'_> {
    fn drop(&mut self) {
        self.client.drop_route(self.id);
    }
}
