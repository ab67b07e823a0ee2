//! Notification callback registry: server-initiated invalidations.
//!
//! Each registered client gets a pusher task feeding INVALIDATE messages
//! onto its callback connection. Mutations enqueue notifications and move
//! on; a dead channel is discovered on the next push and the registration
//! reaped without ever blocking the mutation path.

use std::collections::BTreeMap;

use tokio::sync::mpsc;

use crate::net::ConnTx;
use crate::paths;
use crate::server::namespace::Invalidation;
use crate::wire::{Message, Payload};

struct Registration {
    watched: Vec<String>,
    tx: mpsc::UnboundedSender<Invalidation>,
    task: tokio::task::JoinHandle<()>,
}

#[derive(Default)]
pub struct CallbackRegistry {
    regs: BTreeMap<String, Registration>,
}

impl CallbackRegistry {
    pub fn new() -> Self {
        CallbackRegistry::default()
    }

    /// Registers (or re-registers) a client's callback channel. A previous
    /// registration for the same client is replaced and its channel closed.
    pub fn register(&mut self, client_id: &str, watched: Vec<String>, conn: ConnTx) {
        if let Some(old) = self.regs.remove(client_id) {
            old.task.abort();
        }
        let (tx, mut rx) = mpsc::unbounded_channel::<Invalidation>();
        let task = tokio::spawn(async move {
            let mut request_id = 0u64;
            while let Some(inv) = rx.recv().await {
                request_id += 1;
                let msg = Message::new(
                    request_id,
                    Payload::Invalidate { path: inv.path, new_version: inv.new_version },
                );
                if conn.send(msg).await.is_err() {
                    return; // channel dead; registry reaps on next notify
                }
            }
        });
        self.regs.insert(client_id.to_string(), Registration { watched, tx, task });
    }

    pub fn len(&self) -> usize {
        self.regs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regs.is_empty()
    }

    pub fn is_registered(&self, client_id: &str) -> bool {
        self.regs.contains_key(client_id)
    }

    /// Queues one invalidation to every live registration except the
    /// mutation's originating client. Dead registrations are reaped here.
    pub fn notify(&mut self, inv: &Invalidation, origin: Option<&str>) {
        let mut dead = Vec::new();
        for (client, reg) in &self.regs {
            if Some(client.as_str()) == origin {
                continue;
            }
            let watches = reg.watched.is_empty()
                || reg.watched.iter().any(|w| paths::has_prefix(&inv.path, w));
            if !watches {
                continue;
            }
            if reg.tx.send(inv.clone()).is_err() {
                dead.push(client.clone());
            }
        }
        for client in dead {
            if let Some(reg) = self.regs.remove(&client) {
                reg.task.abort();
            }
        }
    }

    pub fn notify_all(&mut self, invalidations: &[Invalidation], origin: Option<&str>) {
        for inv in invalidations {
            self.notify(inv, origin);
        }
    }
}

impl Drop for CallbackRegistry {
    fn drop(&mut self) {
        for (_, reg) in std::mem::take(&mut self.regs) {
            reg.task.abort();
        }
    }
}
