//! Pluggable message transport.
//!
//! Client and server speak through [`Conn`] regardless of backing: the
//! deterministic in-process simulator ([`sim::SimNet`]) or real TCP
//! ([`tcp`]). A connection is a full-duplex, ordered stream of protocol
//! messages; loss of the connection surfaces as `None` from `recv` and
//! errors from `send`.

pub mod sim;
pub mod tcp;
pub mod transcript;

pub use sim::{run_sim, LinkProfile, PartitionWindow, SimNet, SimProfileFile};
pub use transcript::{EventKind, Transcript, TranscriptEvent};

use std::sync::Arc;

use tokio::sync::mpsc;

use crate::error::{Result, XufsError};
use crate::wire::Message;

/// Sending half of a connection. Clones share the same underlying stream.
#[derive(Clone)]
pub struct ConnTx {
    inner: TxInner,
}

#[derive(Clone)]
enum TxInner {
    Sim(Arc<sim::SimDir>),
    Chan(mpsc::UnboundedSender<Message>),
}

impl ConnTx {
    pub(crate) fn sim(dir: Arc<sim::SimDir>) -> Self {
        ConnTx { inner: TxInner::Sim(dir) }
    }

    pub(crate) fn chan(tx: mpsc::UnboundedSender<Message>) -> Self {
        ConnTx { inner: TxInner::Chan(tx) }
    }

    pub async fn send(&self, msg: Message) -> Result<()> {
        match &self.inner {
            TxInner::Sim(dir) => dir.send(msg).await,
            TxInner::Chan(tx) => tx.send(msg).map_err(|_| XufsError::ConnectionLost),
        }
    }

    pub fn is_closed(&self) -> bool {
        match &self.inner {
            TxInner::Sim(dir) => dir.is_down(),
            TxInner::Chan(tx) => tx.is_closed(),
        }
    }
}

/// Receiving half of a connection. Dropping it closes the endpoint.
pub struct ConnRx {
    rx: mpsc::UnboundedReceiver<Message>,
    // Keepalive for simulator plumbing; closing happens via guard Drop.
    _sim: Option<SimRxGuard>,
}

struct SimRxGuard {
    _guard: sim::SimConnGuard,
    _pair: Arc<dyn Send + Sync>,
}

impl ConnRx {
    pub(crate) fn sim<P: Send + Sync + 'static>(
        rx: mpsc::UnboundedReceiver<Message>,
        guard: sim::SimConnGuard,
        pair: Arc<P>,
    ) -> Self {
        ConnRx { rx, _sim: Some(SimRxGuard { _guard: guard, _pair: pair }) }
    }

    pub(crate) fn chan(rx: mpsc::UnboundedReceiver<Message>) -> Self {
        ConnRx { rx, _sim: None }
    }

    /// Next message, or `None` once the connection is closed or lost.
    pub async fn recv(&mut self) -> Option<Message> {
        self.rx.recv().await
    }
}

/// A full-duplex message connection.
pub struct Conn {
    pub local: String,
    pub peer: String,
    pub tx: ConnTx,
    pub rx: ConnRx,
}

impl Conn {
    pub async fn recv(&mut self) -> Option<Message> {
        self.rx.recv().await
    }

    pub fn split(self) -> (ConnTx, ConnRx) {
        (self.tx, self.rx)
    }
}

/// Which transport a process talks over.
#[derive(Clone)]
pub enum Transport {
    Sim(SimNet),
    Tcp,
}

impl Transport {
    pub async fn connect(&self, from: &str, addr: &str) -> Result<Conn> {
        match self {
            Transport::Sim(net) => net.connect(from, addr).await,
            Transport::Tcp => tcp::connect(addr).await,
        }
    }

    pub async fn listen(&self, addr: &str) -> Result<Listener> {
        match self {
            Transport::Sim(net) => Ok(Listener::Sim(net.listen(addr)?)),
            Transport::Tcp => Ok(Listener::Tcp(tcp::listen(addr).await?)),
        }
    }

    pub fn transcript(&self) -> Option<&Transcript> {
        match self {
            Transport::Sim(net) => Some(net.transcript()),
            Transport::Tcp => None,
        }
    }

    pub fn is_sim(&self) -> bool {
        matches!(self, Transport::Sim(_))
    }
}

pub enum Listener {
    Sim(sim::SimListener),
    Tcp(tokio::net::TcpListener),
}

impl Listener {
    pub async fn accept(&mut self) -> Result<Conn> {
        match self {
            Listener::Sim(l) => l.accept().await,
            Listener::Tcp(l) => {
                let (stream, peer) = l.accept().await?;
                Ok(tcp::conn_from_stream(stream, peer.to_string()))
            }
        }
    }

    /// Bound address, usable for connecting (handy with port 0).
    pub fn local_addr(&self) -> String {
        match self {
            Listener::Sim(l) => l.addr().to_string(),
            Listener::Tcp(l) => l.local_addr().map(|a| a.to_string()).unwrap_or_default(),
        }
    }
}
