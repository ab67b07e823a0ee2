//! Real TCP transport: frames protocol messages onto sockets with the
//! bit-exact wire format. Presents the same [`Conn`] interface as the
//! simulator, so client and server code is identical in both modes.

use tokio::io::{AsyncReadExt, AsyncWriteExt, BufWriter};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;

use super::{Conn, ConnRx, ConnTx};
use crate::config::MAX_FRAME;
use crate::error::Result;
use crate::wire::{self, Message, HEADER_LEN};

pub async fn listen(addr: &str) -> Result<TcpListener> {
    Ok(TcpListener::bind(addr).await?)
}

pub async fn connect(addr: &str) -> Result<Conn> {
    let stream = TcpStream::connect(addr)
        .await
        .map_err(|e| crate::error::XufsError::Unreachable(format!("{addr}: {e}")))?;
    Ok(conn_from_stream(stream, addr.to_string()))
}

/// Wraps an established socket in reader/writer pump tasks.
pub fn conn_from_stream(stream: TcpStream, peer: String) -> Conn {
    let _ = stream.set_nodelay(true);
    let local = stream
        .local_addr()
        .map(|a| a.to_string())
        .unwrap_or_else(|_| "tcp-local".to_string());
    let (mut read_half, write_half) = stream.into_split();

    let (in_tx, in_rx) = mpsc::unbounded_channel::<Message>();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Message>();

    // Reader pump: socket -> frames -> in_tx. Dropping in_tx on any error
    // or EOF is how the owner observes connection loss.
    tokio::spawn(async move {
        loop {
            let mut header = [0u8; HEADER_LEN];
            if read_half.read_exact(&mut header).await.is_err() {
                break;
            }
            let parsed = match wire::decode_header(&header) {
                Ok(h) => h,
                Err(_) => break,
            };
            if parsed.payload_len as usize > MAX_FRAME {
                break;
            }
            let mut payload = vec![0u8; parsed.payload_len as usize];
            if read_half.read_exact(&mut payload).await.is_err() {
                break;
            }
            let msg = match wire::decode_payload(parsed.kind, &payload) {
                Ok(p) => Message::new(parsed.request_id, p),
                Err(_) => break,
            };
            if in_tx.send(msg).is_err() {
                break;
            }
        }
    });

    // Writer pump: out_rx -> encoded frames -> socket.
    tokio::spawn(async move {
        let mut writer = BufWriter::new(write_half);
        while let Some(msg) = out_rx.recv().await {
            let bytes = match wire::encode_message(&msg) {
                Ok(b) => b,
                Err(_) => continue, // oversized frame: drop it, keep the conn
            };
            if writer.write_all(&bytes).await.is_err() {
                break;
            }
            // Flush between bursts so request/response latency stays low.
            if out_rx.is_empty() && writer.flush().await.is_err() {
                break;
            }
        }
        let _ = writer.shutdown().await;
    });

    Conn { local, peer, tx: ConnTx::chan(out_tx), rx: ConnRx::chan(in_rx) }
}
