//! Message transports. Both variants hand out a [`Link`]: an outbound and an
//! inbound channel of envelopes, so nodes do not care which one they run on.

use tokio::net::{TcpStream, ToSocketAddrs};
use tokio::sync::mpsc;

use crate::frame::{read_frame, write_frame, Envelope};

/// Per-link queue depth.
pub const LINK_CAPACITY: usize = 1024;

#[derive(Debug)]
pub struct Link {
    pub tx: mpsc::Sender<Envelope>,
    pub rx: mpsc::Receiver<Envelope>,
    /// Human-readable peer description for logs.
    pub peer: String,
}

/// Two connected in-process endpoints.
pub fn inproc_pair(label: &str) -> (Link, Link) {
    let (a_tx, b_rx) = mpsc::channel(LINK_CAPACITY);
    let (b_tx, a_rx) = mpsc::channel(LINK_CAPACITY);
    (
        Link {
            tx: a_tx,
            rx: a_rx,
            peer: format!("inproc:{label}"),
        },
        Link {
            tx: b_tx,
            rx: b_rx,
            peer: format!("inproc:{label}"),
        },
    )
}

/// Wraps a TCP stream. Reader and writer run as tasks; a framing error or
/// EOF closes the inbound channel.
pub fn tcp_link(stream: TcpStream) -> Link {
    let peer = stream
        .peer_addr()
        .map(|a| format!("tcp:{a}"))
        .unwrap_or_else(|_| "tcp:?".into());
    let _ = stream.set_nodelay(true);
    let (mut rd, mut wr) = stream.into_split();
    let (in_tx, in_rx) = mpsc::channel(LINK_CAPACITY);
    let (out_tx, mut out_rx) = mpsc::channel::<Envelope>(LINK_CAPACITY);
    let label = peer.clone();
    tokio::spawn(async move {
        loop {
            match read_frame(&mut rd).await {
                Ok(Some(env)) => {
                    if in_tx.send(env).await.is_err() {
                        break;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    tracing::warn!(peer = %label, error = %e, "dropping connection");
                    break;
                }
            }
        }
    });
    tokio::spawn(async move {
        while let Some(env) = out_rx.recv().await {
            if write_frame(&mut wr, &env).await.is_err() {
                break;
            }
        }
    });
    Link {
        tx: out_tx,
        rx: in_rx,
        peer,
    }
}

pub async fn tcp_connect(addr: impl ToSocketAddrs) -> std::io::Result<Link> {
    Ok(tcp_link(TcpStream::connect(addr).await?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::MsgTag;
    use fedvis_core::secagg::SessionId;

    fn env(n: u8) -> Envelope {
        Envelope {
            tag: MsgTag::Heartbeat,
            session: SessionId([n; 16]),
            sender: n as u16,
            recipient: 0,
            payload: vec![n; n as usize],
        }
    }

    #[tokio::test]
    async fn inproc_delivers_in_order() {
        let (a, mut b) = inproc_pair("t");
        for n in 0..5 {
            a.tx.send(env(n)).await.unwrap();
        }
        for n in 0..5 {
            assert_eq!(b.rx.recv().await.unwrap(), env(n));
        }
    }

    #[tokio::test]
    async fn tcp_delivers_both_ways() {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let server = tokio::spawn(async move {
            let (s, _) = listener.accept().await.unwrap();
            let mut link = tcp_link(s);
            let got = link.rx.recv().await.unwrap();
            link.tx.send(env(got.sender as u8 + 1)).await.unwrap();
            // Keep the link alive until the client has read the reply.
            link.rx.recv().await
        });
        let mut c = tcp_connect(addr).await.unwrap();
        c.tx.send(env(7)).await.unwrap();
        assert_eq!(c.rx.recv().await.unwrap(), env(8));
        drop(c);
        assert!(server.await.unwrap().is_none());
    }
}
