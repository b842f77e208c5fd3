//! Wire framing.
//!
//! ```text
//! offset  size  field
//! 0       4     payload length L, u32 little-endian
//! 4       1     message type tag
//! 5       16    session id
//! 21      2     sender id, u16 little-endian
//! 23      2     recipient id, u16 little-endian (0 = coordinator)
//! 25      L     payload
//! ```

use fedvis_core::secagg::SessionId;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use crate::message::MsgTag;

pub const HEADER_LEN: usize = 25;
/// Largest accepted payload.
pub const MAX_PAYLOAD: usize = 64 << 20;

/// Node id of the coordinator.
pub const COORDINATOR: u16 = 0;
/// Sender id used by operator connections (CLI query drivers).
pub const OPERATOR: u16 = u16::MAX;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("empty input")]
    Empty,
    #[error("truncated frame: need {need} bytes, got {got}")]
    Truncated { need: usize, got: usize },
    #[error("payload of {0} bytes exceeds the frame limit")]
    TooLong(usize),
    #[error("{0} trailing bytes after frame")]
    Trailing(usize),
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
}

/// One framed message. The payload is opaque at this layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub tag: MsgTag,
    pub session: SessionId,
    pub sender: u16,
    pub recipient: u16,
    pub payload: Vec<u8>,
}

pub fn frame(env: &Envelope) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + env.payload.len());
    out.extend_from_slice(&(env.payload.len() as u32).to_le_bytes());
    out.push(env.tag as u8);
    out.extend_from_slice(&env.session.0);
    out.extend_from_slice(&env.sender.to_le_bytes());
    out.extend_from_slice(&env.recipient.to_le_bytes());
    out.extend_from_slice(&env.payload);
    out
}

struct Header {
    len: usize,
    tag: MsgTag,
    session: SessionId,
    sender: u16,
    recipient: u16,
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<Header, FrameError> {
    let len = u32::from_le_bytes(h[0..4].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::TooLong(len));
    }
    let tag = MsgTag::from_u8(h[4]).ok_or(FrameError::UnknownTag(h[4]))?;
    Ok(Header {
        len,
        tag,
        session: SessionId(h[5..21].try_into().expect("16 bytes")),
        sender: u16::from_le_bytes([h[21], h[22]]),
        recipient: u16::from_le_bytes([h[23], h[24]]),
    })
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn unframe(bytes: &[u8]) -> Result<Envelope, FrameError> {
    if bytes.is_empty() {
        return Err(FrameError::Empty);
    }
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated {
            need: HEADER_LEN,
            got: bytes.len(),
        });
    }
    let h = parse_header(bytes[..HEADER_LEN].try_into().expect("header"))?;
    let need = HEADER_LEN + h.len;
    if bytes.len() < need {
        return Err(FrameError::Truncated {
            need,
            got: bytes.len(),
        });
    }
    if bytes.len() > need {
        return Err(FrameError::Trailing(bytes.len() - need));
    }
    Ok(Envelope {
        tag: h.tag,
        session: h.session,
        sender: h.sender,
        recipient: h.recipient,
        payload: bytes[HEADER_LEN..].to_vec(),
    })
}

#[derive(Debug, thiserror::Error)]
pub enum ReadError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads one frame. `Ok(None)` on a clean end of stream between frames.
pub async fn read_frame<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<Envelope>, ReadError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        let n = r.read(&mut header[filled..]).await?;
        if n == 0 {
            if filled == 0 {
                return Ok(None);
            }
            return Err(FrameError::Truncated {
                need: HEADER_LEN,
                got: filled,
            }
            .into());
        }
        filled += n;
    }
    let h = parse_header(&header)?;
    let mut payload = vec![0u8; h.len];
    if let Err(e) = r.read_exact(&mut payload).await {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            return Err(FrameError::Truncated {
                need: HEADER_LEN + h.len,
                got: HEADER_LEN,
            }
            .into());
        }
        return Err(e.into());
    }
    Ok(Some(Envelope {
        tag: h.tag,
        session: h.session,
        sender: h.sender,
        recipient: h.recipient,
        payload,
    }))
}

pub async fn write_frame<W: AsyncWrite + Unpin>(w: &mut W, env: &Envelope) -> std::io::Result<()> {
    w.write_all(&frame(env)).await?;
    w.flush().await
}
