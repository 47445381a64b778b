use std::io::{self, Read, Write};

use super::{ByteReader, WireError};

pub const PROTOCOL_VERSION: u8 = 1;
/// Bytes counted by `total_len` before the payload: version, command, request id.
pub const HEADER_LEN: usize = 1 + 1 + 8;
pub const DEFAULT_MAX_PAYLOAD: usize = 1 << 30;

/// Length-prefixed request/response envelope.
///
/// On the wire: `[total_len:u32][version:u8][command:u8][request_id:u64][payload]`
/// where `total_len` counts every byte after itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub version: u8,
    pub command: u8,
    pub request_id: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(command: u8, request_id: u64, payload: Vec<u8>) -> Self {
        Frame {
            version: PROTOCOL_VERSION,
            command,
            request_id,
            payload,
        }
    }

    fn header(&self) -> [u8; 4 + HEADER_LEN] {
        let total = (HEADER_LEN + self.payload.len()) as u32;
        let mut h = [0u8; 4 + HEADER_LEN];
        h[..4].copy_from_slice(&total.to_le_bytes());
        h[4] = self.version;
        h[5] = self.command;
        h[6..].copy_from_slice(&self.request_id.to_le_bytes());
        h
    }
}

fn check_cap(len: usize, cap: usize) -> Result<(), WireError> {
    if len > cap || len > u32::MAX as usize - HEADER_LEN {
        return Err(WireError::Oversize {
            len: len as u64,
            cap,
        });
    }
    Ok(())
}

pub fn encode_frame(frame: &Frame, max_payload: usize) -> Result<Vec<u8>, WireError> {
    check_cap(frame.payload.len(), max_payload)?;
    let mut out = Vec::with_capacity(4 + HEADER_LEN + frame.payload.len());
    out.extend_from_slice(&frame.header());
    out.extend_from_slice(&frame.payload);
    Ok(out)
}

/// Decodes one frame from the front of `buf`.
///
/// Returns `Ok(None)` when more bytes are needed, otherwise the frame and the
/// number of bytes it occupied. Oversize headers are rejected before the
/// payload arrives.
pub fn decode_frame(buf: &[u8], max_payload: usize) -> Result<Option<(Frame, usize)>, WireError> {
    if buf.len() < 4 {
        return Ok(None);
    }
    let total = u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if total < HEADER_LEN {
        return Err(WireError::Truncated {
            needed: HEADER_LEN,
            available: total,
        });
    }
    check_cap(total - HEADER_LEN, max_payload)?;
    if buf.len() < 4 + total {
        return Ok(None);
    }
    let mut r = ByteReader::new(&buf[4..4 + total]);
    let version = r.u8()?;
    if version != PROTOCOL_VERSION {
        return Err(WireError::BadVersion(version));
    }
    let command = r.u8()?;
    let request_id = r.u64()?;
    let payload = r.rest().to_vec();
    Ok(Some((
        Frame {
            version,
            command,
            request_id,
            payload,
        },
        4 + total,
    )))
}

/// Incremental decoder for a byte stream delivered in arbitrary chunks.
#[derive(Debug)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    max_payload: usize,
}

impl FrameDecoder {
    pub fn new(max_payload: usize) -> Self {
        FrameDecoder {
            buf: Vec::new(),
            max_payload,
        }
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn next_frame(&mut self) -> Result<Option<Frame>, WireError> {
        match decode_frame(&self.buf, self.max_payload)? {
            Some((frame, used)) => {
                self.buf.drain(..used);
                Ok(Some(frame))
            }
            None => Ok(None),
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

/// Error from [`read_frame`]; carries what is known about the offending frame.
#[derive(Debug, thiserror::Error)]
pub enum ReadFrameError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{error}")]
    Malformed {
        error: WireError,
        command: Option<u8>,
        request_id: Option<u64>,
        /// Whether the stream is still positioned at a frame boundary.
        resumable: bool,
    },
}

fn read_full_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

/// Blocking read of one frame. `Ok(None)` on clean end of stream.
pub fn read_frame<R: Read>(r: &mut R, max_payload: usize) -> Result<Option<Frame>, ReadFrameError> {
    let mut len = [0u8; 4];
    if !read_full_or_eof(r, &mut len)? {
        return Ok(None);
    }
    let total = u32::from_le_bytes(len) as usize;
    if total < HEADER_LEN {
        return Err(ReadFrameError::Malformed {
            error: WireError::Truncated {
                needed: HEADER_LEN,
                available: total,
            },
            command: None,
            request_id: None,
            resumable: false,
        });
    }
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let version = header[0];
    let command = header[1];
    let request_id = u64::from_le_bytes(header[2..].try_into().expect("8 bytes"));
    let payload_len = total - HEADER_LEN;
    if let Err(error) = check_cap(payload_len, max_payload) {
        return Err(ReadFrameError::Malformed {
            error,
            command: Some(command),
            request_id: Some(request_id),
            resumable: false,
        });
    }
    let mut payload = vec![0u8; payload_len];
    r.read_exact(&mut payload)?;
    if version != PROTOCOL_VERSION {
        return Err(ReadFrameError::Malformed {
            error: WireError::BadVersion(version),
            command: Some(command),
            request_id: Some(request_id),
            resumable: true,
        });
    }
    Ok(Some(Frame {
        version,
        command,
        request_id,
        payload,
    }))
}

/// Writes header and payload without concatenating them first.
pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.header())?;
    w.write_all(&frame.payload)?;
    w.flush()
}
