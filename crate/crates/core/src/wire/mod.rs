//! Binary wire protocol shared by the store, the client and the reproducers.
//!
//! Every multi-byte integer is little-endian. A tensor is encoded as
//! `[dtype:u8][ndim:u8][dims: ndim x u64][data]` with row-major data.

mod frame;
mod payload;
mod reader;

pub use frame::{
    decode_frame, encode_frame, read_frame, write_frame, Frame, FrameDecoder, ReadFrameError,
    DEFAULT_MAX_PAYLOAD, HEADER_LEN, PROTOCOL_VERSION,
};
pub use payload::{
    decode_info, decode_key_request, decode_put_meta, decode_put_tensor, decode_run_model,
    decode_set_model, decode_status_response, encode_info, encode_key_request, encode_put_meta,
    encode_put_tensor, encode_run_model, encode_set_model, encode_status_response, RunModelRequest,
    SetModelRequest,
};
pub use payload::{decode_model_body, encode_model_body};
pub use reader::ByteReader;

use std::fmt;

use thiserror::Error;

pub const MAX_RANK: usize = 8;
pub const MAX_KEY_LEN: usize = 255;
pub const MAX_META_STRING: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated input: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("tensor rank {0} outside 1..=8")]
    BadRank(usize),
    #[error("zero-sized dimension in shape {0:?}")]
    ZeroDim(Vec<u64>),
    #[error("tensor element count overflows")]
    ShapeOverflow,
    #[error("data length mismatch: expected {expected} bytes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("frame payload of {len} bytes exceeds cap of {cap} bytes")]
    Oversize { len: u64, cap: usize },
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("invalid key: {0}")]
    BadKey(String),
    #[error("unknown meta tag {0}")]
    UnknownMetaTag(u8),
    #[error("meta string of {0} bytes exceeds 64KiB")]
    MetaTooLong(usize),
    #[error("unknown status code {0}")]
    UnknownStatus(u8),
    #[error("invalid utf-8 in {0}")]
    Utf8(&'static str),
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
}

/// Element type of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
    I32 = 2,
    I64 = 3,
    U8 = 4,
}

impl Dtype {
    pub const ALL: [Dtype; 5] = [Dtype::F32, Dtype::F64, Dtype::I32, Dtype::I64, Dtype::U8];

    pub fn element_size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::I32 => 4,
            Dtype::F64 | Dtype::I64 => 8,
            Dtype::U8 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, WireError> {
        Ok(match code {
            0 => Dtype::F32,
            1 => Dtype::F64,
            2 => Dtype::I32,
            3 => Dtype::I64,
            4 => Dtype::U8,
            other => return Err(WireError::UnknownDtype(other)),
        })
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

/// A dense row-major tensor with little-endian element bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct Tensor {
    dtype: Dtype,
    shape: Vec<u64>,
    data: Vec<u8>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("dtype", &self.dtype)
            .field("shape", &self.shape)
            .field("bytes", &self.data.len())
            .finish()
    }
}

fn element_count(shape: &[u64]) -> Result<usize, WireError> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(WireError::BadRank(shape.len()));
    }
    if shape.contains(&0) {
        return Err(WireError::ZeroDim(shape.to_vec()));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| {
            usize::try_from(d).ok().and_then(|d| acc.checked_mul(d))
        })
        .ok_or(WireError::ShapeOverflow)
}

impl Tensor {
    pub fn new(dtype: Dtype, shape: Vec<u64>, data: Vec<u8>) -> Result<Self, WireError> {
        let expected = element_count(&shape)?
            .checked_mul(dtype.element_size())
            .ok_or(WireError::ShapeOverflow)?;
        if data.len() != expected {
            return Err(WireError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { dtype, shape, data })
    }

    pub fn from_f32(shape: Vec<u64>, values: &[f32]) -> Result<Self, WireError> {
        let mut data = Vec::with_capacity(values.len() * 4);
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
        Tensor::new(Dtype::F32, shape, data)
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn shape(&self) -> &[u64] {
        &self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn num_elements(&self) -> usize {
        self.data.len() / self.dtype.element_size()
    }

    /// Decodes the payload as `f32` values; `None` for other dtypes.
    pub fn to_f32_vec(&self) -> Option<Vec<f32>> {
        if self.dtype != Dtype::F32 {
            return None;
        }
        Some(
            self.data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        )
    }

    pub fn encoded_len(&self) -> usize {
        2 + 8 * self.shape.len() + self.data.len()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.reserve(self.encoded_len());
        out.push(self.dtype.code());
        out.push(self.shape.len() as u8);
        for d in &self.shape {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&self.data);
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.encoded_len());
    t.encode_into(&mut out);
    out
}

/// Decodes a tensor that must occupy the whole of `bytes`.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, WireError> {
    let mut r = ByteReader::new(bytes);
    let dtype = Dtype::from_code(r.u8()?)?;
    let ndim = r.u8()? as usize;
    if ndim == 0 || ndim > MAX_RANK {
        return Err(WireError::BadRank(ndim));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.u64()?);
    }
    Tensor::new(dtype, shape, r.rest().to_vec())
}

/// A validated store key: 1..=255 bytes of UTF-8 without control bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorKey(String);

impl TensorKey {
    pub fn new(key: impl Into<String>) -> Result<Self, WireError> {
        let key = key.into();
        if key.is_empty() || key.len() > MAX_KEY_LEN {
            return Err(WireError::BadKey(format!("length {} outside 1..=255", key.len())));
        }
        if key.bytes().any(|b| b < 0x20) {
            return Err(WireError::BadKey(format!("{key:?} contains control bytes")));
        }
        Ok(TensorKey(key))
    }

    /// Canonical producer key `<producer>.<field>.<step>`.
    pub fn producer(producer: u32, field: &str, step: u64) -> Result<Self, WireError> {
        TensorKey::new(format!("{producer}.{field}.{step}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }

    /// Leading dot-separated segment when it is a decimal integer.
    pub fn owner(&self) -> Option<u64> {
        self.0.split('.').next()?.parse().ok()
    }
}

impl fmt::Display for TensorKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<&str> for TensorKey {
    type Error = WireError;

    fn try_from(value: &str) -> Result<Self, Self::Error> {
        TensorKey::new(value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Command {
    Ping = 0x01,
    PutTensor = 0x02,
    GetTensor = 0x03,
    DelTensor = 0x04,
    Exists = 0x05,
    PutMeta = 0x06,
    GetMeta = 0x07,
    SetModel = 0x08,
    GetModel = 0x09,
    RunModel = 0x0A,
    Info = 0x0B,
    Flush = 0x0C,
}

pub const RESPONSE_BIT: u8 = 0x80;

impl Command {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0x01 => Command::Ping,
            0x02 => Command::PutTensor,
            0x03 => Command::GetTensor,
            0x04 => Command::DelTensor,
            0x05 => Command::Exists,
            0x06 => Command::PutMeta,
            0x07 => Command::GetMeta,
            0x08 => Command::SetModel,
            0x09 => Command::GetModel,
            0x0A => Command::RunModel,
            0x0B => Command::Info,
            0x0C => Command::Flush,
            _ => return None,
        })
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn response_code(self) -> u8 {
        self as u8 | RESPONSE_BIT
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::Ping => "PING",
            Command::PutTensor => "PUT_TENSOR",
            Command::GetTensor => "GET_TENSOR",
            Command::DelTensor => "DEL_TENSOR",
            Command::Exists => "EXISTS",
            Command::PutMeta => "PUT_META",
            Command::GetMeta => "GET_META",
            Command::SetModel => "SET_MODEL",
            Command::GetModel => "GET_MODEL",
            Command::RunModel => "RUN_MODEL",
            Command::Info => "INFO",
            Command::Flush => "FLUSH",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum StatusCode {
    Ok = 0,
    NotFound = 1,
    BadRequest = 2,
    ExecError = 3,
    OutOfMemory = 4,
    WrongShard = 5,
    Internal = 6,
}

impl StatusCode {
    pub fn from_code(code: u8) -> Result<Self, WireError> {
        Ok(match code {
            0 => StatusCode::Ok,
            1 => StatusCode::NotFound,
            2 => StatusCode::BadRequest,
            3 => StatusCode::ExecError,
            4 => StatusCode::OutOfMemory,
            5 => StatusCode::WrongShard,
            6 => StatusCode::Internal,
            other => return Err(WireError::UnknownStatus(other)),
        })
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            StatusCode::Ok => "OK",
            StatusCode::NotFound => "NOT_FOUND",
            StatusCode::BadRequest => "BAD_REQUEST",
            StatusCode::ExecError => "EXEC_ERROR",
            StatusCode::OutOfMemory => "OUT_OF_MEMORY",
            StatusCode::WrongShard => "WRONG_SHARD",
            StatusCode::Internal => "INTERNAL",
        }
    }
}

impl fmt::Display for StatusCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scalar or string metadata stored next to tensors.
#[derive(Debug, Clone, PartialEq)]
pub enum MetaValue {
    Str(String),
    Int(i64),
    Float(f64),
}

impl MetaValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            MetaValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            MetaValue::Float(v) => Some(*v),
            MetaValue::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            MetaValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), WireError> {
        match self {
            MetaValue::Str(s) => {
                if s.len() > MAX_META_STRING {
                    return Err(WireError::MetaTooLong(s.len()));
                }
                out.push(0);
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            MetaValue::Int(v) => {
                out.push(1);
                out.extend_from_slice(&v.to_le_bytes());
            }
            MetaValue::Float(v) => {
                out.push(2);
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(())
    }

    pub fn decode_from(r: &mut ByteReader<'_>) -> Result<Self, WireError> {
        match r.u8()? {
            0 => {
                let len = r.u32()? as usize;
                if len > MAX_META_STRING {
                    return Err(WireError::MetaTooLong(len));
                }
                let bytes = r.take(len)?;
                let s = std::str::from_utf8(bytes).map_err(|_| WireError::Utf8("meta string"))?;
                Ok(MetaValue::Str(s.to_owned()))
            }
            1 => Ok(MetaValue::Int(r.i64()?)),
            2 => Ok(MetaValue::Float(r.f64()?)),
            tag => Err(WireError::UnknownMetaTag(tag)),
        }
    }
}

impl fmt::Display for MetaValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetaValue::Str(s) => write!(f, "{s}"),
            MetaValue::Int(v) => write!(f, "{v}"),
            MetaValue::Float(v) => write!(f, "{v}"),
        }
    }
}

pub fn encode_meta(v: &MetaValue) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::new();
    v.encode_into(&mut out)?;
    Ok(out)
}

pub fn decode_meta(bytes: &[u8]) -> Result<MetaValue, WireError> {
    let mut r = ByteReader::new(bytes);
    let v = MetaValue::decode_from(&mut r)?;
    r.finish()?;
    Ok(v)
}
