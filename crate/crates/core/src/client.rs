//! Blocking client for one rank: connect, send/retrieve tensors and metadata,
//! poll for keys, load and evaluate models.
//!
//! Co-located clients talk to exactly one store. Clustered clients hold one
//! connection per shard and route each key with `fnv1a64(key) mod shards`.

use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::exec::{parse_model, ModelError};
use crate::store::ShardMap;
use crate::timing::TimingSink;
use crate::wire::{
    decode_info, decode_meta, decode_model_body, decode_status_response, decode_tensor,
    encode_key_request, encode_put_meta, encode_put_tensor, encode_run_model, encode_set_model,
    read_frame, write_frame, Command, Frame, MetaValue, ReadFrameError, RunModelRequest,
    SetModelRequest, StatusCode, Tensor, TensorKey, WireError, DEFAULT_MAX_PAYLOAD, RESPONSE_BIT,
};

pub const ENV_DB_ADDR: &str = "ISF_DB_ADDR";
pub const ENV_SHARD_MAP: &str = "ISF_SHARD_MAP";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Colocated,
    Clustered,
}

#[derive(Debug, Clone)]
pub enum AddressSource {
    /// Read the named environment variable at connect time.
    Env(String),
    Explicit(ShardMap),
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub mode: Mode,
    pub source: AddressSource,
    pub connect_timeout_ms: u64,
    pub request_timeout_ms: u64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub max_payload: usize,
}

impl ClientConfig {
    fn with(mode: Mode, source: AddressSource) -> Self {
        ClientConfig {
            mode,
            source,
            connect_timeout_ms: 1000,
            request_timeout_ms: 60_000,
            max_attempts: 5,
            backoff_ms: 100,
            max_payload: DEFAULT_MAX_PAYLOAD,
        }
    }

    pub fn colocated(addr: impl Into<String>) -> Self {
        let map = ShardMap::new(vec![addr.into()]).expect("one address");
        ClientConfig::with(Mode::Colocated, AddressSource::Explicit(map))
    }

    pub fn clustered(map: ShardMap) -> Self {
        ClientConfig::with(Mode::Clustered, AddressSource::Explicit(map))
    }

    /// Clustered when `ISF_SHARD_MAP` is set, otherwise co-located on `ISF_DB_ADDR`.
    pub fn from_env() -> Self {
        if std::env::var_os(ENV_SHARD_MAP).is_some() {
            ClientConfig::with(Mode::Clustered, AddressSource::Env(ENV_SHARD_MAP.into()))
        } else {
            ClientConfig::with(Mode::Colocated, AddressSource::Env(ENV_DB_ADDR.into()))
        }
    }

    pub fn resolve(&self) -> Result<ShardMap, ClientError> {
        let map = match &self.source {
            AddressSource::Explicit(map) => map.clone(),
            AddressSource::Env(var) => {
                let value = std::env::var(var)
                    .map_err(|_| ClientError::Config(format!("environment variable {var} not set")))?;
                value
                    .parse::<ShardMap>()
                    .map_err(|_| ClientError::Config(format!("{var} lists no addresses")))?
            }
        };
        if self.mode == Mode::Colocated && map.count() != 1 {
            return Err(ClientError::Config(format!(
                "co-located mode needs exactly one address, got {}",
                map.count()
            )));
        }
        Ok(map)
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("could not connect to {addr} after {attempts} attempts: {source}")]
    Connect {
        addr: String,
        attempts: u32,
        source: io::Error,
    },
    #[error("request to {addr} timed out")]
    Timeout { addr: String },
    #[error("connection to {addr} failed: {source}")]
    Io { addr: String, source: io::Error },
    #[error("{status}: {message}")]
    Status { status: StatusCode, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("routing error: {0}")]
    Routing(String),
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
    #[error("configuration error: {0}")]
    Config(String),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }

    pub fn is_not_found(&self) -> bool {
        self.status() == Some(StatusCode::NotFound)
    }

    /// Timeouts may be retried by the caller; nothing else should be.
    pub fn is_retriable(&self) -> bool {
        matches!(self, ClientError::Timeout { .. })
    }
}

struct Connection {
    addr: String,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    next_id: u64,
}

impl Connection {
    fn open(addr: &str, cfg: &ClientConfig) -> Result<Self, ClientError> {
        let mut last_err = io::Error::new(io::ErrorKind::NotFound, "no address resolved");
        for attempt in 1..=cfg.max_attempts.max(1) {
            match Connection::try_open(addr, cfg) {
                Ok(mut conn) => match conn.call(Command::Ping, Vec::new(), cfg.max_payload) {
                    Ok(_) => return Ok(conn),
                    Err(ClientError::Io { source, .. }) => last_err = source,
                    Err(ClientError::Timeout { .. }) => {
                        last_err = io::ErrorKind::TimedOut.into()
                    }
                    Err(e) => return Err(e),
                },
                Err(e) => last_err = e,
            }
            if attempt < cfg.max_attempts {
                std::thread::sleep(Duration::from_millis(cfg.backoff_ms));
            }
        }
        Err(ClientError::Connect {
            addr: addr.to_owned(),
            attempts: cfg.max_attempts.max(1),
            source: last_err,
        })
    }

    fn try_open(addr: &str, cfg: &ClientConfig) -> io::Result<Self> {
        let sock: SocketAddr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, "address did not resolve"))?;
        let stream =
            TcpStream::connect_timeout(&sock, Duration::from_millis(cfg.connect_timeout_ms.max(1)))?;
        stream.set_nodelay(true)?;
        let timeout = Duration::from_millis(cfg.request_timeout_ms.max(1));
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        Ok(Connection {
            addr: addr.to_owned(),
            reader: BufReader::with_capacity(1 << 16, stream.try_clone()?),
            writer: BufWriter::with_capacity(1 << 16, stream),
            next_id: 1,
        })
    }

    fn io_err(&self, e: io::Error) -> ClientError {
        match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => ClientError::Timeout {
                addr: self.addr.clone(),
            },
            _ => ClientError::Io {
                addr: self.addr.clone(),
                source: e,
            },
        }
    }

    /// One synchronous request/response exchange. Returns the OK body.
    fn call(
        &mut self,
        command: Command,
        payload: Vec<u8>,
        max_payload: usize,
    ) -> Result<Vec<u8>, ClientError> {
        if payload.len() > max_payload {
            return Err(WireError::Oversize {
                len: payload.len() as u64,
                cap: max_payload,
            }
            .into());
        }
        let id = self.next_id;
        self.next_id += 1;
        let frame = Frame::new(command.code(), id, payload);
        write_frame(&mut self.writer, &frame).map_err(|e| self.io_err(e))?;
        let resp = match read_frame(&mut self.reader, max_payload) {
            Ok(Some(f)) => f,
            Ok(None) => {
                return Err(self.io_err(io::ErrorKind::UnexpectedEof.into()));
            }
            Err(ReadFrameError::Io(e)) => return Err(self.io_err(e)),
            Err(ReadFrameError::Malformed { error, .. }) => return Err(error.into()),
        };
        if resp.request_id != id || resp.command != command.code() | RESPONSE_BIT {
            return Err(ClientError::Protocol(format!(
                "response (cmd 0x{:02x}, id {}) does not match request (cmd 0x{:02x}, id {id})",
                resp.command,
                resp.request_id,
                command.code()
            )));
        }
        let (status, body) = decode_status_response(&resp.payload)?;
        if status != StatusCode::Ok {
            return Err(ClientError::Status {
                status,
                message: String::from_utf8_lossy(body).into_owned(),
            });
        }
        let mut payload = resp.payload;
        payload.remove(0);
        Ok(payload)
    }
}

/// Picks a key derived from `base` that routes to `shard`: `base` itself if
/// it already does, else the first `base#n` that does.
pub fn key_on_shard(base: &str, shard: usize, map: &ShardMap) -> Result<TensorKey, WireError> {
    let base_key = TensorKey::new(base)?;
    if map.shard_for(base_key.as_bytes()) == shard {
        return Ok(base_key);
    }
    (1u32..)
        .map(|n| format!("{base}#{n}"))
        .find(|k| map.shard_for(k.as_bytes()) == shard)
        .map(TensorKey::new)
        .expect("some suffix routes to every shard")
}

pub struct Client {
    config: ClientConfig,
    shards: ShardMap,
    conns: Vec<Connection>,
    sink: Option<TimingSink>,
    last_poll_tries: u32,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client")
            .field("mode", &self.config.mode)
            .field("shards", &self.shards)
            .finish()
    }
}

fn key(k: &str) -> Result<TensorKey, ClientError> {
    Ok(TensorKey::new(k)?)
}

impl Client {
    pub fn connect(config: ClientConfig) -> Result<Self, ClientError> {
        Client::connect_with_sink(config, None)
    }

    /// Connects to every shard (PING included). With a sink attached the
    /// total connect time is recorded as `client_init`.
    pub fn connect_with_sink(
        config: ClientConfig,
        mut sink: Option<TimingSink>,
    ) -> Result<Self, ClientError> {
        let started = Instant::now();
        let shards = config.resolve()?;
        let conns = shards
            .addresses()
            .iter()
            .map(|a| Connection::open(a, &config))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(s) = sink.as_mut() {
            s.record("connect", "client_init", 0, started.elapsed().as_secs_f64() * 1e6);
        }
        Ok(Client {
            config,
            shards,
            conns,
            sink,
            last_poll_tries: 0,
        })
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn shard_map(&self) -> &ShardMap {
        &self.shards
    }

    pub fn connection_count(&self) -> usize {
        self.conns.len()
    }

    pub fn sink(&self) -> Option<&TimingSink> {
        self.sink.as_ref()
    }

    pub fn sink_mut(&mut self) -> Option<&mut TimingSink> {
        self.sink.as_mut()
    }

    pub fn take_sink(&mut self) -> Option<TimingSink> {
        self.sink.take()
    }

    pub fn set_iter(&mut self, iter: i64) {
        if let Some(s) = self.sink.as_mut() {
            s.iter = iter;
        }
    }

    pub fn shard_for(&self, key: &str) -> usize {
        match self.config.mode {
            Mode::Colocated => 0,
            Mode::Clustered => self.shards.shard_for(key.as_bytes()),
        }
    }

    fn call(&mut self, shard: usize, command: Command, payload: Vec<u8>) -> Result<Vec<u8>, ClientError> {
        let cap = self.config.max_payload;
        self.conns[shard].call(command, payload, cap)
    }

    fn timed<T>(
        &mut self,
        op: &str,
        component: &str,
        bytes: impl FnOnce(&T) -> u64,
        f: impl FnOnce(&mut Self) -> Result<T, ClientError>,
    ) -> Result<T, ClientError> {
        let started = Instant::now();
        let out = f(self)?;
        let micros = started.elapsed().as_secs_f64() * 1e6;
        let n = bytes(&out);
        if let Some(s) = self.sink.as_mut() {
            s.record(op, component, n, micros);
        }
        Ok(out)
    }

    pub fn ping(&mut self, shard: usize) -> Result<(), ClientError> {
        self.call(shard, Command::Ping, Vec::new()).map(drop)
    }

    pub fn put_tensor(&mut self, k: &str, tensor: &Tensor) -> Result<(), ClientError> {
        let n = tensor.data().len() as u64;
        self.timed("put_tensor", "send", |_| n, |c| {
            let shard = c.shard_for(k);
            let payload = encode_put_tensor(&key(k)?, tensor);
            c.call(shard, Command::PutTensor, payload).map(drop)
        })
    }

    pub fn get_tensor(&mut self, k: &str) -> Result<Tensor, ClientError> {
        self.timed("get_tensor", "retrieve", |t: &Tensor| t.data().len() as u64, |c| {
            let shard = c.shard_for(k);
            let body = c.call(shard, Command::GetTensor, encode_key_request(&key(k)?))?;
            Ok(decode_tensor(&body)?)
        })
    }

    pub fn delete_tensor(&mut self, k: &str) -> Result<(), ClientError> {
        self.timed("delete_tensor", "cleanup", |_| 0, |c| {
            let shard = c.shard_for(k);
            c.call(shard, Command::DelTensor, encode_key_request(&key(k)?)).map(drop)
        })
    }

    fn exists_raw(&mut self, k: &TensorKey) -> Result<bool, ClientError> {
        let shard = self.shard_for(k.as_str());
        let body = self.call(shard, Command::Exists, encode_key_request(k))?;
        match body.as_slice() {
            [b] => Ok(*b != 0),
            _ => Err(ClientError::Protocol("EXISTS body must be one byte".into())),
        }
    }

    pub fn tensor_exists(&mut self, k: &str) -> Result<bool, ClientError> {
        self.timed("tensor_exists", "poll", |_| 0, |c| c.exists_raw(&key(k)?))
    }

    /// Issues EXISTS up to `max_tries` times, sleeping `interval_ms` between
    /// tries. Recorded as one `poll` call; the try count is kept in
    /// [`Client::last_poll_tries`].
    pub fn poll_key(&mut self, k: &str, interval_ms: u64, max_tries: u32) -> Result<bool, ClientError> {
        if interval_ms == 0 || max_tries == 0 {
            return Err(ClientError::Config("poll needs interval_ms >= 1 and max_tries >= 1".into()));
        }
        let tk = key(k)?;
        self.timed("poll_key", "poll", |_| 0, |c| {
            for attempt in 1..=max_tries {
                c.last_poll_tries = attempt;
                if c.exists_raw(&tk)? {
                    return Ok(true);
                }
                if attempt < max_tries {
                    std::thread::sleep(Duration::from_millis(interval_ms));
                }
            }
            Ok(false)
        })
    }

    pub fn last_poll_tries(&self) -> u32 {
        self.last_poll_tries
    }

    pub fn put_meta(&mut self, k: &str, value: &MetaValue) -> Result<(), ClientError> {
        self.timed("put_meta", "meta", |_| 0, |c| {
            let shard = c.shard_for(k);
            let payload = encode_put_meta(&key(k)?, value)?;
            c.call(shard, Command::PutMeta, payload).map(drop)
        })
    }

    pub fn get_meta(&mut self, k: &str) -> Result<MetaValue, ClientError> {
        self.timed("get_meta", "meta", |_| 0, |c| {
            let shard = c.shard_for(k);
            let body = c.call(shard, Command::GetMeta, encode_key_request(&key(k)?))?;
            Ok(decode_meta(&body)?)
        })
    }

    /// Validates the blob locally, then stores it on every shard.
    pub fn set_model(&mut self, name: &str, blob: &[u8], device_hint: &str) -> Result<(), ClientError> {
        parse_model(blob)?;
        let req = SetModelRequest {
            key: key(name)?,
            device_hint: device_hint.to_owned(),
            blob: blob.to_vec(),
        };
        let payload = encode_set_model(&req)?;
        let n = blob.len() as u64;
        self.timed("set_model", "model_load", |_| n, |c| {
            for shard in 0..c.conns.len() {
                c.call(shard, Command::SetModel, payload.clone())?;
            }
            Ok(())
        })
    }

    pub fn set_model_from_file(
        &mut self,
        name: &str,
        path: &Path,
        device_hint: &str,
    ) -> Result<(), ClientError> {
        let blob = std::fs::read(path)
            .map_err(|e| ClientError::Config(format!("reading {}: {e}", path.display())))?;
        self.set_model(name, &blob, device_hint)
    }

    /// Returns `(device_hint, blob)` as stored on `shard`.
    pub fn get_model(&mut self, name: &str, shard: usize) -> Result<(String, Vec<u8>), ClientError> {
        let body = self.call(shard, Command::GetModel, encode_key_request(&key(name)?))?;
        Ok(decode_model_body(&body)?)
    }

    /// Evaluates `model` on the shard owning the inputs. Every input and
    /// output key must route to the same shard; this is checked before any
    /// request is sent.
    pub fn run_model(
        &mut self,
        model: &str,
        inputs: &[&str],
        outputs: &[&str],
    ) -> Result<(), ClientError> {
        let first = inputs
            .first()
            .ok_or_else(|| ClientError::Routing("run_model needs at least one input".into()))?;
        let shard = self.shard_for(first);
        if let Some(stray) = inputs
            .iter()
            .chain(outputs)
            .find(|k| self.shard_for(k) != shard)
        {
            return Err(ClientError::Routing(format!(
                "key {stray} routes to shard {}, inputs live on shard {shard}",
                self.shard_for(stray)
            )));
        }
        let req = RunModelRequest {
            model: key(model)?,
            inputs: inputs.iter().map(|k| key(k)).collect::<Result<_, _>>()?,
            outputs: outputs.iter().map(|k| key(k)).collect::<Result<_, _>>()?,
        };
        let payload = encode_run_model(&req);
        self.timed("run_model", "model_eval", |_| 0, |c| {
            c.call(shard, Command::RunModel, payload).map(drop)
        })
    }

    pub fn info(&mut self, shard: usize) -> Result<Vec<(String, MetaValue)>, ClientError> {
        let body = self.call(shard, Command::Info, Vec::new())?;
        Ok(decode_info(&body)?)
    }

    pub fn flush(&mut self, shard: usize) -> Result<(), ClientError> {
        self.call(shard, Command::Flush, Vec::new()).map(drop)
    }
}

/// Looks up an integer INFO counter.
pub fn info_int(info: &[(String, MetaValue)], name: &str) -> Option<i64> {
    info.iter()
        .find(|(k, _)| k == name)
        .and_then(|(_, v)| v.as_int())
}
