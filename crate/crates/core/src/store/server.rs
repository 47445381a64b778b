use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};
use parking_lot::Mutex;
use serde::Serialize;

use super::{telemetry, Store, StoreError};
use crate::wire::{
    decode_key_request, decode_put_meta, decode_put_tensor, decode_run_model, decode_set_model,
    encode_info, encode_model_body, read_frame, write_frame, Command, Frame, MetaValue,
    ReadFrameError, StatusCode, WireError, DEFAULT_MAX_PAYLOAD, RESPONSE_BIT,
};

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub max_bytes: u64,
    /// Executor threads shared by all connections; 0 runs each request on
    /// its connection's thread.
    pub workers: usize,
    pub cpus: Vec<usize>,
    pub max_payload: usize,
    /// `(index, count)` when this store is one shard of a clustered deployment.
    pub shard: Option<(usize, usize)>,
    /// Emit one JSON log line per request on stdout.
    pub log_requests: bool,
    /// Emulated network interface shared by all connections.
    pub link: Option<LinkModel>,
}

/// A single serialized interface: each request/response pair occupies it
/// for `overhead_us + bytes / bytes_per_sec`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub bytes_per_sec: f64,
    pub overhead_us: f64,
}

impl LinkModel {
    pub fn transfer_time(&self, bytes: usize) -> Duration {
        Duration::from_secs_f64(self.overhead_us * 1e-6 + bytes as f64 / self.bytes_per_sec)
    }
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            max_bytes: 4 << 30,
            workers: 0,
            cpus: Vec::new(),
            max_payload: DEFAULT_MAX_PAYLOAD,
            shard: None,
            log_requests: false,
            link: None,
        }
    }
}

#[derive(Serialize)]
struct LogLine {
    ts: f64,
    conn: u64,
    command: &'static str,
    status: &'static str,
    bytes: usize,
    micros: f64,
}

struct Job {
    frame: Frame,
    reply: Sender<Vec<u8>>,
}

struct Context {
    store: Arc<Store>,
    listen_port: u16,
    max_payload: usize,
    jobs: Option<Sender<Job>>,
    log: Option<Sender<LogLine>>,
    link: Option<(LinkModel, Mutex<()>)>,
}

type Outcome = Result<Vec<u8>, (StatusCode, String)>;

fn bad_request(e: WireError) -> (StatusCode, String) {
    (StatusCode::BadRequest, e.to_string())
}

fn store_err(e: StoreError) -> (StatusCode, String) {
    (e.status(), e.to_string())
}

fn ok_body() -> Vec<u8> {
    vec![StatusCode::Ok.code()]
}

impl Context {
    fn dispatch(&self, command: Command, payload: &[u8]) -> Outcome {
        let store = &self.store;
        match command {
            Command::Ping => Ok(ok_body()),
            Command::PutTensor => {
                let (key, tensor) = decode_put_tensor(payload).map_err(bad_request)?;
                store.put_tensor(key, tensor).map_err(store_err)?;
                Ok(ok_body())
            }
            Command::GetTensor => {
                let key = decode_key_request(payload).map_err(bad_request)?;
                let t = store.get_tensor(&key).map_err(store_err)?;
                let mut out = Vec::with_capacity(1 + t.encoded_len());
                out.push(StatusCode::Ok.code());
                t.encode_into(&mut out);
                Ok(out)
            }
            Command::DelTensor => {
                let key = decode_key_request(payload).map_err(bad_request)?;
                store.del_tensor(&key).map_err(store_err)?;
                Ok(ok_body())
            }
            Command::Exists => {
                let key = decode_key_request(payload).map_err(bad_request)?;
                let found = store.exists(&key).map_err(store_err)?;
                Ok(vec![StatusCode::Ok.code(), u8::from(found)])
            }
            Command::PutMeta => {
                let (key, value) = decode_put_meta(payload).map_err(bad_request)?;
                store.put_meta(key, value).map_err(store_err)?;
                Ok(ok_body())
            }
            Command::GetMeta => {
                let key = decode_key_request(payload).map_err(bad_request)?;
                let v = store.get_meta(&key).map_err(store_err)?;
                let mut out = ok_body();
                v.encode_into(&mut out).map_err(bad_request)?;
                Ok(out)
            }
            Command::SetModel => {
                let req = decode_set_model(payload).map_err(bad_request)?;
                store
                    .set_model(req.key, req.device_hint, req.blob)
                    .map_err(store_err)?;
                Ok(ok_body())
            }
            Command::GetModel => {
                let key = decode_key_request(payload).map_err(bad_request)?;
                let m = store.get_model(&key).map_err(store_err)?;
                let body = encode_model_body(&m.device_hint, &m.blob).map_err(bad_request)?;
                let mut out = ok_body();
                out.extend_from_slice(&body);
                Ok(out)
            }
            Command::RunModel => {
                let req = decode_run_model(payload).map_err(bad_request)?;
                store.run_model(&req).map_err(store_err)?;
                Ok(ok_body())
            }
            Command::Info => {
                let mut entries = store.info();
                let outbound = telemetry::outbound_connections(self.listen_port)
                    .map_or(-1, |n| n as i64);
                entries.push(("outbound_connections".into(), MetaValue::Int(outbound)));
                let mut out = ok_body();
                out.extend(encode_info(&entries).map_err(bad_request)?);
                Ok(out)
            }
            Command::Flush => {
                store.flush();
                Ok(ok_body())
            }
        }
    }

    /// Full response payload (status byte first) for one request frame.
    fn execute(&self, frame: &Frame) -> Vec<u8> {
        let outcome = match Command::from_code(frame.command) {
            Some(cmd) => self.dispatch(cmd, &frame.payload),
            None => Err((
                StatusCode::BadRequest,
                format!("unknown command 0x{:02x}", frame.command),
            )),
        };
        self.store.note_request();
        match outcome {
            Ok(body) => body,
            Err((status, msg)) => error_body(status, &msg),
        }
    }

    fn run(&self, frame: Frame) -> (Frame, Vec<u8>) {
        let body = match &self.jobs {
            None => self.execute(&frame),
            Some(jobs) => {
                let (tx, rx) = bounded(1);
                let id = frame.request_id;
                let cmd = frame.command;
                if jobs.send(Job { frame, reply: tx }).is_err() {
                    return (
                        Frame::new(cmd | RESPONSE_BIT, id, vec![]),
                        error_body(StatusCode::Internal, "worker pool stopped"),
                    );
                }
                let body = rx
                    .recv()
                    .unwrap_or_else(|_| error_body(StatusCode::Internal, "worker failed"));
                return (Frame::new(cmd | RESPONSE_BIT, id, vec![]), body);
            }
        };
        (
            Frame::new(frame.command | RESPONSE_BIT, frame.request_id, vec![]),
            body,
        )
    }
}

fn error_body(status: StatusCode, msg: &str) -> Vec<u8> {
    let mut out = vec![status.code()];
    out.extend_from_slice(msg.as_bytes());
    out
}

fn now_ms() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64() * 1e3)
}

fn command_name(code: u8) -> &'static str {
    Command::from_code(code).map_or("UNKNOWN", Command::name)
}

fn status_name(body: &[u8]) -> &'static str {
    body.first()
        .and_then(|&b| StatusCode::from_code(b).ok())
        .map_or("INTERNAL", StatusCode::name)
}

fn serve_connection(stream: TcpStream, ctx: Arc<Context>, conn: u64) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::with_capacity(1 << 16, stream.try_clone()?);
    let mut writer = BufWriter::with_capacity(1 << 16, stream);
    loop {
        let started = Instant::now();
        let (mut header, body, req_len, resume) = match read_frame(&mut reader, ctx.max_payload) {
            Ok(None) => return Ok(()),
            Ok(Some(frame)) => {
                let len = frame.payload.len();
                let (h, b) = ctx.run(frame);
                (h, b, len, true)
            }
            Err(ReadFrameError::Io(e)) => return Err(e),
            Err(ReadFrameError::Malformed {
                error,
                command,
                request_id,
                resumable,
            }) => (
                Frame::new(
                    command.unwrap_or(0) | RESPONSE_BIT,
                    request_id.unwrap_or(0),
                    vec![],
                ),
                error_body(StatusCode::BadRequest, &error.to_string()),
                0,
                resumable,
            ),
        };
        let command = command_name(header.command & !RESPONSE_BIT);
        let status = status_name(&body);
        let resp_len = body.len();
        if let Some((model, wire)) = &ctx.link {
            let _busy = wire.lock();
            thread::sleep(model.transfer_time(req_len + resp_len));
        }
        header.payload = body;
        write_frame(&mut writer, &header)?;
        if let Some(log) = &ctx.log {
            let _ = log.send(LogLine {
                ts: now_ms(),
                conn,
                command,
                status,
                bytes: req_len + resp_len,
                micros: started.elapsed().as_secs_f64() * 1e6,
            });
        }
        if !resume {
            writer.flush()?;
            return Ok(());
        }
    }
}

fn spawn_workers(ctx: &Arc<Context>, rx: Receiver<Job>, n: usize) {
    for i in 0..n {
        let ctx = Arc::clone(ctx);
        let rx = rx.clone();
        thread::Builder::new()
            .name(format!("store-worker-{i}"))
            .spawn(move || {
                for job in rx.iter() {
                    let body = ctx.execute(&job.frame);
                    let _ = job.reply.send(body);
                }
            })
            .expect("spawn worker");
    }
}

fn spawn_logger() -> Sender<LogLine> {
    let (tx, rx) = unbounded::<LogLine>();
    thread::Builder::new()
        .name("store-log".into())
        .spawn(move || {
            let stdout = io::stdout();
            let mut out = BufWriter::new(stdout.lock());
            while let Ok(line) = rx.recv() {
                let _ = serde_json::to_writer(&mut out, &line);
                let _ = out.write_all(b"\n");
                if rx.is_empty() {
                    let _ = out.flush();
                }
            }
        })
        .expect("spawn logger");
    tx
}

fn build(listener: &TcpListener, config: &StoreConfig, log: bool) -> io::Result<Arc<Context>> {
    let mut store = Store::new(config.max_bytes);
    if let Some((index, count)) = config.shard {
        store = store.with_shard(index, count);
    }
    let (jobs, job_rx) = if config.workers > 0 {
        let (tx, rx) = unbounded();
        (Some(tx), Some(rx))
    } else {
        (None, None)
    };
    let ctx = Arc::new(Context {
        store: Arc::new(store),
        listen_port: listener.local_addr()?.port(),
        max_payload: config.max_payload,
        jobs,
        log: if log { Some(spawn_logger()) } else { None },
        link: config.link.map(|l| (l, Mutex::new(()))),
    });
    if let Some(rx) = job_rx {
        spawn_workers(&ctx, rx, config.workers);
    }
    Ok(ctx)
}

fn accept_loop(listener: TcpListener, ctx: Arc<Context>, stop: Option<Arc<AtomicBool>>) {
    let next_conn = AtomicU64::new(0);
    for stream in listener.incoming() {
        if stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst)) {
            break;
        }
        let Ok(stream) = stream else { continue };
        ctx.store.note_connection();
        let conn = next_conn.fetch_add(1, Ordering::Relaxed);
        let ctx = Arc::clone(&ctx);
        let _ = thread::Builder::new()
            .name(format!("conn-{conn}"))
            .spawn(move || {
                let _ = serve_connection(stream, ctx, conn);
            });
    }
}

/// Binds, prints `READY <addr>` and serves until the process is killed.
pub fn serve_forever(bind: &str, config: &StoreConfig) -> io::Result<()> {
    if !config.cpus.is_empty() {
        let applied = telemetry::apply_cpu_affinity(&config.cpus);
        eprintln!("cpu affinity requested {:?}, applied {:?}", config.cpus, applied);
    }
    let listener = TcpListener::bind(bind)?;
    let addr = listener.local_addr()?;
    let ctx = build(&listener, config, config.log_requests)?;
    {
        let mut out = io::stdout().lock();
        writeln!(out, "READY {addr}")?;
        out.flush()?;
    }
    accept_loop(listener, ctx, None);
    Ok(())
}

/// In-process store server, used by tests and tools.
pub struct ServerHandle {
    addr: SocketAddr,
    store: Arc<Store>,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn start(bind: impl ToSocketAddrs, config: StoreConfig) -> io::Result<Self> {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        let ctx = build(&listener, &config, config.log_requests)?;
        let store = Arc::clone(&ctx.store);
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let accept = thread::Builder::new()
            .name("store-accept".into())
            .spawn(move || accept_loop(listener, ctx, Some(flag)))?;
        Ok(ServerHandle {
            addr,
            store,
            stop,
            accept: Some(accept),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    /// Stops accepting new connections. Open connections finish on their own.
    pub fn shutdown(&mut self) {
        if let Some(h) = self.accept.take() {
            self.stop.store(true, Ordering::SeqCst);
            let _ = TcpStream::connect(self.addr);
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}
