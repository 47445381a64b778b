use std::collections::HashMap;
use std::io::{BufReader, Write};
use std::net::TcpStream;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;

use isf::client::{info_int, Client, ClientConfig};
use isf::exec::{random_affine, Model};
use isf::prng::SplitMix64;
use isf::store::{ServerHandle, StoreConfig};
use isf::wire::{
    decode_status_response, encode_frame, read_frame, Dtype, Frame, StatusCode, Tensor,
    DEFAULT_MAX_PAYLOAD, RESPONSE_BIT,
};

use super::{ensure, SuiteResult};

pub fn start(config: StoreConfig) -> ServerHandle {
    ServerHandle::start("127.0.0.1:0", config).expect("store starts on loopback")
}

pub fn connect(server: &ServerHandle) -> Client {
    Client::connect(ClientConfig::colocated(server.addr().to_string())).expect("client connects")
}

fn versioned(slot: usize, version: u64) -> Tensor {
    let values: Vec<i64> = (0..8)
        .map(|i| (slot as i64) * 1_000_003 + (version as i64) * 31 + i)
        .collect();
    let data = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    Tensor::new(Dtype::I64, vec![8], data).unwrap()
}

fn version_of(slot: usize, t: &Tensor) -> Option<u64> {
    let first = i64::from_le_bytes(t.data().get(..8)?.try_into().ok()?);
    let v = (first - slot as i64 * 1_000_003) / 31;
    (v >= 0 && *t == versioned(slot, v as u64)).then_some(v as u64)
}

/// Single-writer registers shared by `conns` connections. Every GET must
/// return an untorn value no older than the last PUT acknowledged before the
/// GET was sent and no newer than the last PUT issued before its response,
/// and each reader's view of a key never goes backwards.
pub fn linearizable(conns: usize, ops: usize) -> SuiteResult {
    const SLOTS_PER_WRITER: usize = 4;
    let server = start(StoreConfig {
        workers: 4,
        ..StoreConfig::default()
    });
    let slots = conns * SLOTS_PER_WRITER;
    let acked: Arc<Vec<AtomicU64>> = Arc::new((0..slots).map(|_| AtomicU64::new(0)).collect());
    let issued: Arc<Vec<AtomicU64>> = Arc::new((0..slots).map(|_| AtomicU64::new(0)).collect());
    let workers: Vec<_> = (0..conns)
        .map(|w| {
            let mut client = connect(&server);
            let (acked, issued) = (Arc::clone(&acked), Arc::clone(&issued));
            thread::spawn(move || -> Result<(u64, u64), String> {
                let mut rng = SplitMix64::new(0xC0FFEE + w as u64);
                let mut seen = vec![0u64; slots];
                let (mut puts, mut gets) = (0, 0);
                for _ in 0..ops {
                    if rng.below(10) < 4 {
                        let slot = w * SLOTS_PER_WRITER + rng.below(SLOTS_PER_WRITER as u64) as usize;
                        let v = issued[slot].load(Ordering::SeqCst) + 1;
                        issued[slot].store(v, Ordering::SeqCst);
                        client
                            .put_tensor(&format!("reg.{slot}"), &versioned(slot, v))
                            .map_err(|e| e.to_string())?;
                        acked[slot].store(v, Ordering::SeqCst);
                        puts += 1;
                        continue;
                    }
                    let slot = rng.below(slots as u64) as usize;
                    let lo = acked[slot].load(Ordering::SeqCst);
                    let got = client.get_tensor(&format!("reg.{slot}"));
                    let hi = issued[slot].load(Ordering::SeqCst);
                    gets += 1;
                    let v = match got {
                        Ok(t) => version_of(slot, &t)
                            .ok_or_else(|| format!("reg.{slot}: torn or foreign value"))?,
                        Err(e) if e.is_not_found() => 0,
                        Err(e) => return Err(e.to_string()),
                    };
                    if v < lo || v > hi || v < seen[slot] {
                        return Err(format!(
                            "reg.{slot}: read version {v}, acked {lo}, issued {hi}, previously seen {}",
                            seen[slot]
                        ));
                    }
                    seen[slot] = v;
                }
                Ok((puts, gets))
            })
        })
        .collect();
    let (mut puts, mut gets) = (0, 0);
    for w in workers {
        let (p, g) = w.join().map_err(|_| "worker panicked".to_string())??;
        puts += p;
        gets += g;
    }
    Ok(format!("{conns} connections x {ops} ops ({puts} puts, {gets} gets), 0 violations"))
}

/// Random puts, overwrites, deletes and model loads against a small cap;
/// INFO bytes_used must equal the shadow map's total after every step.
pub fn bytes_oracle(ops: usize) -> SuiteResult {
    const CAP: u64 = 96 * 1024;
    let server = start(StoreConfig {
        max_bytes: CAP,
        ..StoreConfig::default()
    });
    let mut client = connect(&server);
    let mut rng = SplitMix64::new(42);
    let mut shadow: HashMap<String, u64> = HashMap::new();
    let mut rejected = 0;
    for i in 0..ops {
        let r = rng.below(10);
        let name = format!("{}.k.{}", rng.below(4), rng.below(24));
        let total: u64 = shadow.values().sum();
        let freed = shadow.get(&name).copied().unwrap_or(0);
        if r < 6 {
            let len = 1 + rng.below(16 * 1024) as usize;
            let t = Tensor::new(Dtype::U8, vec![len as u64], vec![i as u8; len]).unwrap();
            let fits = total - freed + len as u64 <= CAP;
            match client.put_tensor(&name, &t) {
                Ok(()) if fits => {
                    shadow.insert(name, len as u64);
                }
                Err(e) if !fits && e.status() == Some(StatusCode::OutOfMemory) => rejected += 1,
                other => return Err(format!("op {i}: put {len} bytes (fits={fits}) gave {other:?}")),
            }
        } else if r < 9 {
            let had = shadow.remove(&name).is_some();
            match client.delete_tensor(&name) {
                Ok(()) if had => {}
                Err(e) if !had && e.is_not_found() => {}
                other => return Err(format!("op {i}: delete (present={had}) gave {other:?}")),
            }
        } else {
            let model_name = format!("m.{}", rng.below(3));
            let blob = match rng.below(2) {
                0 => Model::Identity.to_blob(),
                _ => random_affine(1 + rng.below(16) as u32, 1 + rng.below(16) as u32, i as u64).to_blob(),
            };
            let total: u64 = shadow.values().sum();
            let freed = shadow.get(&model_name).copied().unwrap_or(0);
            let fits = total - freed + blob.len() as u64 <= CAP;
            match client.set_model(&model_name, &blob, "cpu") {
                Ok(()) if fits => {
                    shadow.insert(model_name, blob.len() as u64);
                }
                Err(e) if !fits && e.status() == Some(StatusCode::OutOfMemory) => rejected += 1,
                other => return Err(format!("op {i}: set_model (fits={fits}) gave {other:?}")),
            }
        }
        let want: u64 = shadow.values().sum();
        let info = client.info(0).map_err(|e| e.to_string())?;
        let got = info_int(&info, "bytes_used").ok_or("INFO lacks bytes_used")?;
        ensure(got as u64 == want, || format!("op {i}: bytes_used {got}, shadow {want}"))?;
        ensure(server.store().bytes_used() == want, || format!("op {i}: in-process counter drifted"))?;
    }
    ensure(rejected > 0, || "cap never reached; oracle did not exercise OUT_OF_MEMORY".into())?;
    Ok(format!("{ops} random ops, {rejected} cap rejections, bytes_used exact"))
}

fn raw_call(stream: &mut TcpStream, reader: &mut BufReader<TcpStream>, frame: Frame) -> Result<StatusCode, String> {
    let bytes = encode_frame(&frame, DEFAULT_MAX_PAYLOAD).map_err(|e| e.to_string())?;
    stream.write_all(&bytes).map_err(|e| e.to_string())?;
    let resp = read_frame(reader, DEFAULT_MAX_PAYLOAD)
        .map_err(|e| e.to_string())?
        .ok_or("connection closed")?;
    ensure(resp.request_id == frame.request_id, || "request id mismatch".into())?;
    ensure(resp.command == frame.command | RESPONSE_BIT, || "response command bit".into())?;
    let (status, _) = decode_status_response(&resp.payload).map_err(|e| e.to_string())?;
    Ok(status)
}

/// Malformed requests get BAD_REQUEST on their own connection, which stays
/// usable; a concurrent well-behaved connection never notices.
pub fn malformed_isolated() -> SuiteResult {
    let server = start(StoreConfig::default());
    let mut good = connect(&server);
    let t = Tensor::from_f32(vec![2], &[1.0, 2.0]).unwrap();
    good.put_tensor("0.sol.0", &t).map_err(|e| e.to_string())?;

    let mut raw = TcpStream::connect(server.addr()).map_err(|e| e.to_string())?;
    let mut reader = BufReader::new(raw.try_clone().map_err(|e| e.to_string())?);
    let cases = [
        ("unknown command", Frame::new(0x7F, 1, Vec::new())),
        ("truncated put", Frame::new(0x02, 2, vec![7, 0, b'k'])),
        ("bad dtype", Frame::new(0x02, 3, vec![1, 0, b'k', 9, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0])),
        ("trailing bytes on get", Frame::new(0x03, 4, vec![1, 0, b'k', 0xFF])),
    ];
    for (name, frame) in cases {
        let status = raw_call(&mut raw, &mut reader, frame)?;
        ensure(status == StatusCode::BadRequest, || format!("{name}: got {status}"))?;
        let back = good.get_tensor("0.sol.0").map_err(|e| e.to_string())?;
        ensure(back == t, || format!("{name}: other connection disturbed"))?;
    }
    let status = raw_call(&mut raw, &mut reader, Frame::new(0x01, 5, Vec::new()))?;
    ensure(status == StatusCode::Ok, || format!("ping after errors: {status}"))?;

    let mut bad_version = encode_frame(&Frame::new(0x01, 6, Vec::new()), DEFAULT_MAX_PAYLOAD).unwrap();
    bad_version[4] = 9;
    raw.write_all(&bad_version).map_err(|e| e.to_string())?;
    if let Ok(Some(resp)) = read_frame(&mut reader, DEFAULT_MAX_PAYLOAD) {
        let (status, _) = decode_status_response(&resp.payload).map_err(|e| e.to_string())?;
        ensure(status == StatusCode::BadRequest, || format!("bad version: {status}"))?;
    }
    good.put_tensor("0.sol.1", &t).map_err(|e| e.to_string())?;
    ensure(good.get_tensor("0.sol.1").ok() == Some(t), || "store unusable after bad version".into())?;
    Ok("4 malformed requests answered BAD_REQUEST, neighbours unaffected".into())
}

pub fn all(conns: usize, ops: usize) -> SuiteResult {
    let parts = [linearizable(conns, ops)?, bytes_oracle(4000)?, malformed_isolated()?];
    Ok(parts.join("; "))
}
