use isf::wire::{
    decode_frame, decode_meta, decode_put_tensor, decode_run_model, decode_tensor, encode_frame,
    encode_meta, encode_put_tensor, encode_run_model, encode_tensor, Dtype, Frame, FrameDecoder,
    MetaValue, RunModelRequest, Tensor, TensorKey, WireError, DEFAULT_MAX_PAYLOAD,
};
use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use super::{ensure, SuiteResult};

pub const CASES: u32 = 10_000;

fn runner() -> TestRunner {
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn hex(s: &str) -> Vec<u8> {
    s.split_whitespace()
        .map(|b| u8::from_str_radix(b, 16).unwrap())
        .collect()
}

pub fn goldens() -> SuiteResult {
    let one = Tensor::from_f32(vec![1], &[1.0]).unwrap();
    let want = hex("00 01 01 00 00 00 00 00 00 00 00 00 80 3F");
    ensure(encode_tensor(&one) == want, || format!("f32 scalar: {:02X?}", encode_tensor(&one)))?;
    ensure(decode_tensor(&want).as_ref() == Ok(&one), || "f32 scalar decode".into())?;

    let bytes = Tensor::new(Dtype::U8, vec![3], vec![7, 8, 9]).unwrap();
    let want = hex("04 01 03 00 00 00 00 00 00 00 07 08 09");
    ensure(encode_tensor(&bytes) == want, || format!("u8 vector: {:02X?}", encode_tensor(&bytes)))?;

    let truncated = hex("00 01 01 00 00 00 00 00 00 00");
    ensure(decode_tensor(&truncated).is_err(), || "missing data accepted".into())?;
    let mut bad_dtype = hex("00 01 01 00 00 00 00 00 00 00 00 00 80 3F");
    bad_dtype[0] = 0x09;
    ensure(
        decode_tensor(&bad_dtype) == Err(WireError::UnknownDtype(9)),
        || "dtype 0x09 accepted".into(),
    )?;

    let ping = Frame::new(0x01, 7, Vec::new());
    let want = hex("0A 00 00 00 01 01 07 00 00 00 00 00 00 00");
    let got = encode_frame(&ping, DEFAULT_MAX_PAYLOAD).map_err(|e| e.to_string())?;
    ensure(got == want, || format!("ping frame: {got:02X?}"))?;
    let (back, used) = decode_frame(&want, DEFAULT_MAX_PAYLOAD)
        .map_err(|e| e.to_string())?
        .ok_or("ping frame incomplete")?;
    ensure(back == ping && used == want.len(), || "ping decode".into())?;

    let oversize = Frame::new(0x02, 1, vec![0; 16]);
    ensure(encode_frame(&oversize, 15).is_err(), || "oversize frame encoded".into())?;
    let mut bad_version = want.clone();
    bad_version[4] = 2;
    ensure(
        decode_frame(&bad_version, DEFAULT_MAX_PAYLOAD).is_err(),
        || "version 2 accepted".into(),
    )?;
    Ok("tensor, frame and error goldens match".into())
}

fn tensor_strategy() -> impl Strategy<Value = Tensor> {
    (0..5u8, vec(1u64..=3, 1..=8)).prop_flat_map(|(code, shape)| {
        let dtype = Dtype::from_code(code).unwrap();
        let n = shape.iter().product::<u64>() as usize * dtype.element_size();
        vec(any::<u8>(), n).prop_map(move |data| Tensor::new(dtype, shape.clone(), data).unwrap())
    })
}

fn key_strategy() -> impl Strategy<Value = TensorKey> {
    "[ -~]{1,40}".prop_map(|s| TensorKey::new(s).unwrap())
}

fn meta_strategy() -> impl Strategy<Value = MetaValue> {
    prop_oneof![
        any::<i64>().prop_map(MetaValue::Int),
        any::<f64>().prop_map(MetaValue::Float),
        ".{0,64}".prop_map(MetaValue::Str),
    ]
}

fn frame_strategy() -> impl Strategy<Value = Frame> {
    (any::<u8>(), any::<u64>(), vec(any::<u8>(), 0..96))
        .prop_map(|(cmd, id, payload)| Frame::new(cmd, id, payload))
}

fn fail(msg: String) -> TestCaseError {
    TestCaseError::fail(msg)
}

/// decode(encode(t)) = t for random tensors of every dtype and rank 1..=8,
/// also wrapped in PUT_TENSOR payloads.
pub fn tensor_roundtrip() -> SuiteResult {
    runner()
        .run(&(tensor_strategy(), key_strategy()), |(t, k)| {
            let bytes = encode_tensor(&t);
            prop_assert_eq!(bytes.len(), t.encoded_len());
            prop_assert_eq!(decode_tensor(&bytes).map_err(|e| fail(e.to_string()))?, t.clone());
            let put = encode_put_tensor(&k, &t);
            let (k2, t2) = decode_put_tensor(&put).map_err(|e| fail(e.to_string()))?;
            prop_assert_eq!((k2, t2), (k, t));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{CASES} tensors"))
}

/// A random batch of frames, concatenated and fed in random chunk sizes,
/// decodes to the same sequence.
pub fn frame_roundtrip() -> SuiteResult {
    let strategy = (vec(frame_strategy(), 1..5), vec(1usize..64, 1..16));
    runner()
        .run(&strategy, |(frames, chunks)| {
            let mut stream = Vec::new();
            for f in &frames {
                stream.extend(encode_frame(f, DEFAULT_MAX_PAYLOAD).map_err(|e| fail(e.to_string()))?);
            }
            let mut dec = FrameDecoder::new(DEFAULT_MAX_PAYLOAD);
            let mut out = Vec::new();
            let mut pos = 0;
            let mut i = 0;
            while pos < stream.len() {
                let n = chunks[i % chunks.len()].min(stream.len() - pos);
                dec.push(&stream[pos..pos + n]);
                pos += n;
                i += 1;
                while let Some(f) = dec.next_frame().map_err(|e| fail(e.to_string()))? {
                    out.push(f);
                }
            }
            prop_assert_eq!(out, frames);
            prop_assert_eq!(dec.buffered(), 0);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{CASES} chunked frame streams"))
}

/// Metadata and RUN_MODEL payloads: bytes survive decode then encode.
pub fn payload_roundtrip() -> SuiteResult {
    let strategy = (
        meta_strategy(),
        key_strategy(),
        vec(key_strategy(), 1..4),
        vec(key_strategy(), 1..4),
    );
    runner()
        .run(&strategy, |(meta, model, inputs, outputs)| {
            let bytes = encode_meta(&meta).map_err(|e| fail(e.to_string()))?;
            let back = decode_meta(&bytes).map_err(|e| fail(e.to_string()))?;
            prop_assert_eq!(encode_meta(&back).unwrap(), bytes);
            let req = RunModelRequest {
                model,
                inputs,
                outputs,
            };
            let back = decode_run_model(&encode_run_model(&req)).map_err(|e| fail(e.to_string()))?;
            prop_assert_eq!(back, req);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{CASES} meta and run_model payloads"))
}

pub fn all() -> SuiteResult {
    let parts = [goldens()?, tensor_roundtrip()?, frame_roundtrip()?, payload_roundtrip()?];
    Ok(parts.join("; "))
}
