//! Request and response payload layouts for each command.

use super::{decode_tensor, ByteReader, MetaValue, StatusCode, Tensor, TensorKey, WireError};

fn put_key(out: &mut Vec<u8>, key: &TensorKey) {
    out.extend_from_slice(&(key.as_bytes().len() as u16).to_le_bytes());
    out.extend_from_slice(key.as_bytes());
}

fn read_key(r: &mut ByteReader<'_>) -> Result<TensorKey, WireError> {
    let len = r.u16()? as usize;
    let bytes = r.take(len)?;
    let s = std::str::from_utf8(bytes).map_err(|_| WireError::Utf8("key"))?;
    TensorKey::new(s)
}

fn read_key_list(r: &mut ByteReader<'_>) -> Result<Vec<TensorKey>, WireError> {
    let n = r.u16()? as usize;
    (0..n).map(|_| read_key(r)).collect()
}

/// `[keylen:u16][key]`, used by GET_TENSOR, DEL_TENSOR, EXISTS, GET_META, GET_MODEL.
pub fn encode_key_request(key: &TensorKey) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 + key.as_bytes().len());
    put_key(&mut out, key);
    out
}

pub fn decode_key_request(payload: &[u8]) -> Result<TensorKey, WireError> {
    let mut r = ByteReader::new(payload);
    let key = read_key(&mut r)?;
    r.finish()?;
    Ok(key)
}

pub fn encode_put_tensor(key: &TensorKey, tensor: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 + key.as_bytes().len() + tensor.encoded_len());
    put_key(&mut out, key);
    tensor.encode_into(&mut out);
    out
}

pub fn decode_put_tensor(payload: &[u8]) -> Result<(TensorKey, Tensor), WireError> {
    let mut r = ByteReader::new(payload);
    let key = read_key(&mut r)?;
    let tensor = decode_tensor(r.rest())?;
    Ok((key, tensor))
}

pub fn encode_put_meta(key: &TensorKey, value: &MetaValue) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::new();
    put_key(&mut out, key);
    value.encode_into(&mut out)?;
    Ok(out)
}

pub fn decode_put_meta(payload: &[u8]) -> Result<(TensorKey, MetaValue), WireError> {
    let mut r = ByteReader::new(payload);
    let key = read_key(&mut r)?;
    let value = MetaValue::decode_from(&mut r)?;
    r.finish()?;
    Ok((key, value))
}

/// SET_MODEL payload: `[keylen:u16][key][hintlen:u8][hint][blob]`.
///
/// GET_MODEL answers with the same layout minus the key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetModelRequest {
    pub key: TensorKey,
    pub device_hint: String,
    pub blob: Vec<u8>,
}

fn put_hint(out: &mut Vec<u8>, hint: &str) -> Result<(), WireError> {
    let len = u8::try_from(hint.len())
        .map_err(|_| WireError::BadKey(format!("device hint of {} bytes", hint.len())))?;
    out.push(len);
    out.extend_from_slice(hint.as_bytes());
    Ok(())
}

fn read_hint_and_blob(r: &mut ByteReader<'_>) -> Result<(String, Vec<u8>), WireError> {
    let len = r.u8()? as usize;
    let hint = std::str::from_utf8(r.take(len)?)
        .map_err(|_| WireError::Utf8("device hint"))?
        .to_owned();
    Ok((hint, r.rest().to_vec()))
}

pub fn encode_set_model(req: &SetModelRequest) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(3 + req.key.as_bytes().len() + req.device_hint.len() + req.blob.len());
    put_key(&mut out, &req.key);
    put_hint(&mut out, &req.device_hint)?;
    out.extend_from_slice(&req.blob);
    Ok(out)
}

pub fn decode_set_model(payload: &[u8]) -> Result<SetModelRequest, WireError> {
    let mut r = ByteReader::new(payload);
    let key = read_key(&mut r)?;
    let (device_hint, blob) = read_hint_and_blob(&mut r)?;
    Ok(SetModelRequest {
        key,
        device_hint,
        blob,
    })
}

pub fn encode_model_body(device_hint: &str, blob: &[u8]) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(1 + device_hint.len() + blob.len());
    put_hint(&mut out, device_hint)?;
    out.extend_from_slice(blob);
    Ok(out)
}

pub fn decode_model_body(body: &[u8]) -> Result<(String, Vec<u8>), WireError> {
    read_hint_and_blob(&mut ByteReader::new(body))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunModelRequest {
    pub model: TensorKey,
    pub inputs: Vec<TensorKey>,
    pub outputs: Vec<TensorKey>,
}

pub fn encode_run_model(req: &RunModelRequest) -> Vec<u8> {
    let mut out = Vec::new();
    put_key(&mut out, &req.model);
    for list in [&req.inputs, &req.outputs] {
        out.extend_from_slice(&(list.len() as u16).to_le_bytes());
        for k in list {
            put_key(&mut out, k);
        }
    }
    out
}

pub fn decode_run_model(payload: &[u8]) -> Result<RunModelRequest, WireError> {
    let mut r = ByteReader::new(payload);
    let model = read_key(&mut r)?;
    let inputs = read_key_list(&mut r)?;
    let outputs = read_key_list(&mut r)?;
    r.finish()?;
    Ok(RunModelRequest {
        model,
        inputs,
        outputs,
    })
}

/// INFO body: `[n:u32][n x (namelen:u16, name, meta value)]`.
pub fn encode_info(entries: &[(String, MetaValue)]) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::new();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, value) in entries {
        put_key(&mut out, &TensorKey::new(name.as_str())?);
        value.encode_into(&mut out)?;
    }
    Ok(out)
}

pub fn decode_info(body: &[u8]) -> Result<Vec<(String, MetaValue)>, WireError> {
    let mut r = ByteReader::new(body);
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        let name = read_key(&mut r)?;
        let value = MetaValue::decode_from(&mut r)?;
        out.push((name.as_str().to_owned(), value));
    }
    r.finish()?;
    Ok(out)
}

/// Response payloads start with the status byte; the rest is the body
/// (or a UTF-8 diagnostic for non-OK statuses).
pub fn encode_status_response(status: StatusCode, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(1 + body.len());
    out.push(status.code());
    out.extend_from_slice(body);
    out
}

pub fn decode_status_response(payload: &[u8]) -> Result<(StatusCode, &[u8]), WireError> {
    let (&first, body) = payload.split_first().ok_or(WireError::Truncated {
        needed: 1,
        available: 0,
    })?;
    Ok((StatusCode::from_code(first)?, body))
}
