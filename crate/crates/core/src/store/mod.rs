//! The in-memory database node: keyed tensors, metadata and models.

mod server;
mod shard;
pub mod telemetry;

pub use server::{serve_forever, LinkModel, ServerHandle, StoreConfig};
pub use shard::{fnv1a64, shard_for_key, EmptyShardMap, ShardMap};

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::RwLock;
use thiserror::Error;

use crate::exec::{parse_model, ExecError, Model, ModelError};
use crate::wire::{MetaValue, RunModelRequest, StatusCode, Tensor, TensorKey};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("key {0} not found")]
    NotFound(TensorKey),
    #[error("out of memory: {requested} bytes requested, {used} of {max} in use")]
    OutOfMemory { requested: u64, used: u64, max: u64 },
    #[error("model rejected: {0}")]
    BadModel(#[from] ModelError),
    #[error("execution failed: {0}")]
    Exec(#[from] ExecError),
    #[error("key {key} belongs to shard {owner}, this is shard {this}")]
    WrongShard {
        key: TensorKey,
        owner: usize,
        this: usize,
    },
}

impl StoreError {
    pub fn status(&self) -> StatusCode {
        match self {
            StoreError::NotFound(_) => StatusCode::NotFound,
            StoreError::OutOfMemory { .. } => StatusCode::OutOfMemory,
            StoreError::BadModel(_) => StatusCode::BadRequest,
            StoreError::Exec(_) => StatusCode::ExecError,
            StoreError::WrongShard { .. } => StatusCode::WrongShard,
        }
    }
}

#[derive(Debug)]
pub struct StoredModel {
    pub device_hint: String,
    pub blob: Vec<u8>,
    pub model: Model,
}

#[derive(Debug, Default)]
struct Keyspace {
    tensors: HashMap<TensorKey, Arc<Tensor>>,
    meta: HashMap<TensorKey, MetaValue>,
    models: HashMap<TensorKey, Arc<StoredModel>>,
    bytes_used: u64,
}

impl Keyspace {
    fn tensor_len(&self, key: &TensorKey) -> u64 {
        self.tensors.get(key).map_or(0, |t| t.data().len() as u64)
    }
}

/// Shared store state. All operations are atomic per call; a rejected
/// write leaves the keyspace untouched.
#[derive(Debug)]
pub struct Store {
    keyspace: RwLock<Keyspace>,
    max_bytes: u64,
    shard: Option<(usize, usize)>,
    started: Instant,
    requests_served: AtomicU64,
    connections_accepted: AtomicU64,
}

impl Store {
    pub fn new(max_bytes: u64) -> Self {
        Store {
            keyspace: RwLock::new(Keyspace::default()),
            max_bytes,
            shard: None,
            started: Instant::now(),
            requests_served: AtomicU64::new(0),
            connections_accepted: AtomicU64::new(0),
        }
    }

    /// Rejects tensor and metadata keys that `fnv1a64 mod count` assigns elsewhere.
    pub fn with_shard(mut self, index: usize, count: usize) -> Self {
        self.shard = Some((index, count));
        self
    }

    fn check_shard(&self, key: &TensorKey) -> Result<(), StoreError> {
        if let Some((this, count)) = self.shard {
            let owner = shard_for_key(key.as_bytes(), count);
            if owner != this {
                return Err(StoreError::WrongShard {
                    key: key.clone(),
                    owner,
                    this,
                });
            }
        }
        Ok(())
    }

    fn over_cap(&self, ks: &Keyspace, freed: u64, added: u64) -> Result<u64, StoreError> {
        let next = ks.bytes_used - freed + added;
        if next > self.max_bytes {
            return Err(StoreError::OutOfMemory {
                requested: added,
                used: ks.bytes_used,
                max: self.max_bytes,
            });
        }
        Ok(next)
    }

    pub fn put_tensor(&self, key: TensorKey, tensor: Tensor) -> Result<(), StoreError> {
        self.check_shard(&key)?;
        let added = tensor.data().len() as u64;
        let mut ks = self.keyspace.write();
        let freed = ks.tensor_len(&key);
        ks.bytes_used = self.over_cap(&ks, freed, added)?;
        ks.tensors.insert(key, Arc::new(tensor));
        Ok(())
    }

    pub fn get_tensor(&self, key: &TensorKey) -> Result<Arc<Tensor>, StoreError> {
        self.check_shard(key)?;
        self.keyspace
            .read()
            .tensors
            .get(key)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(key.clone()))
    }

    pub fn del_tensor(&self, key: &TensorKey) -> Result<(), StoreError> {
        self.check_shard(key)?;
        let mut ks = self.keyspace.write();
        let t = ks
            .tensors
            .remove(key)
            .ok_or_else(|| StoreError::NotFound(key.clone()))?;
        ks.bytes_used -= t.data().len() as u64;
        Ok(())
    }

    pub fn exists(&self, key: &TensorKey) -> Result<bool, StoreError> {
        self.check_shard(key)?;
        Ok(self.keyspace.read().tensors.contains_key(key))
    }

    pub fn put_meta(&self, key: TensorKey, value: MetaValue) -> Result<(), StoreError> {
        self.check_shard(&key)?;
        self.keyspace.write().meta.insert(key, value);
        Ok(())
    }

    pub fn get_meta(&self, key: &TensorKey) -> Result<MetaValue, StoreError> {
        self.check_shard(key)?;
        self.keyspace
            .read()
            .meta
            .get(key)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(key.clone()))
    }

    /// Models are replicated to every shard, so no shard check applies.
    pub fn set_model(
        &self,
        key: TensorKey,
        device_hint: String,
        blob: Vec<u8>,
    ) -> Result<(), StoreError> {
        let model = parse_model(&blob)?;
        let added = blob.len() as u64;
        let mut ks = self.keyspace.write();
        let freed = ks.models.get(&key).map_or(0, |m| m.blob.len() as u64);
        ks.bytes_used = self.over_cap(&ks, freed, added)?;
        ks.models.insert(
            key,
            Arc::new(StoredModel {
                device_hint,
                blob,
                model,
            }),
        );
        Ok(())
    }

    pub fn get_model(&self, key: &TensorKey) -> Result<Arc<StoredModel>, StoreError> {
        self.keyspace
            .read()
            .models
            .get(key)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(key.clone()))
    }

    /// Evaluates a resident model on resident inputs and stores the outputs.
    /// Either every output key is written or none is.
    pub fn run_model(&self, req: &RunModelRequest) -> Result<(), StoreError> {
        for k in req.inputs.iter().chain(&req.outputs) {
            self.check_shard(k)?;
        }
        let (model, inputs) = {
            let ks = self.keyspace.read();
            let model = ks
                .models
                .get(&req.model)
                .cloned()
                .ok_or_else(|| StoreError::NotFound(req.model.clone()))?;
            let inputs = req
                .inputs
                .iter()
                .map(|k| {
                    ks.tensors
                        .get(k)
                        .cloned()
                        .ok_or_else(|| StoreError::NotFound(k.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            (model, inputs)
        };
        if req.outputs.len() != model.model.num_outputs() {
            return Err(ExecError::OutputCount {
                expected: model.model.num_outputs(),
                actual: req.outputs.len(),
            }
            .into());
        }
        let outputs = model.model.run(&inputs)?;
        let mut ks = self.keyspace.write();
        let freed: u64 = req.outputs.iter().map(|k| ks.tensor_len(k)).sum();
        let added: u64 = outputs.iter().map(|t| t.data().len() as u64).sum();
        ks.bytes_used = self.over_cap(&ks, freed, added)?;
        for (k, t) in req.outputs.iter().zip(outputs) {
            ks.tensors.insert(k.clone(), Arc::new(t));
        }
        Ok(())
    }

    pub fn flush(&self) {
        *self.keyspace.write() = Keyspace::default();
    }

    pub fn bytes_used(&self) -> u64 {
        self.keyspace.read().bytes_used
    }

    pub fn note_request(&self) {
        self.requests_served.fetch_add(1, Ordering::Relaxed);
    }

    pub fn note_connection(&self) {
        self.connections_accepted.fetch_add(1, Ordering::Relaxed);
    }

    /// Counters reported by INFO. `owner.<id>` entries count tensor keys
    /// whose leading segment is the decimal producer id.
    pub fn info(&self) -> Vec<(String, MetaValue)> {
        let ks = self.keyspace.read();
        let mut owners: BTreeMap<u64, i64> = BTreeMap::new();
        for k in ks.tensors.keys() {
            if let Some(o) = k.owner() {
                *owners.entry(o).or_default() += 1;
            }
        }
        let keys = ks.tensors.len() + ks.meta.len() + ks.models.len();
        let mut out = vec![
            ("keys".to_string(), MetaValue::Int(keys as i64)),
            ("tensors".into(), MetaValue::Int(ks.tensors.len() as i64)),
            ("meta_keys".into(), MetaValue::Int(ks.meta.len() as i64)),
            ("models".into(), MetaValue::Int(ks.models.len() as i64)),
            ("bytes_used".into(), MetaValue::Int(ks.bytes_used as i64)),
            ("max_bytes".into(), MetaValue::Int(self.max_bytes as i64)),
            (
                "requests_served".into(),
                MetaValue::Int(self.requests_served.load(Ordering::Relaxed) as i64),
            ),
            (
                "uptime_ms".into(),
                MetaValue::Int(self.started.elapsed().as_millis() as i64),
            ),
            (
                "connections_accepted".into(),
                MetaValue::Int(self.connections_accepted.load(Ordering::Relaxed) as i64),
            ),
        ];
        if let Some((index, count)) = self.shard {
            out.push(("shard_index".into(), MetaValue::Int(index as i64)));
            out.push(("shard_count".into(), MetaValue::Int(count as i64)));
        }
        out.extend(
            owners
                .into_iter()
                .map(|(o, n)| (format!("owner.{o}"), MetaValue::Int(n))),
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::random_affine;
    use crate::wire::Dtype;

    fn key(s: &str) -> TensorKey {
        TensorKey::new(s).unwrap()
    }

    fn bytes(n: usize, fill: u8) -> Tensor {
        Tensor::new(Dtype::U8, vec![n as u64], vec![fill; n]).unwrap()
    }

    fn info_int(s: &Store, name: &str) -> i64 {
        s.info()
            .into_iter()
            .find(|(k, _)| k == name)
            .and_then(|(_, v)| v.as_int())
            .unwrap()
    }

    #[test]
    fn fresh_store_is_empty() {
        let s = Store::new(1 << 20);
        assert_eq!(info_int(&s, "keys"), 0);
        assert_eq!(info_int(&s, "bytes_used"), 0);
        assert_eq!(info_int(&s, "max_bytes"), 1 << 20);
    }

    #[test]
    fn put_256k_accounts_bytes() {
        let s = Store::new(1 << 30);
        let t = Tensor::from_f32(vec![65536], &vec![0.5; 65536]).unwrap();
        s.put_tensor(key("0.sol.2"), t).unwrap();
        assert_eq!(info_int(&s, "bytes_used"), 262_144);
        assert_eq!(info_int(&s, "owner.0"), 1);
    }

    #[test]
    fn overwrite_replaces_and_adjusts() {
        let s = Store::new(1 << 20);
        s.put_tensor(key("k"), bytes(100, 1)).unwrap();
        s.put_tensor(key("k"), bytes(40, 2)).unwrap();
        assert_eq!(s.get_tensor(&key("k")).unwrap().data(), &[2; 40][..]);
        assert_eq!(s.bytes_used(), 40);
    }

    #[test]
    fn cap_rejects_without_side_effects() {
        let s = Store::new(100);
        s.put_tensor(key("a"), bytes(60, 1)).unwrap();
        let err = s.put_tensor(key("b"), bytes(41, 2)).unwrap_err();
        assert_eq!(err.status(), StatusCode::OutOfMemory);
        assert!(!s.exists(&key("b")).unwrap());
        assert_eq!(s.bytes_used(), 60);
        // overwriting frees the old value first
        s.put_tensor(key("a"), bytes(100, 3)).unwrap();
        assert_eq!(s.bytes_used(), 100);
    }

    #[test]
    fn delete_reclaims() {
        let s = Store::new(1 << 20);
        s.put_tensor(key("a"), bytes(10, 1)).unwrap();
        let before = s.bytes_used();
        s.put_tensor(key("b"), bytes(1024, 1)).unwrap();
        assert_eq!(s.bytes_used(), before + 1024);
        s.del_tensor(&key("b")).unwrap();
        assert!(!s.exists(&key("b")).unwrap());
        assert_eq!(s.bytes_used(), before);
        assert_eq!(s.del_tensor(&key("b")).unwrap_err().status(), StatusCode::NotFound);
        assert_eq!(s.get_tensor(&key("b")).unwrap_err().status(), StatusCode::NotFound);
    }

    #[test]
    fn consumer_gathers_six() {
        let s = Store::new(1 << 20);
        for r in 0..6 {
            s.put_tensor(TensorKey::producer(r, "sol", 0).unwrap(), bytes(16, r as u8))
                .unwrap();
        }
        for r in 0..6 {
            let t = s.get_tensor(&TensorKey::producer(r, "sol", 0).unwrap()).unwrap();
            assert_eq!(t.data()[0], r as u8);
        }
    }

    #[test]
    fn models_count_towards_bytes() {
        let s = Store::new(1 << 20);
        let blob = random_affine(4, 2, 0).to_blob();
        let n = blob.len() as u64;
        s.set_model(key("m"), "gpu".into(), blob).unwrap();
        assert_eq!(s.bytes_used(), n);
        assert_eq!(s.get_model(&key("m")).unwrap().device_hint, "gpu");
        let err = s.set_model(key("bad"), "cpu".into(), b"MEX0".to_vec()).unwrap_err();
        assert_eq!(err.status(), StatusCode::BadRequest);
    }

    #[test]
    fn run_model_is_atomic() {
        let s = Store::new(1 << 20);
        s.set_model(key("id"), "cpu".into(), b"MEX1\x00".to_vec()).unwrap();
        let x = bytes(8, 9);
        s.put_tensor(key("0.in.0"), x.clone()).unwrap();
        let req = |m: &str| RunModelRequest {
            model: key(m),
            inputs: vec![key("0.in.0")],
            outputs: vec![key("0.out.0")],
        };
        s.run_model(&req("id")).unwrap();
        assert_eq!(*s.get_tensor(&key("0.out.0")).unwrap(), x);

        s.del_tensor(&key("0.out.0")).unwrap();
        assert_eq!(s.run_model(&req("nope")).unwrap_err().status(), StatusCode::NotFound);
        assert!(!s.exists(&key("0.out.0")).unwrap());

        let small = Store::new(10);
        small.set_model(key("id"), "cpu".into(), b"MEX1\x00".to_vec()).unwrap();
        small.put_tensor(key("0.in.0"), bytes(5, 1)).unwrap();
        assert_eq!(small.run_model(&req("id")).unwrap_err().status(), StatusCode::OutOfMemory);
        assert!(!small.exists(&key("0.out.0")).unwrap());
    }

    #[test]
    fn run_model_shape_error() {
        let s = Store::new(1 << 20);
        s.set_model(key("m"), "cpu".into(), random_affine(4, 2, 0).to_blob()).unwrap();
        s.put_tensor(key("x"), Tensor::from_f32(vec![1, 3], &[0.0; 3]).unwrap()).unwrap();
        let req = RunModelRequest {
            model: key("m"),
            inputs: vec![key("x")],
            outputs: vec![key("y")],
        };
        assert_eq!(s.run_model(&req).unwrap_err().status(), StatusCode::ExecError);
        assert!(!s.exists(&key("y")).unwrap());
    }

    #[test]
    fn wrong_shard_is_rejected() {
        // "a" hashes to shard 0 of 4
        let s = Store::new(1 << 20).with_shard(1, 4);
        let err = s.put_tensor(key("a"), bytes(1, 1)).unwrap_err();
        assert_eq!(err.status(), StatusCode::WrongShard);
        s.set_model(key("a"), "cpu".into(), b"MEX1\x00".to_vec()).unwrap();
    }

    #[test]
    fn meta_overwrite() {
        let s = Store::new(1 << 20);
        s.put_meta(key("overwrite"), MetaValue::Int(1)).unwrap();
        s.put_meta(key("overwrite"), MetaValue::Int(2)).unwrap();
        assert_eq!(s.get_meta(&key("overwrite")).unwrap(), MetaValue::Int(2));
        assert_eq!(s.bytes_used(), 0);
        assert_eq!(info_int(&s, "keys"), 1);
    }
}
