use std::time::Instant;

use super::{Pacer, ReproError, WorkloadSpec};
use crate::client::{key_on_shard, Client, Mode};
use crate::exec::{parse_model, Model};
use crate::prng::{fill_f32_signed, payload_seed};
use crate::timing::TimingSink;
use crate::wire::Tensor;

fn load_model(spec: &WorkloadSpec) -> Result<(Vec<u8>, Model), ReproError> {
    let path = spec
        .model_file
        .as_ref()
        .ok_or_else(|| ReproError::Config("inference workloads need model_file".into()))?;
    let blob = std::fs::read(path)
        .map_err(|e| ReproError::Config(format!("reading {}: {e}", path.display())))?;
    let model = parse_model(&blob)?;
    Ok((blob, model))
}

fn feature_dims(spec: &WorkloadSpec, model: &Model) -> Vec<u64> {
    if let Some(dims) = &spec.feature_dims {
        return dims.clone();
    }
    match model.in_dim() {
        Some(d) => vec![u64::from(d)],
        None => {
            let per_sample = spec.payload_bytes_per_rank / 4 / u64::from(spec.batch_n);
            vec![per_sample.max(1)]
        }
    }
}

/// Input batch `(batch_n, features...)` for `rank` at `step`.
pub fn inference_input(spec: &WorkloadSpec, dims: &[u64], rank: u32, step: u64) -> Tensor {
    let per_sample: u64 = dims.iter().product();
    let n = u64::from(spec.batch_n) * per_sample;
    let values = fill_f32_signed(payload_seed(spec.seed, rank, step), n as usize);
    let mut shape = vec![u64::from(spec.batch_n)];
    shape.extend_from_slice(dims);
    Tensor::from_f32(shape, &values).expect("shape matches data")
}

/// Output key for `rank` at `step`, moved onto the input's shard when clustered.
pub fn output_key(client: &Client, rank: u32, step: u64) -> String {
    let base = format!("{rank}.out.{step}");
    if client.mode() == Mode::Colocated {
        return base;
    }
    let shard = client.shard_for(&format!("{rank}.in.{step}"));
    key_on_shard(&base, shard, client.shard_map())
        .expect("keys are printable")
        .as_str()
        .to_owned()
}

/// Networked inference: send the batch, evaluate in the store, retrieve.
/// Each step also records a `total` row spanning the three calls.
pub fn infer(
    spec: &WorkloadSpec,
    client: &mut Client,
    rank: u32,
    pacer: &mut Pacer,
) -> Result<(), ReproError> {
    spec.validate()?;
    let (blob, model) = load_model(spec)?;
    client.set_iter(-i64::from(spec.warmup) - 1);
    client.set_model(&spec.model_key, &blob, "cpu")?;
    let dims = feature_dims(spec, &model);
    for step in 0..spec.total_steps() {
        client.set_iter(spec.iter_of(step));
        pacer.wait();
        let step = u64::from(step);
        let input = inference_input(spec, &dims, rank, step);
        let in_key = format!("{rank}.in.{step}");
        let out_key = output_key(client, rank, step);
        let started = Instant::now();
        client.put_tensor(&in_key, &input)?;
        client.run_model(&spec.model_key, &[&in_key], &[&out_key])?;
        let out = client.get_tensor(&out_key)?;
        let total = started.elapsed().as_secs_f64() * 1e6;
        let bytes = (input.data().len() + out.data().len()) as u64;
        if let Some(s) = client.sink_mut() {
            s.record("iteration", "total", bytes, total);
        }
        if model == Model::Identity && out != input {
            return Err(ReproError::Mismatch(format!("{out_key} differs from {in_key}")));
        }
        if let Some(r) = spec.retain_steps {
            if let Some(old) = step.checked_sub(u64::from(r)) {
                client.delete_tensor(&format!("{rank}.in.{old}"))?;
                client.delete_tensor(&output_key(client, rank, old))?;
            }
        }
    }
    Ok(())
}

/// In-process baseline: same inputs, model evaluated directly with no store.
/// Returns the last output for cross-checking against the networked path.
pub fn infer_inline(
    spec: &WorkloadSpec,
    rank: u32,
    sink: &mut TimingSink,
    pacer: &mut Pacer,
) -> Result<Option<Tensor>, ReproError> {
    spec.validate()?;
    let (_, model) = load_model(spec)?;
    let dims = feature_dims(spec, &model);
    let mut last = None;
    for step in 0..spec.total_steps() {
        sink.iter = spec.iter_of(step);
        pacer.wait();
        let input = inference_input(spec, &dims, rank, u64::from(step));
        let started = Instant::now();
        let mut out = model.run(&[&input])?;
        let micros = started.elapsed().as_secs_f64() * 1e6;
        let out = out.pop().expect("one output");
        sink.record("run", "inline_eval", (input.data().len() + out.data().len()) as u64, micros);
        last = Some(out);
    }
    Ok(last)
}

/// Rows one inference rank writes. Networked ranks add `client_init` and
/// `model_load`, four rows per step and two per retired step.
pub fn expected_infer_rows(spec: &WorkloadSpec, inline: bool) -> usize {
    let steps = spec.total_steps() as usize;
    if inline {
        return steps;
    }
    let retired = spec
        .retain_steps
        .map_or(0, |r| steps.saturating_sub(r as usize));
    2 + 4 * steps + 2 * retired
}
