use super::{meta_key, payload, solution_key, Pacer, ReproError, WorkloadMode, WorkloadSpec};
use crate::client::Client;
use crate::wire::MetaValue;

/// Simulation-side loop: emulate compute, send the solution tensor every
/// `send_every` steps (transfer mode also reads it back), publish metadata.
pub fn produce(
    spec: &WorkloadSpec,
    client: &mut Client,
    rank: u32,
    num_ranks: u32,
    pacer: &mut Pacer,
) -> Result<(), ReproError> {
    spec.validate()?;
    let bytes = spec.payload_bytes_per_rank;
    for step in 0..spec.total_steps() {
        client.set_iter(spec.iter_of(step));
        let sending = spec.sends(step);
        let step = u64::from(step);
        let tensor = sending.then(|| payload(spec.seed, rank, step, bytes));
        pacer.wait();
        let Some(tensor) = tensor else {
            continue;
        };
        let key = solution_key(rank, step);
        client.put_tensor(&key, &tensor)?;
        if spec.mode == WorkloadMode::Transfer {
            let back = client.get_tensor(&key)?;
            if back != tensor {
                return Err(ReproError::Mismatch(format!("{key} read back different bytes")));
            }
        }
        client.put_meta(&meta_key(rank, "num_ranks"), &MetaValue::Int(i64::from(num_ranks)))?;
        client.put_meta(&meta_key(rank, "tensor_size"), &MetaValue::Int(bytes as i64))?;
        client.put_meta(&meta_key(rank, "step"), &MetaValue::Int(step as i64))?;
        if let Some(old) = retired_step(spec, step) {
            client.delete_tensor(&solution_key(rank, old))?;
        }
    }
    Ok(())
}

/// The step whose tensor falls out of the retention window when `step` is sent.
pub(super) fn retired_step(spec: &WorkloadSpec, step: u64) -> Option<u64> {
    let window = u64::from(spec.retain_steps?) * u64::from(spec.send_every);
    step.checked_sub(window)
}

/// Rows one producer rank writes, including its `client_init` row.
pub fn expected_producer_rows(spec: &WorkloadSpec) -> usize {
    let per_send = 1 + usize::from(spec.mode == WorkloadMode::Transfer) + 3;
    1 + (0..spec.total_steps())
        .filter(|&s| spec.sends(s))
        .map(|s| per_send + usize::from(retired_step(spec, u64::from(s)).is_some()))
        .sum::<usize>()
}
