use super::{meta_key, payload, sleep_ms, solution_key, ReproError, WorkloadSpec};
use crate::client::Client;
use crate::prng::SplitMix64;

/// ML-side data loader: wait for every assigned producer's first snapshot,
/// then each epoch fetch the latest tensor of each and emulate training.
///
/// Returns the number of f32 values gathered per epoch.
pub fn consume(
    spec: &WorkloadSpec,
    client: &mut Client,
    rank: u32,
    producers: &[u32],
) -> Result<usize, ReproError> {
    spec.validate()?;
    if producers.is_empty() {
        return Err(ReproError::Config("consumer has no assigned producers".into()));
    }
    client.set_iter(-i64::from(spec.warmup) - 1);
    for &p in producers {
        let first_key = solution_key(p, 0);
        if !client.poll_key(&first_key, spec.poll_interval_ms, spec.poll_max_tries)? {
            return Err(ReproError::NoData(format!(
                "{first_key} absent after {} polls",
                spec.poll_max_tries
            )));
        }
    }
    let mut order = producers.to_vec();
    let mut rng = SplitMix64::new(spec.seed ^ u64::from(rank).wrapping_mul(0x9E37_79B9));
    let mut gathered = 0;
    for epoch in 0..spec.total_steps() {
        client.set_iter(spec.iter_of(epoch));
        if spec.shuffle {
            for i in (1..order.len()).rev() {
                order.swap(i, rng.below(i as u64 + 1) as usize);
            }
        }
        let mut batch: Vec<f32> = Vec::new();
        for &p in &order {
            // The step record follows the first tensor by one request.
            let step = match client.get_meta(&meta_key(p, "step")) {
                Err(e) if e.is_not_found() => crate::wire::MetaValue::Int(0),
                other => other?,
            };
            let step = step
                .as_int()
                .ok_or_else(|| ReproError::Mismatch(format!("{p}.step is not an integer")))?;
            let step = u64::try_from(step)
                .map_err(|_| ReproError::Mismatch(format!("{p}.step is negative")))?;
            let key = solution_key(p, step);
            let t = client.get_tensor(&key)?;
            if spec.verify && t != payload(spec.seed, p, step, spec.payload_bytes_per_rank) {
                return Err(ReproError::Mismatch(format!("{key} differs from the produced payload")));
            }
            batch.extend(t.to_f32_vec().unwrap_or_default());
        }
        gathered = batch.len();
        sleep_ms(spec.train_ms);
    }
    Ok(gathered)
}
