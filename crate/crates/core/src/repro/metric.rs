use thiserror::Error;

use crate::wire::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("no samples")]
    Empty,
    #[error("sample {index}: reference and reconstruction shapes differ")]
    ShapeMismatch { index: usize },
    #[error("sample {index}: reference field has zero norm")]
    ZeroNorm { index: usize },
    #[error("sample {index}: tensors must be f32")]
    Dtype { index: usize },
}

/// Mean over samples of `||F - F~||_F / ||F||_F`, accumulated in f64.
///
/// Each pair is `(reference, reconstruction)` flattened in the same order.
pub fn relative_frobenius<A: AsRef<[f64]>>(samples: &[(A, A)]) -> Result<f64, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut total = 0.0;
    for (index, (reference, recon)) in samples.iter().enumerate() {
        let (f, g) = (reference.as_ref(), recon.as_ref());
        if f.len() != g.len() || f.is_empty() {
            return Err(MetricError::ShapeMismatch { index });
        }
        let mut diff = 0.0f64;
        let mut norm = 0.0f64;
        for (a, b) in f.iter().zip(g) {
            diff += (a - b) * (a - b);
            norm += a * a;
        }
        if norm == 0.0 {
            return Err(MetricError::ZeroNorm { index });
        }
        total += diff.sqrt() / norm.sqrt();
    }
    Ok(total / samples.len() as f64)
}

/// [`relative_frobenius`] over f32 tensors; shapes must match exactly.
pub fn relative_frobenius_tensors(samples: &[(Tensor, Tensor)]) -> Result<f64, MetricError> {
    let widened = samples
        .iter()
        .enumerate()
        .map(|(index, (f, g))| {
            if f.shape() != g.shape() {
                return Err(MetricError::ShapeMismatch { index });
            }
            let to64 = |t: &Tensor| {
                t.to_f32_vec()
                    .map(|v| v.into_iter().map(f64::from).collect::<Vec<f64>>())
                    .ok_or(MetricError::Dtype { index })
            };
            Ok((to64(f)?, to64(g)?))
        })
        .collect::<Result<Vec<_>, _>>()?;
    relative_frobenius(&widened)
}
