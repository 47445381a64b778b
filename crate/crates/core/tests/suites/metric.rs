use isf::prng::SplitMix64;
use isf::repro::{relative_frobenius, relative_frobenius_tensors};
use isf::wire::Tensor;

use super::{ensure, SuiteResult};

const TOL: f64 = 1e-12;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

pub fn worked_examples() -> SuiteResult {
    let f = vec![1.0, -2.0, 3.5];
    let same = relative_frobenius(&[(f.clone(), f)]).map_err(|e| e.to_string())?;
    ensure(close(same, 0.0), || format!("identical fields gave {same}"))?;

    let full = relative_frobenius(&[(vec![3.0, 4.0], vec![0.0, 0.0])]).map_err(|e| e.to_string())?;
    ensure(close(full, 1.0), || format!("zero reconstruction gave {full}"))?;

    let ones = vec![1.0; 4];
    let pairs = [(ones.clone(), vec![1.0, 1.0, 1.0, 0.0]), (ones.clone(), ones)];
    let mean = relative_frobenius(&pairs).map_err(|e| e.to_string())?;
    ensure(close(mean, 0.25), || format!("two-sample mean gave {mean}"))?;

    let t = |v: &[f32]| Tensor::from_f32(vec![2, 2], v).unwrap();
    let via_tensors = relative_frobenius_tensors(&[
        (t(&[1., 1., 1., 1.]), t(&[1., 1., 1., 0.])),
        (t(&[1., 1., 1., 1.]), t(&[1., 1., 1., 1.])),
    ])
    .map_err(|e| e.to_string())?;
    ensure(close(via_tensors, 0.25), || format!("tensor form gave {via_tensors}"))?;
    Ok(format!("0.0, 1.0 and 0.25 within {TOL:e}"))
}

/// Scaling both fields by the same random alpha leaves the error unchanged.
pub fn scale_invariance(trials: usize) -> SuiteResult {
    let mut rng = SplitMix64::new(99);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let samples = 1 + rng.below(4) as usize;
        let len = 1 + rng.below(64) as usize;
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..samples)
            .map(|_| {
                let f: Vec<f64> = (0..len).map(|_| rng.next_f64() * 2.0 - 1.0 + 0.01).collect();
                let g = f.iter().map(|v| v + (rng.next_f64() - 0.5) * 0.2).collect();
                (f, g)
            })
            .collect();
        let alpha = 10f64.powf(rng.next_f64() * 8.0 - 4.0) * if rng.below(2) == 0 { 1.0 } else { -1.0 };
        let scaled: Vec<(Vec<f64>, Vec<f64>)> = pairs
            .iter()
            .map(|(f, g)| (f.iter().map(|v| v * alpha).collect(), g.iter().map(|v| v * alpha).collect()))
            .collect();
        let a = relative_frobenius(&pairs).map_err(|e| e.to_string())?;
        let b = relative_frobenius(&scaled).map_err(|e| e.to_string())?;
        worst = worst.max((a - b).abs());
        ensure(close(a, b), || format!("trial {trial}: alpha {alpha:e} moved {a} to {b}"))?;
    }
    Ok(format!("{trials} random alphas, worst drift {worst:.1e}"))
}

pub fn all() -> SuiteResult {
    Ok([worked_examples()?, scale_invariance(2000)?].join("; "))
}
