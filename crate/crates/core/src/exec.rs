//! Reference model executors and the `MEX1` model blob format.
//!
//! Blob layout: `"MEX1"`, an executor byte, then an executor-specific body.
//!
//! * IDENTITY (0): empty body.
//! * AFFINE (1): `[in:u32][out:u32][W: out x in f32][b: out f32]`.
//! * MLP (2): `[n_layers:u8]`, then per layer `[in:u32][out:u32][act:u8]`,
//!   then for each layer in order its `W` followed by its `b`.
//!
//! Dense layers accumulate `W[o][j] * x[j]` for ascending `j` starting from
//! zero and add the bias last, so outputs are bit-reproducible.

use std::borrow::Borrow;

use thiserror::Error;

use crate::prng::SplitMix64;
use crate::wire::{ByteReader, Dtype, Tensor, WireError};

pub const MAGIC: &[u8; 4] = b"MEX1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ExecType {
    Identity = 0,
    Affine = 1,
    Mlp = 2,
}

impl ExecType {
    pub fn name(self) -> &'static str {
        match self {
            ExecType::Identity => "identity",
            ExecType::Affine => "affine",
            ExecType::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Activation {
    None = 0,
    Relu = 1,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("empty model blob")]
    Empty,
    #[error("bad magic {0:02x?}, expected \"MEX1\"")]
    BadMagic(Vec<u8>),
    #[error("unknown executor type {0}")]
    UnknownExecType(u8),
    #[error("unknown activation {act} in layer {layer}")]
    UnknownActivation { layer: usize, act: u8 },
    #[error("MLP needs at least one layer")]
    NoLayers,
    #[error("layer {layer} has a zero dimension")]
    ZeroDim { layer: usize },
    #[error("layer {layer} expects {expected} inputs but previous layer emits {actual}")]
    DimensionMismatch {
        layer: usize,
        expected: u32,
        actual: u32,
    },
    #[error("truncated weights: need {needed} bytes, {available} available")]
    TruncatedWeights { needed: u64, available: usize },
    #[error("truncated model header: {0}")]
    TruncatedHeader(WireError),
    #[error("{0} trailing bytes after model body")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("expected exactly 1 input tensor, got {0}")]
    InputCount(usize),
    #[error("expected {expected} output keys, got {actual}")]
    OutputCount { expected: usize, actual: usize },
    #[error("dense executors need f32 input, got {0:?}")]
    Dtype(Dtype),
    #[error("input rank {0} < 2; expected (batch, features...)")]
    Rank(usize),
    #[error("input has {actual} features per sample, model expects {expected}")]
    Features { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: u32,
    pub out_dim: u32,
    pub activation: Activation,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl DenseLayer {
    pub fn new(
        in_dim: u32,
        out_dim: u32,
        activation: Activation,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Self {
        assert_eq!(weights.len(), in_dim as usize * out_dim as usize);
        assert_eq!(bias.len(), out_dim as usize);
        DenseLayer {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
        }
    }

    /// Weights and bias uniform in [-1, 1) drawn from `rng`, weights first.
    pub fn random(in_dim: u32, out_dim: u32, activation: Activation, rng: &mut SplitMix64) -> Self {
        let weights = (0..in_dim as usize * out_dim as usize)
            .map(|_| rng.next_f32_signed())
            .collect();
        let bias = (0..out_dim).map(|_| rng.next_f32_signed()).collect();
        DenseLayer::new(in_dim, out_dim, activation, weights, bias)
    }

    fn forward_row(&self, x: &[f32], y: &mut Vec<f32>) {
        let in_dim = self.in_dim as usize;
        for (row, b) in self.weights.chunks_exact(in_dim).zip(&self.bias) {
            let mut acc = 0.0f32;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            let out = acc + b;
            y.push(match self.activation {
                Activation::None => out,
                Activation::Relu if out > 0.0 => out,
                Activation::Relu => 0.0,
            });
        }
    }
}

/// A parsed, validated executor.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Identity,
    Affine(DenseLayer),
    Mlp(Vec<DenseLayer>),
}

fn read_f32s(r: &mut ByteReader<'_>, n: u64) -> Result<Vec<f32>, ModelError> {
    let needed = n.saturating_mul(4);
    if (r.remaining() as u64) < needed {
        return Err(ModelError::TruncatedWeights {
            needed,
            available: r.remaining(),
        });
    }
    let bytes = r.take(needed as usize).expect("length checked");
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn layer_body(
    r: &mut ByteReader<'_>,
    in_dim: u32,
    out_dim: u32,
    activation: Activation,
) -> Result<DenseLayer, ModelError> {
    let weights = read_f32s(r, u64::from(in_dim).saturating_mul(u64::from(out_dim)))?;
    let bias = read_f32s(r, u64::from(out_dim))?;
    Ok(DenseLayer {
        in_dim,
        out_dim,
        activation,
        weights,
        bias,
    })
}

/// Parses a `MEX1` blob. Total over arbitrary input: never panics and never
/// allocates more than the blob length before validating it.
pub fn parse_model(blob: &[u8]) -> Result<Model, ModelError> {
    if blob.is_empty() {
        return Err(ModelError::Empty);
    }
    if blob.len() < 4 || &blob[..4] != MAGIC {
        return Err(ModelError::BadMagic(blob[..blob.len().min(4)].to_vec()));
    }
    let mut r = ByteReader::new(&blob[4..]);
    let hdr = |e| ModelError::TruncatedHeader(e);
    let exec = r.u8().map_err(hdr)?;
    let model = match exec {
        0 => Model::Identity,
        1 => {
            let in_dim = r.u32().map_err(hdr)?;
            let out_dim = r.u32().map_err(hdr)?;
            if in_dim == 0 || out_dim == 0 {
                return Err(ModelError::ZeroDim { layer: 0 });
            }
            Model::Affine(layer_body(&mut r, in_dim, out_dim, Activation::None)?)
        }
        2 => {
            let n = r.u8().map_err(hdr)? as usize;
            if n == 0 {
                return Err(ModelError::NoLayers);
            }
            let mut headers = Vec::with_capacity(n);
            for layer in 0..n {
                let in_dim = r.u32().map_err(hdr)?;
                let out_dim = r.u32().map_err(hdr)?;
                let act = match r.u8().map_err(hdr)? {
                    0 => Activation::None,
                    1 => Activation::Relu,
                    act => return Err(ModelError::UnknownActivation { layer, act }),
                };
                if in_dim == 0 || out_dim == 0 {
                    return Err(ModelError::ZeroDim { layer });
                }
                if let Some(&(_, prev_out, _)) = headers.last() {
                    if prev_out != in_dim {
                        return Err(ModelError::DimensionMismatch {
                            layer,
                            expected: in_dim,
                            actual: prev_out,
                        });
                    }
                }
                headers.push((in_dim, out_dim, act));
            }
            let layers = headers
                .into_iter()
                .map(|(in_dim, out_dim, act)| layer_body(&mut r, in_dim, out_dim, act))
                .collect::<Result<Vec<_>, _>>()?;
            Model::Mlp(layers)
        }
        other => return Err(ModelError::UnknownExecType(other)),
    };
    if r.remaining() > 0 {
        return Err(ModelError::TrailingBytes(r.remaining()));
    }
    Ok(model)
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Model {
    pub fn exec_type(&self) -> ExecType {
        match self {
            Model::Identity => ExecType::Identity,
            Model::Affine(_) => ExecType::Affine,
            Model::Mlp(_) => ExecType::Mlp,
        }
    }

    pub fn in_dim(&self) -> Option<u32> {
        match self {
            Model::Identity => None,
            Model::Affine(l) => Some(l.in_dim),
            Model::Mlp(ls) => ls.first().map(|l| l.in_dim),
        }
    }

    pub fn out_dim(&self) -> Option<u32> {
        match self {
            Model::Identity => None,
            Model::Affine(l) => Some(l.out_dim),
            Model::Mlp(ls) => ls.last().map(|l| l.out_dim),
        }
    }

    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.push(self.exec_type() as u8);
        match self {
            Model::Identity => {}
            Model::Affine(l) => {
                out.extend_from_slice(&l.in_dim.to_le_bytes());
                out.extend_from_slice(&l.out_dim.to_le_bytes());
                push_f32s(&mut out, &l.weights);
                push_f32s(&mut out, &l.bias);
            }
            Model::Mlp(layers) => {
                out.push(layers.len() as u8);
                for l in layers {
                    out.extend_from_slice(&l.in_dim.to_le_bytes());
                    out.extend_from_slice(&l.out_dim.to_le_bytes());
                    out.push(l.activation as u8);
                }
                for l in layers {
                    push_f32s(&mut out, &l.weights);
                    push_f32s(&mut out, &l.bias);
                }
            }
        }
        out
    }

    /// Evaluates the model. Dense executors take one f32 tensor shaped
    /// `(n, features...)` and return `(n, out_dim)`.
    pub fn run<T: Borrow<Tensor>>(&self, inputs: &[T]) -> Result<Vec<Tensor>, ExecError> {
        let [input] = inputs else {
            return Err(ExecError::InputCount(inputs.len()));
        };
        let input: &Tensor = input.borrow();
        let layers: &[DenseLayer] = match self {
            Model::Identity => return Ok(vec![input.clone()]),
            Model::Affine(l) => std::slice::from_ref(l),
            Model::Mlp(ls) => ls,
        };
        if input.dtype() != Dtype::F32 {
            return Err(ExecError::Dtype(input.dtype()));
        }
        let shape = input.shape();
        if shape.len() < 2 {
            return Err(ExecError::Rank(shape.len()));
        }
        let n = shape[0] as usize;
        let features = input.num_elements() / n;
        let in_dim = layers[0].in_dim as usize;
        if features != in_dim {
            return Err(ExecError::Features {
                expected: in_dim,
                actual: features,
            });
        }
        let x = input.to_f32_vec().expect("dtype checked");
        let out_dim = layers[layers.len() - 1].out_dim as usize;
        let mut y = Vec::with_capacity(n * out_dim);
        let mut cur = Vec::new();
        let mut next = Vec::new();
        for row in x.chunks_exact(in_dim) {
            cur.clear();
            cur.extend_from_slice(row);
            for layer in layers {
                next.clear();
                layer.forward_row(&cur, &mut next);
                std::mem::swap(&mut cur, &mut next);
            }
            y.extend_from_slice(&cur);
        }
        let t = Tensor::from_f32(vec![n as u64, out_dim as u64], &y).expect("shape matches data");
        Ok(vec![t])
    }

    /// Number of output tensors a run produces.
    pub fn num_outputs(&self) -> usize {
        1
    }
}

pub fn random_affine(in_dim: u32, out_dim: u32, seed: u64) -> Model {
    let mut rng = SplitMix64::new(seed);
    Model::Affine(DenseLayer::random(in_dim, out_dim, Activation::None, &mut rng))
}

/// `dims = [in, h1, ..., out]`; every layer but the last uses relu.
pub fn random_mlp(dims: &[u32], seed: u64) -> Model {
    assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
    let mut rng = SplitMix64::new(seed);
    let last = dims.len() - 2;
    Model::Mlp(
        dims.windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::None } else { Activation::Relu };
                DenseLayer::random(w[0], w[1], act, &mut rng)
            })
            .collect(),
    )
}
