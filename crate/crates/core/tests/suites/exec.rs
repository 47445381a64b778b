use isf::exec::{parse_model, Activation, DenseLayer, Model};
use isf::prng::SplitMix64;
use isf::store::StoreConfig;
use isf::wire::{StatusCode, Tensor};

use super::store::{connect, start};
use super::{ensure, SuiteResult};

/// Straight-line dense forward pass: for each output, sum w*x over the
/// inputs left to right, add the bias, then apply the activation.
pub fn oracle_forward(layers: &[DenseLayer], x: &[f32], n: usize) -> Vec<f32> {
    let mut rows: Vec<Vec<f32>> = x.chunks(x.len() / n).map(<[f32]>::to_vec).collect();
    for layer in layers {
        let (i_dim, o_dim) = (layer.in_dim as usize, layer.out_dim as usize);
        rows = rows
            .iter()
            .map(|row| {
                (0..o_dim)
                    .map(|o| {
                        let mut acc = 0.0f32;
                        for i in 0..i_dim {
                            acc += layer.weights[o * i_dim + i] * row[i];
                        }
                        let y = acc + layer.bias[o];
                        match layer.activation {
                            Activation::Relu if y <= 0.0 => 0.0,
                            _ => y,
                        }
                    })
                    .collect()
            })
            .collect();
    }
    rows.concat()
}

fn layers_of(model: &Model) -> &[DenseLayer] {
    match model {
        Model::Identity => &[],
        Model::Affine(l) => std::slice::from_ref(l),
        Model::Mlp(ls) => ls,
    }
}

fn random_layer(rng: &mut SplitMix64, i: u32, o: u32, act: Activation) -> DenseLayer {
    let w = (0..i * o).map(|_| rng.next_f32_signed()).collect();
    let b = (0..o).map(|_| rng.next_f32_signed()).collect();
    DenseLayer::new(i, o, act, w, b)
}

/// Random AFFINE or MLP model with every width in 1..=32.
pub fn random_model(rng: &mut SplitMix64) -> Model {
    let dim = |rng: &mut SplitMix64| 1 + rng.below(32) as u32;
    if rng.below(2) == 0 {
        let (i, o) = (dim(rng), dim(rng));
        return Model::Affine(random_layer(rng, i, o, Activation::None));
    }
    let depth = 1 + rng.below(4) as usize;
    let mut dims: Vec<u32> = (0..=depth).map(|_| dim(rng)).collect();
    dims[0] = dim(rng);
    Model::Mlp(
        dims.windows(2)
            .map(|w| {
                let act = if rng.below(4) == 0 { Activation::None } else { Activation::Relu };
                random_layer(rng, w[0], w[1], act)
            })
            .collect(),
    )
}

fn random_input(rng: &mut SplitMix64, model: &Model) -> Tensor {
    let in_dim = model.in_dim().unwrap() as usize;
    let n = 1 + rng.below(4) as usize;
    let x: Vec<f32> = (0..n * in_dim).map(|_| rng.next_f32_signed() * 4.0).collect();
    Tensor::from_f32(vec![n as u64, in_dim as u64], &x).unwrap()
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

pub fn worked_examples() -> SuiteResult {
    let affine = Model::Affine(DenseLayer::new(2, 2, Activation::None, vec![1., 0., 0., 2.], vec![1., -1.]));
    let parsed = parse_model(&affine.to_blob()).map_err(|e| e.to_string())?;
    ensure(parsed == affine, || "affine blob roundtrip".into())?;
    ensure(parsed.in_dim() == Some(2) && parsed.out_dim() == Some(2), || "affine dims".into())?;
    let x = Tensor::from_f32(vec![1, 2], &[3., 4.]).unwrap();
    let y = affine.run(&[&x]).map_err(|e| e.to_string())?.remove(0);
    ensure(y.to_f32_vec() == Some(vec![4., 7.]) && y.shape() == [1, 2], || format!("affine: {y:?}"))?;

    let mlp = Model::Mlp(vec![
        DenseLayer::new(1, 2, Activation::Relu, vec![1., -1.], vec![0., 0.]),
        DenseLayer::new(2, 1, Activation::None, vec![1., 1.], vec![0.]),
    ]);
    let x = Tensor::from_f32(vec![1, 1], &[2.]).unwrap();
    let y = mlp.run(&[&x]).map_err(|e| e.to_string())?.remove(0);
    ensure(y.to_f32_vec() == Some(vec![2.]), || format!("mlp relu: {y:?}"))?;

    let any = Tensor::new(isf::wire::Dtype::I32, vec![3], vec![1; 12]).unwrap();
    ensure(Model::Identity.run(&[&any]).map_err(|e| e.to_string())?[0] == any, || "identity".into())?;
    ensure(parse_model(b"MEX0\x00").is_err(), || "bad magic accepted".into())?;
    ensure(parse_model(b"MEX1\x00") == Ok(Model::Identity), || "identity blob".into())?;
    Ok("worked examples exact".into())
}

/// `count` random models: blob roundtrip and bit-exact agreement with the
/// oracle forward pass.
pub fn oracle_equivalence(count: usize) -> SuiteResult {
    let mut rng = SplitMix64::new(2024);
    for i in 0..count {
        let model = random_model(&mut rng);
        let parsed = parse_model(&model.to_blob()).map_err(|e| format!("model {i}: {e}"))?;
        ensure(parsed == model, || format!("model {i}: blob roundtrip differs"))?;
        let x = random_input(&mut rng, &model);
        let n = x.shape()[0] as usize;
        let got = parsed.run(&[&x]).map_err(|e| format!("model {i}: {e}"))?.remove(0);
        let want = oracle_forward(layers_of(&model), &x.to_f32_vec().unwrap(), n);
        let out_dim = model.out_dim().unwrap() as u64;
        ensure(got.shape() == [n as u64, out_dim], || format!("model {i}: shape {:?}", got.shape()))?;
        ensure(bits(&got.to_f32_vec().unwrap()) == bits(&want), || format!("model {i}: output differs from oracle"))?;
    }
    Ok(format!("{count} random models bit-exact against the oracle"))
}

/// The same models evaluated through SET_MODEL / RUN_MODEL on a live store
/// produce the bytes `Model::run` produces in-process.
pub fn networked_equivalence(count: usize) -> SuiteResult {
    let server = start(StoreConfig {
        workers: 2,
        ..StoreConfig::default()
    });
    let mut client = connect(&server);
    let mut rng = SplitMix64::new(2024);
    for i in 0..count {
        let model = random_model(&mut rng);
        let x = random_input(&mut rng, &model);
        let local = model.run(&[&x]).map_err(|e| e.to_string())?.remove(0);
        let (m, xin, yout) = (format!("m.{i}"), format!("0.in.{i}"), format!("0.out.{i}"));
        let call = |c: &mut isf::client::Client| -> Result<Tensor, isf::client::ClientError> {
            c.set_model(&m, &model.to_blob(), "cpu")?;
            c.put_tensor(&xin, &x)?;
            c.run_model(&m, &[&xin], &[&yout])?;
            c.get_tensor(&yout)
        };
        let remote = call(&mut client).map_err(|e| format!("model {i}: {e}"))?;
        ensure(remote == local, || format!("model {i}: networked output differs"))?;
        for k in [&xin, &yout] {
            client.delete_tensor(k).map_err(|e| e.to_string())?;
        }
    }
    let x = Tensor::from_f32(vec![1, 1], &[1.]).unwrap();
    client.put_tensor("0.in.x", &x).map_err(|e| e.to_string())?;
    let err = client.run_model("absent", &["0.in.x"], &["0.out.x"]).err();
    ensure(
        err.as_ref().and_then(|e| e.status()) == Some(StatusCode::NotFound),
        || format!("absent model: {err:?}"),
    )?;
    ensure(
        client.tensor_exists("0.out.x").ok() == Some(false),
        || "failed run left an output behind".into(),
    )?;
    Ok(format!("{count} models bit-exact over RUN_MODEL"))
}

pub fn all(count: usize) -> SuiteResult {
    let parts = [worked_examples()?, oracle_equivalence(count)?, networked_equivalence(count)?];
    Ok(parts.join("; "))
}
