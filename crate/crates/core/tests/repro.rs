use isf::client::{Client, ClientConfig};
use isf::exec::{random_mlp, Model};
use isf::repro::{
    consume, expected_infer_rows, expected_producer_rows, infer, infer_inline, output_key, produce,
    Pacer, ReproError, WorkloadMode, WorkloadSpec,
};
use isf::store::StoreConfig;
use isf::timing::TimingSink;

mod suites;

use suites::store::start;

fn client_with_sink(addr: &str, rank: u32) -> Client {
    Client::connect_with_sink(ClientConfig::colocated(addr), Some(TimingSink::new("t", rank))).unwrap()
}

fn quick(spec: &mut WorkloadSpec) {
    spec.sleep_ms = 0;
}

#[test]
fn forty_iterations_plus_two_warmup() {
    let server = start(StoreConfig::default());
    let addr = server.addr().to_string();
    let mut spec = WorkloadSpec::transfer(256 * 1024, 40, 2);
    quick(&mut spec);
    spec.retain_steps = Some(2);
    let mut c = client_with_sink(&addr, 0);
    produce(&spec, &mut c, 0, 1, &mut Pacer::new(&spec, 0, 1, None)).unwrap();
    let rows = c.take_sink().unwrap().take();
    assert_eq!(rows.len(), expected_producer_rows(&spec));
    let sends: Vec<_> = rows.iter().filter(|r| r.component == "send").collect();
    assert_eq!(sends.len(), 42);
    assert_eq!(sends.iter().filter(|r| !r.is_warmup()).count(), 40);
    assert!(sends.iter().all(|r| r.bytes == 262_144));
    assert_eq!(server.store().bytes_used(), 2 * 262_144);
}

#[test]
fn send_every_two_steps() {
    let server = start(StoreConfig::default());
    let mut spec = WorkloadSpec::transfer(1024, 6, 0);
    quick(&mut spec);
    spec.send_every = 2;
    spec.mode = WorkloadMode::TrainFeed;
    let mut c = client_with_sink(&server.addr().to_string(), 3);
    produce(&spec, &mut c, 3, 1, &mut Pacer::new(&spec, 3, 1, None)).unwrap();
    let iters: Vec<i64> = c
        .sink()
        .unwrap()
        .records()
        .iter()
        .filter(|r| r.component == "send")
        .map(|r| r.iter)
        .collect();
    assert_eq!(iters, [0, 2, 4]);
    for step in [0, 2, 4] {
        assert!(c.tensor_exists(&format!("3.sol.{step}")).unwrap());
    }
    assert!(!c.tensor_exists("3.sol.1").unwrap());
}

#[test]
fn consumer_gathers_from_six_producers() {
    let server = start(StoreConfig::default());
    let addr = server.addr().to_string();
    let mut spec = WorkloadSpec::transfer(4096, 3, 0);
    quick(&mut spec);
    spec.mode = WorkloadMode::TrainFeed;
    for rank in 0..6 {
        let mut c = client_with_sink(&addr, rank);
        produce(&spec, &mut c, rank, 6, &mut Pacer::new(&spec, rank, 6, None)).unwrap();
    }
    let mut consumer = client_with_sink(&addr, 100);
    let producers: Vec<u32> = (0..6).collect();
    let gathered = consume(&spec, &mut consumer, 100, &producers).unwrap();
    assert_eq!(gathered, 6 * 1024);
    let gets = consumer
        .sink()
        .unwrap()
        .records()
        .iter()
        .filter(|r| r.component == "retrieve" && r.iter == 0)
        .count();
    assert_eq!(gets, 6);
}

#[test]
fn consumer_without_producer_fails_cleanly() {
    let server = start(StoreConfig::default());
    let mut spec = WorkloadSpec::transfer(4096, 1, 0);
    spec.mode = WorkloadMode::TrainFeed;
    spec.poll_interval_ms = 5;
    spec.poll_max_tries = 3;
    let mut c = client_with_sink(&server.addr().to_string(), 9);
    let err = consume(&spec, &mut c, 9, &[0]).unwrap_err();
    assert!(matches!(err, ReproError::NoData(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
}

fn inference_spec(dir: &std::path::Path, model: &Model, batch_n: u32) -> WorkloadSpec {
    let path = dir.join("m.mex");
    std::fs::write(&path, model.to_blob()).unwrap();
    let mut spec = WorkloadSpec::transfer(0, 4, 1);
    quick(&mut spec);
    spec.mode = WorkloadMode::Inference;
    spec.model_file = Some(path);
    spec.batch_n = batch_n;
    spec.retain_steps = Some(2);
    spec
}

#[test]
fn identity_inference_echoes_input() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(StoreConfig::default());
    let mut spec = inference_spec(dir.path(), &Model::Identity, 4);
    spec.feature_dims = Some(vec![3, 8, 8]);
    let mut c = client_with_sink(&server.addr().to_string(), 0);
    infer(&spec, &mut c, 0, &mut Pacer::new(&spec, 0, 1, None)).unwrap();
    let rows = c.take_sink().unwrap().take();
    assert_eq!(rows.len(), expected_infer_rows(&spec, false));
}

#[test]
fn inline_matches_networked_output() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(StoreConfig::default());
    let model = random_mlp(&[48, 16, 5], 11);
    for batch_n in [1, 4, 16] {
        let spec = inference_spec(dir.path(), &model, batch_n);
        let mut c = client_with_sink(&server.addr().to_string(), 2);
        infer(&spec, &mut c, 2, &mut Pacer::new(&spec, 2, 1, None)).unwrap();
        let rows = c.take_sink().unwrap().take();
        let last = u64::from(spec.total_steps() - 1);
        let networked = c.get_tensor(&output_key(&c, 2, last)).unwrap();
        assert_eq!(networked.shape(), [u64::from(batch_n), 5]);
        for r in rows.iter().filter(|r| r.component == "total") {
            let parts: f64 = rows
                .iter()
                .filter(|p| p.iter == r.iter && ["send", "model_eval", "retrieve"].contains(&p.component.as_str()))
                .map(|p| p.micros)
                .sum();
            assert!(parts <= r.micros && r.micros - parts < 0.05 * r.micros + 50.0, "{parts} vs {}", r.micros);
        }

        let mut sink = TimingSink::new("t", 2);
        let inline = infer_inline(&spec, 2, &mut sink, &mut Pacer::new(&spec, 2, 1, None))
            .unwrap()
            .unwrap();
        assert_eq!(inline, networked, "batch {batch_n}");
        assert_eq!(sink.records().len(), expected_infer_rows(&spec, true));
    }
}
