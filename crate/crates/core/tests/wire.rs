mod suites;

#[test]
fn goldens() {
    suites::codec::goldens().unwrap();
}

#[test]
fn tensor_roundtrip_property() {
    suites::codec::tensor_roundtrip().unwrap();
}

#[test]
fn frames_survive_any_chunking() {
    suites::codec::frame_roundtrip().unwrap();
}

#[test]
fn meta_and_run_model_payloads_roundtrip() {
    suites::codec::payload_roundtrip().unwrap();
}
