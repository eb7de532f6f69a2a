use ibf_wasm::{describe_json, lyapunov_json, Cloud};

#[test]
fn describe_reports_exponents_and_table() {
    let v: serde_json::Value = serde_json::from_str(&describe_json(2, 0.0, 50).unwrap()).unwrap();
    assert_eq!(v["lyapunov"][0].as_f64().unwrap(), 1.0);
    assert_eq!(v["lyapunov"][1].as_f64().unwrap(), -1.0);
    assert_eq!(v["volume_preserving"], true);
    assert_eq!(v["s"].as_array().unwrap().len(), 50);
    // volume preserving: psi is identically one
    for p in v["psi"].as_array().unwrap() {
        assert!((p.as_f64().unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn describe_rejects_bad_parameters() {
    assert!(describe_json(1, 0.0, 50).is_err());
    assert!(describe_json(2, 1.5, 50).is_err());
}

#[test]
fn cloud_is_reproducible() {
    let mut a = Cloud::create(0.0, 10, 0.01, 3).unwrap();
    let mut b = Cloud::create(0.0, 10, 0.01, 3).unwrap();
    let start = a.positions();
    a.advance(20).unwrap();
    b.advance(20).unwrap();
    assert_eq!(a.positions(), b.positions());
    assert_ne!(a.positions(), start);
    assert!((a.time() - 0.2).abs() < 1e-12);
}

#[test]
fn lyapunov_json_has_targets() {
    let v: serde_json::Value = serde_json::from_str(&lyapunov_json(2, 0.0, 2.0, 4, 1).unwrap()).unwrap();
    assert_eq!(v["targets"][0].as_f64().unwrap(), 1.0);
    assert_eq!(v["estimates"].as_array().unwrap().len(), 2);
}
