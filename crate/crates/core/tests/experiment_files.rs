use std::fs;

use aoisim::experiment::{simulate, ExperimentConfig};
use aoisim::Error;

fn config(dir: &std::path::Path, extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"{{
            "system": {{"num_flows": 5, "num_servers": 2}},
            "traffic": {{"rho": [0.4, 0.9], "delay_model": {{"kind": "bernoulli_half"}}, "horizon": 300}},
            "service": {{"kind": "shifted_exponential", "shift": 0.3333333333333333, "rate": 1.5}},
            "policies": ["np-MASIF-LGFS", "np-MAF-LGFS"],
            "penalty": {{"kind": "avg"}},
            "replications": 5,
            "base_seed": 42,
            "output": {{"dir": {dir:?}{extra}}}
        }}"#,
        dir = dir.to_str().unwrap()
    );
    ExperimentConfig::from_json_str(&text).unwrap()
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&config(&a, "")).unwrap();
    simulate(&config(&b, "")).unwrap();
    assert_eq!(fs::read(a.join("results.csv")).unwrap(), fs::read(b.join("results.csv")).unwrap());
    let ma = fs::read_to_string(a.join("manifest.json")).unwrap();
    let mb = fs::read_to_string(b.join("manifest.json")).unwrap();
    assert_eq!(ma.replace(a.to_str().unwrap(), ""), mb.replace(b.to_str().unwrap(), ""));
}

#[test]
fn manifest_echoes_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, paths) = simulate(&config(tmp.path(), "")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(paths.manifest).unwrap()).unwrap();
    assert_eq!(m["config"]["warmup_fraction"], 0.1);
    assert_eq!(m["config"]["system"]["initial_age"], 0.0);
    assert_eq!(m["grid"].as_array().unwrap().len(), 2);
    assert_eq!(m["xi_above_delta_runs"], 0);
}

#[test]
fn trace_dumps_behind_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, paths) = simulate(&config(tmp.path(), "")).unwrap();
    assert!(paths.traces.is_none());
    let (_, paths) = simulate(&config(tmp.path(), r#", "dump_traces": true"#)).unwrap();
    let n = fs::read_dir(paths.traces.unwrap()).unwrap().count();
    assert_eq!(n, 2 * 2 * 5);
}

#[test]
fn zero_replications_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = config(tmp.path(), "");
    c.replications = 0;
    assert!(matches!(simulate(&c), Err(Error::InvalidKeys(k)) if k[0].starts_with("replications")));
    assert!(!tmp.path().join("results.csv").exists());
}
