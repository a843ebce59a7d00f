use mid_core::games::{DiscreteJoint, Domains, Mechanism, MechanismSpec, Privacy};
use mid_core::harness::{GamesConfig, JointSource};
use std::path::Path;
use std::process::{Command, Output};

fn mid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mid")).args(args).output().expect("spawn mid")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_TREE: &str = r#"{
    "data": {"type": "preset", "preset": "survey", "n_samples": 200},
    "model": "tree",
    "defenses": [{"type": "none"}, {"type": "mid", "lambdas": [0.1]}],
    "repetitions": 2,
    "seed": 5
}"#;

#[test]
fn sweep_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL_TREE);
    let out = tmp.path().join("run");
    let o = mid(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = out.join("tradeoff.csv");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);

    let plots = tmp.path().join("plots");
    let o = mid(&["report", "--input", csv.to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(plots.join("tree_naive_map_macro_f1.csv").exists());
}

#[test]
fn seed_flag_overrides_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL_TREE);
    let run = |seed: &str, dir: &str| {
        let out = tmp.path().join(dir);
        let o = mid(&["train", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        std::fs::read_to_string(out.join("model.json")).unwrap()
    };
    assert_eq!(run("9", "a"), run("9", "b"));
    assert_ne!(run("9", "a"), run("10", "c"));
}

#[test]
fn synth_and_attack_write_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL_TREE);
    let out = tmp.path().join("o");
    let o = mid(&["synth", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(out.join("data.csv")).unwrap().lines().count(), 201);
    assert!(out.join("schema.json").exists());

    let o = mid(&["attack", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("attack_naive_map.csv").exists());
    assert!(out.join("attack_prior_baseline.csv").exists());
}

#[test]
fn bad_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let cfg = write_config(tmp.path(), "bad.json", r#"{"repetitions": 0}"#);
    assert_eq!(mid(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(1));
    let cfg = write_config(tmp.path(), "typo.json", r#"{"repetitons": 3}"#);
    assert_eq!(mid(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(mid(&["sweep", "--bogus"]).status.code(), Some(1));
}

#[test]
fn missing_input_is_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mid(&["report", "--input", tmp.path().join("nope.csv").to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn games_pass_and_violation_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    let ok = write_config(tmp.path(), "ok.json", r#"{"trials": 4000, "sizes": [1, 2]}"#);
    let o = mid(&["games", "--config", &ok, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("games.json").exists());

    let bad = GamesConfig {
        joint: JointSource::Table {
            joint: DiscreteJoint::deterministic(Domains::new(2, 2, 2), |a, b| a ^ b).unwrap(),
        },
        mechanism: MechanismSpec {
            mechanism: Mechanism::LaplaceHistogram { epsilon: 50.0 },
            declared: Privacy::Dp { epsilon: 0.01, delta: 0.0 },
        },
        sizes: vec![5],
        trials: 20_000,
        theorem1: false,
        ..Default::default()
    };
    let bad = write_config(tmp.path(), "bad.json", &serde_json::to_string(&bad).unwrap());
    let o = mid(&["games", "--config", &bad, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
