use mid_core::data::split_indices;
use mid_core::games::{DiscreteJoint, Domains, Mechanism, MechanismSpec, Privacy};
use mid_core::harness::*;
use mid_core::linreg::train_ridge;
use mid_core::metrics::mse;
use mid_core::synth::Preset;
use mid_core::Seed;

fn small_linreg(defenses: Vec<Defense>) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Preset {
            preset: Preset::Iwpc,
            n_samples: 300,
        },
        defenses,
        repetitions: Some(2),
        seed: Seed(11),
        ..Default::default()
    }
}

fn small_tree(defenses: Vec<Defense>) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Preset {
            preset: Preset::Survey,
            n_samples: 400,
        },
        model: ModelFamily::Tree,
        defenses,
        attacks: vec![AttackKind::NaiveMap, AttackKind::MapWithCounts],
        repetitions: Some(3),
        seed: Seed(5),
        ..Default::default()
    }
}

#[test]
fn single_ridge_point_matches_direct_pipeline() {
    let mut cfg = small_linreg(vec![Defense::Mid { lambdas: vec![0.0] }, Defense::None]);
    cfg.repetitions = Some(1);
    let records = run_sweep(&cfg).unwrap();
    let data = cfg.data.load(cfg.seed).unwrap();
    let (tr, te) = split_indices(data.len(), 0.2, cfg.seed.offset(0).derive(STREAM_SPLIT)).unwrap();
    let train = data.subset(&tr).unwrap();
    let test = data.subset(&te).unwrap();
    let model = train_ridge(&train, 0.0).unwrap();
    let want = mse(&model.predict(&test), test.labels()).unwrap();
    let mid = records.iter().find(|r| r.defense == "mid").unwrap();
    let none = records.iter().find(|r| r.defense == "none").unwrap();
    // λ = 0 starts at the ridge solution and stops at once.
    assert!((mid.utility_mean - want).abs() < 1e-9 * want, "{} vs {want}", mid.utility_mean);
    assert_eq!(none.utility_mean, want);
    assert_eq!(mid.utility_stderr, 0.0);
    assert_eq!(mid.repetitions, 1);
}

#[test]
fn identical_configs_give_identical_csv_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let mut cfg = small_tree(vec![
            Defense::None,
            Defense::Mid { lambdas: vec![0.1] },
            Defense::Dp {
                epsilons: vec![1.0],
                delta: 1e-5,
            },
            Defense::Priority { depths: vec![1] },
        ]);
        cfg.output = Some(dir.path().join(name));
        run_sweep(&cfg).unwrap();
        bytes.push(std::fs::read(dir.path().join(name)).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    let text = String::from_utf8(bytes[0].clone()).unwrap();
    // 4 grid points x 2 attacks, plus the header.
    assert_eq!(text.lines().count(), 9);
}

#[test]
fn records_round_trip_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    let mut cfg = small_tree(vec![Defense::Mid { lambdas: vec![0.0, 0.3] }]);
    cfg.output = Some(path.clone());
    let records = run_sweep(&cfg).unwrap();
    assert_eq!(load_records_csv(&path).unwrap(), records);
    for r in &records {
        assert!(r.utility_stderr >= 0.0 && r.attack_train_stderr >= 0.0 && r.gap_stderr >= 0.0);
        assert_eq!(r.repetitions, 3);
        let e = r.ece_mean.unwrap();
        assert!((0.0..=1.0).contains(&e));
        assert_eq!(r.attack_metric, "macro_f1");
    }
}

#[test]
fn stderr_matches_per_repetition_values() {
    // Three single-repetition sweeps with seeds base, base+1, base+2 are the
    // repetitions of one three-repetition sweep.
    let base = small_tree(vec![Defense::Mid { lambdas: vec![0.05] }]);
    let full = run_sweep(&base).unwrap();
    let data = base.data.load(base.seed).unwrap();
    let mut per_rep = Vec::new();
    for i in 0..3u64 {
        let cfg = ExperimentConfig {
            repetitions: Some(1),
            seed: base.seed.offset(i),
            ..base.clone()
        };
        per_rep.push(run_sweep_on(&cfg, &data).unwrap()[0].attack_train_mean);
    }
    let mean = per_rep.iter().sum::<f64>() / 3.0;
    let sd = (per_rep.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    assert!((full[0].attack_train_mean - mean).abs() < 1e-12);
    assert!((full[0].attack_train_stderr - sd / 3f64.sqrt()).abs() < 1e-12);
}

#[test]
fn failure_keeps_completed_points_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("partial.csv");
    let mut cfg = small_linreg(vec![Defense::None, Defense::Mid { lambdas: vec![1.0] }]);
    cfg.output = Some(path.clone());
    // A step this large makes gradient descent blow up.
    cfg.linreg.learning_rate = Some(1e12);
    let err = run_sweep(&cfg).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("defense mid lambda=1"), "{msg}");
    assert!(msg.contains("repetition 0"), "{msg}");
    assert!(!err.is_config());
    let flushed = load_records_csv(&path).unwrap();
    assert!(!flushed.is_empty());
    assert!(flushed.iter().all(|r| r.defense == "none"));
}

#[test]
fn invalid_configs_are_config_errors() {
    for json in [
        r#"{"repetitions": 0}"#,
        r#"{"test_fraction": 1.5}"#,
        r#"{"defenses": [{"type": "mid", "lambdas": []}]}"#,
        r#"{"defenses": [{"type": "priority", "depths": [1]}]}"#,
        r#"{"attacks": ["map_with_counts"]}"#,
        r#"{"attacks": ["gmi"]}"#,
        r#"{"model": "forest"}"#,
    ] {
        let cfg = ExperimentConfig::from_json(json);
        let err = cfg.and_then(|c| run_sweep(&c).map(|_| ())).unwrap_err();
        assert!(err.is_config(), "{json}: {err}");
    }
}

fn plot_records() -> Vec<TradeoffRecord> {
    let mut cfg = small_tree(vec![
        Defense::Mid {
            lambdas: vec![0.3, 0.0, 0.1],
        },
        Defense::Dp {
            epsilons: vec![0.5, 5.0, 50.0],
            delta: 1e-5,
        },
    ]);
    cfg.attacks = vec![AttackKind::NaiveMap];
    cfg.repetitions = Some(2);
    run_sweep(&cfg).unwrap()
}

#[test]
fn plotdata_shape_order_and_round_trip() {
    let records = plot_records();
    let dir = tempfile::tempdir().unwrap();
    let paths = emit_plotdata(&records, dir.path()).unwrap();
    assert_eq!(paths.len(), 1);
    assert!(paths[0].with_extension("columns.txt").exists());
    let mut rdr = csv::Reader::from_path(&paths[0]).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, PLOT_COLUMNS);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    let series: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(series, ["mid", "mid", "mid", "dp", "dp", "dp"]);
    for s in ["mid", "dp"] {
        let xs: Vec<f64> = rows.iter().filter(|r| &r[0] == s).map(|r| r[2].parse().unwrap()).collect();
        assert!(xs.windows(2).all(|w| w[0] <= w[1]), "{s}: {xs:?}");
    }
    // Parse back and match every numeric field exactly.
    for row in &rows {
        let hp: f64 = row[1].parse().unwrap();
        let rec = records.iter().find(|r| r.defense == row[0] && r.hyperparameter == hp).unwrap();
        let want = [
            rec.utility_mean,
            rec.utility_stderr,
            rec.attack_train_mean,
            rec.attack_train_stderr,
            rec.attack_test_mean,
            rec.attack_test_stderr,
        ];
        for (j, w) in want.iter().enumerate() {
            let got: f64 = row[2 + j].parse().unwrap();
            assert_eq!(got.to_bits(), w.to_bits());
            // 17 significant digits in scientific notation.
            assert_eq!(row[2 + j].split('e').next().unwrap().trim_start_matches('-').len(), 18);
        }
    }
}

#[test]
fn plotdata_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_plotdata(&[], dir.path()).is_err());
}

#[test]
fn nn_sweep_with_all_defenses_and_attacks() {
    let cfg = ExperimentConfig {
        data: DataSource::Preset {
            preset: Preset::Blobs,
            n_samples: 300,
        },
        model: ModelFamily::Nn,
        defenses: vec![
            Defense::None,
            Defense::Mid { lambdas: vec![0.01] },
            Defense::Dp {
                epsilons: vec![10.0],
                delta: 1e-5,
            },
        ],
        attacks: vec![AttackKind::NaiveMap, AttackKind::KnowledgeAlignment],
        attack_metrics: Some(vec![AttackMetric::Accuracy, AttackMetric::Auroc]),
        vib: mid_core::nn::VibConfig {
            epochs: 5,
            hidden_dim: 16,
            bottleneck_dim: 4,
            ..Default::default()
        },
        dpsgd: mid_core::nn::DpsgdConfig {
            epochs: 3,
            hidden_dim: 16,
            bottleneck_dim: 4,
            ..Default::default()
        },
        inversion: mid_core::attacks::InversionConfig {
            epochs: 5,
            ..Default::default()
        },
        ..Default::default()
    };
    assert_eq!(cfg.repetitions(), 3);
    let records = run_sweep(&cfg).unwrap();
    assert_eq!(records.len(), 3 * 2 * 2);
    for r in &records {
        assert_eq!(r.utility_metric, "accuracy");
        assert!((0.0..=1.0).contains(&r.utility_mean));
        assert!(r.ece_mean.is_some());
        assert!((0.0..=1.0).contains(&r.attack_train_mean) && (0.0..=1.0).contains(&r.attack_test_mean));
    }
    // Constant prior scores give AUROC exactly 1/2.
    let auroc = records.iter().find(|r| r.attack_metric == "auroc").unwrap();
    assert_eq!(auroc.baseline_train_mean, 0.5);
}

#[test]
fn single_run_serializes_model_and_attacks() {
    let cfg = small_tree(vec![Defense::Mid { lambdas: vec![0.1] }]);
    let run = run_single(&cfg).unwrap();
    let tree = mid_core::tree::DecisionTree::from_json(&run.model_json).unwrap();
    assert!(tree.num_nodes() >= 1);
    assert_eq!(run.attacks.len(), 2);
    let n = cfg.data.load(cfg.seed).unwrap().len();
    assert_eq!(run.attacks[0].1.records.len(), n);
}

#[test]
fn default_games_config_passes() {
    let report = run_games(&GamesConfig::default()).unwrap();
    assert!(report.pass, "{report:?}");
    assert_eq!(report.theorem1.len(), 3);
    assert_eq!(report.theorem2.len(), 3);
    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("\"pass\":true"));
}

#[test]
fn misdeclared_epsilon_fails_theorem2() {
    let cfg = GamesConfig {
        joint: JointSource::Table {
            joint: DiscreteJoint::deterministic(Domains::new(2, 2, 2), |a, b| a ^ b).unwrap(),
        },
        mechanism: MechanismSpec {
            mechanism: Mechanism::LaplaceHistogram { epsilon: 50.0 },
            declared: Privacy::Dp {
                epsilon: 0.01,
                delta: 0.0,
            },
        },
        sizes: vec![5],
        trials: 20_000,
        theorem1: false,
        ..Default::default()
    };
    let report = run_games(&cfg).unwrap();
    assert!(!report.pass, "{:?}", report.theorem2);
    assert!(!report.theorem2[0].pass);
}

#[test]
fn zero_trials_is_a_config_error() {
    let cfg = GamesConfig {
        trials: 0,
        ..Default::default()
    };
    assert!(run_games(&cfg).unwrap_err().is_config());
    let parsed = GamesConfig::from_json(r#"{"trials": 0}"#).unwrap();
    assert!(run_games(&parsed).unwrap_err().is_config());
}
