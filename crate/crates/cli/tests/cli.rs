use std::path::Path;

use ngdf::planner::{Obstacle, SceneSpec};
use ngdf::se3::{Pose, Vec3};
use std::process::{Command, Output};

const SMALL: &str = r#"
levelset_trials = 3

[dataset]
num_queries = 200
density = 500

[train]
hidden = 1
width = 16
latent_dim = 4
epochs = 2
batch_size = 32
augmentation_density = 200

[levelset]
steps = 20

[planner]
iterations = 10
waypoints = 8

[suite]
scenes = 2
oracle_density = 500
"#;

fn ngdf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ngdf"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{}: {e}", dir.join(name).display()))
}

#[test]
fn zero_queries_is_a_usage_error() {
    let dir = workspace();
    let out = ngdf(&["gen-data", "--n", "0"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn gen_data_is_reproducible_from_flags_and_from_the_resolved_config() {
    let dir = workspace();
    let base = ["gen-data", "--config", "small.toml", "--n", "150", "--radius", "0.4", "--seed", "5"];
    assert_eq!(code(&ngdf(&[&base[..], &["--out", "a"]].concat(), dir.path())), 0);
    assert_eq!(code(&ngdf(&[&base[..], &["--out", "b"]].concat(), dir.path())), 0);
    assert_eq!(code(&ngdf(&["gen-data", "--config", "a/config.toml", "--out", "c"], dir.path())), 0);
    let p = dir.path();
    for name in ["dataset.txt", "gen_report.txt", "config.toml"] {
        assert_eq!(read(&p.join("a"), name), read(&p.join("b"), name), "{name}");
        assert_eq!(read(&p.join("a"), name), read(&p.join("c"), name), "{name}");
    }
    let data = String::from_utf8(read(&p.join("a"), "dataset.txt")).unwrap();
    assert!(data.starts_with("# ngdf-dataset v1 ncp=6\n"));
    assert_eq!(data.lines().count(), 151);
    assert!(p.join("a/timing.txt").is_file());
    let other = ngdf(&["gen-data", "--config", "small.toml", "--seed", "6", "--out", "d"], p);
    assert_eq!(code(&other), 0);
    assert_ne!(read(&p.join("a"), "dataset.txt"), read(&p.join("d"), "dataset.txt"));
}

#[test]
fn train_then_evaluate_end_to_end() {
    let dir = workspace();
    let p = dir.path();
    assert_eq!(code(&ngdf(&["gen-data", "--config", "small.toml", "--out", "data"], p)), 0);
    for out in ["m1", "m2"] {
        let run = ngdf(&["train", "--config", "small.toml", "--dataset", "data/dataset.txt", "--aug-p", "0.5", "--out", out], p);
        assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
        assert!(String::from_utf8_lossy(&run.stdout).contains("final_val_l1"));
    }
    assert_eq!(read(&p.join("m1"), "model.bin"), read(&p.join("m2"), "model.bin"));
    assert_eq!(read(&p.join("m1"), "train_curve.csv"), read(&p.join("m2"), "train_curve.csv"));
    let resolved = String::from_utf8(read(&p.join("m1"), "config.toml")).unwrap();
    assert!(resolved.contains("augmentation_probability = 0.5"));

    let ls = ngdf(&["levelset", "--config", "small.toml", "--model", "m1/model.bin", "--out", "ls"], p);
    assert_eq!(code(&ls), 0, "{}", String::from_utf8_lossy(&ls.stderr));
    assert_eq!(String::from_utf8(read(&p.join("ls"), "levelset_trials.csv")).unwrap().lines().count(), 4);
    assert_eq!(String::from_utf8(read(&p.join("ls"), "levelset_path.csv")).unwrap().lines().count(), 22);

    let ab = ngdf(&["ablate", "--config", "small.toml", "--model", "m1/model.bin", "--out", "ab"], p);
    assert_eq!(code(&ab), 0, "{}", String::from_utf8_lossy(&ab.stderr));
    let table = String::from_utf8(read(&p.join("ab"), "ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    for mode in ["adam+ik", "fixed+ik", "adam+constant", "fixed+constant"] {
        assert!(table.contains(mode));
        assert!(p.join("ab").join(format!("plan_{mode}.csv")).is_file());
    }
}

#[test]
fn oracle_field_commands_run_without_a_checkpoint() {
    let dir = workspace();
    let p = dir.path();
    let ls = ngdf(&["levelset", "--config", "small.toml", "--field", "oracle", "--trials", "2", "--out", "ls"], p);
    assert_eq!(code(&ls), 0, "{}", String::from_utf8_lossy(&ls.stderr));
    for out in ["s1", "s2"] {
        let plan = ngdf(&["plan", "--config", "small.toml", "--field", "oracle", "--seed", "4", "--out", out], p);
        assert_eq!(code(&plan), 0, "{}", String::from_utf8_lossy(&plan.stderr));
    }
    assert_eq!(read(&p.join("s1"), "plan_suite.csv"), read(&p.join("s2"), "plan_suite.csv"));
    assert_eq!(read(&p.join("s1"), "plan.txt"), read(&p.join("s2"), "plan.txt"));

    let object = Pose::from_translation(Vec3::new(0.5, 0.0, 0.3));
    let obstacle = Obstacle::Sphere {
        center: [0.5, 0.25, 0.3],
        radius: 0.05,
    };
    let scene = SceneSpec::new(vec![obstacle], object, 0).unwrap();
    std::fs::write(p.join("scene.toml"), scene.to_toml()).unwrap();
    let one = ngdf(&["plan", "--config", "small.toml", "--field", "oracle", "--scene", "scene.toml", "--out", "one"], p);
    assert_eq!(code(&one), 0, "{}", String::from_utf8_lossy(&one.stderr));
    let traj = String::from_utf8(read(&p.join("one"), "trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 9);
    assert_eq!(String::from_utf8(read(&p.join("one"), "cost_log.csv")).unwrap().lines().count(), 12);
}

#[test]
fn missing_artifacts_and_bad_configuration_exit_with_two() {
    let dir = workspace();
    let p = dir.path();
    assert_eq!(code(&ngdf(&["train", "--dataset", "nope.txt"], p)), 2);
    assert_eq!(code(&ngdf(&["train"], p)), 2);
    assert_eq!(code(&ngdf(&["levelset", "--model", "nope.bin"], p)), 2);
    assert_eq!(code(&ngdf(&["levelset"], p)), 2);
    assert_eq!(code(&ngdf(&["plan", "--field", "oracle", "--scene", "nope.toml"], p)), 2);
    assert_eq!(code(&ngdf(&["ablate", "--field", "oracle", "--chain", "nope.toml"], p)), 2);
    assert_eq!(code(&ngdf(&["gen-data", "--config", "nope.toml"], p)), 2);
    std::fs::write(p.join("bad.toml"), "[train]\nepoch = 3\n").unwrap();
    assert_eq!(code(&ngdf(&["gen-data", "--config", "bad.toml"], p)), 2);
    std::fs::write(p.join("invalid.toml"), "[levelset]\nsteps = 0\n").unwrap();
    assert_eq!(code(&ngdf(&["gen-data", "--config", "invalid.toml"], p)), 2);
    assert_eq!(code(&ngdf(&["gen-data", "--radius", "-1"], p)), 2);
    assert_eq!(code(&ngdf(&["frobnicate"], p)), 2);
    let threads = Command::new(env!("CARGO_BIN_EXE_ngdf"))
        .args(["gen-data", "--config", "small.toml"])
        .current_dir(p)
        .env("NGDF_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&threads), 2);
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = workspace();
    std::fs::write(dir.path().join("blocker"), "").unwrap();
    let out = ngdf(&["gen-data", "--config", "small.toml", "--out", "blocker/sub"], dir.path());
    assert_eq!(code(&out), 3);
}
