use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn lecodu(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lecodu"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--jobs", "1"])
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(output: Output) -> Output {
    assert!(
        output.status.success(),
        "exit {:?}: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(lecodu(&smoke_config(), &a, &["gen"]));
    ok(lecodu(&smoke_config(), &b, &["gen"]));
    for file in ["train.jsonl", "test.jsonl"] {
        let x = std::fs::read(a.join("data").join(file)).unwrap();
        let y = std::fs::read(b.join("data").join(file)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{file} differs");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("data/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["task"]["n_train"], 400);

    let c = dir.path().join("c");
    ok(lecodu(&smoke_config(), &c, &["--seed", "8", "gen"]));
    assert_ne!(
        std::fs::read(a.join("data/train.jsonl")).unwrap(),
        std::fs::read(c.join("data/train.jsonl")).unwrap()
    );
}

#[test]
fn train_without_base_names_the_missing_step() {
    let dir = tempfile::tempdir().unwrap();
    ok(lecodu(&smoke_config(), dir.path(), &["gen"]));
    let out = lecodu(&smoke_config(), dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-base"));

    let fresh = tempfile::tempdir().unwrap();
    let out = lecodu(&smoke_config(), fresh.path(), &["train-base"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lecodu gen"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(smoke_config()).unwrap();
    let typo = dir.path().join("typo.toml");
    std::fs::write(&typo, text.replace("[train]\n", "[train]\nlamda = 0.1\n")).unwrap();
    let out = lecodu(&typo, dir.path(), &["gen"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, text.replace("noise_rate = 0.25", "noise_rate = 2.0")).unwrap();
    let out = lecodu(&bad, dir.path(), &["gen"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("annotators[0]"));

    let out = lecodu(&dir.path().join("absent.toml"), dir.path(), &["gen"]);
    assert_eq!(out.status.code(), Some(2));
}

fn read_csv(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn full_pipeline_produces_a_curve_per_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for step in ["gen", "train-base", "consensus", "train", "eval"] {
        ok(lecodu(&smoke_config(), out, &[step]));
    }
    let curve = read_csv(&out.join("eval/curve.csv"));
    assert!(curve[0].starts_with("lambda,total_cost,cost_per_sample,accuracy"));
    assert!(curve.len() > 7, "{curve:?}");
    assert_eq!(read_csv(&out.join("consensus/table.csv")).len(), 3);
    assert_eq!(read_csv(&out.join("eval/sp_baseline.csv")).len(), 12);
    assert!(out.join("bundles/lambda-0.3/config.json").is_file());
    assert!(out.join("eval/traces/lambda-0.3.jsonl").is_file());
    for stage in ["data", "base", "consensus", "bundles", "eval"] {
        assert!(out.join(stage).join("manifest.json").is_file(), "{stage} manifest");
    }

    // The one-shot sweep trains the same models from the same seeds.
    ok(lecodu(&smoke_config(), out, &["sweep"]));
    assert_eq!(read_csv(&out.join("sweep/curve.csv")), curve);
}
