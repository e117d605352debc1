use std::path::Path;
use std::process::{Command, Output};

fn facelock(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facelock"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

const PLAN: [&str; 10] = [
    "--dataset",
    "synthetic:2",
    "--methods",
    "facelock,vae",
    "--seeds",
    "0,1",
    "--prompt",
    "facial_01",
    "--steps",
    "3",
];

#[test]
fn evaluate_writes_records_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["evaluate"];
    args.extend(PLAN);
    ok(&facelock(dir.path(), &args));
    let records = std::fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 2 * 3 * 2);
    for stem in ["method", "method_category", "method_purification"] {
        for ext in ["csv", "json", "md"] {
            assert!(dir.path().join(format!("{stem}.{ext}")).exists(), "{stem}.{ext}");
        }
    }

    let again = tempfile::tempdir().unwrap();
    args.extend(["--jobs", "2"]);
    ok(&facelock(again.path(), &args));
    assert_eq!(std::fs::read_to_string(again.path().join("records.jsonl")).unwrap(), records);
    assert_eq!(
        std::fs::read(again.path().join("method.csv")).unwrap(),
        std::fs::read(dir.path().join("method.csv")).unwrap()
    );

    let csv = ok(&facelock(
        dir.path(),
        &["report", dir.path().join("records.jsonl").to_str().unwrap(), "--format", "csv"],
    ));
    assert_eq!(csv, std::fs::read_to_string(dir.path().join("method.csv")).unwrap());
}

#[test]
fn protect_purify_and_edit_write_images() {
    let dir = tempfile::tempdir().unwrap();
    ok(&facelock(dir.path(), &["protect", "synthetic:1", "--attack", "photoguard", "--steps", "2"]));
    let png = dir.path().join("synthetic_000.photoguard.png");
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("synthetic_000.photoguard.json")).unwrap())
            .unwrap();
    assert!(sidecar["linf"].as_f64().unwrap() <= 0.02);
    assert_eq!(sidecar["method"], "photoguard");

    ok(&facelock(dir.path(), &["purify", png.to_str().unwrap(), "--kind", "jpeg75"]));
    assert!(dir.path().join("synthetic_000.photoguard.jpeg75.png").exists());

    ok(&facelock(dir.path(), &["edit", "synthetic:1", "--prompt", "accessory_03", "--seeds", "0,4"]));
    for s in [0, 4] {
        assert!(dir.path().join(format!("synthetic_000.accessory_03.s{s}.png")).exists());
    }
}

#[test]
fn sweep_and_ablation_emit_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mut sweep = vec!["sweep", "--budgets", "0,0.02"];
    sweep.extend(PLAN);
    ok(&facelock(dir.path(), &sweep));
    let csv = std::fs::read_to_string(dir.path().join("budget.csv")).unwrap();
    assert!(csv.starts_with("method,epsilon,clip_s_mean"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2);

    let mut ablate = vec!["ablate", "--designs", "cvl,cvl_d,cvl_dp,facelock"];
    ablate.extend(PLAN);
    ok(&facelock(dir.path(), &ablate));
    let md = std::fs::read_to_string(dir.path().join("design.md")).unwrap();
    assert_eq!(md.lines().count(), 2 + 4);
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = facelock(dir.path(), &["protect", "synthetic:1", "--backend", "real"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing backend component"));

    let o = facelock(dir.path(), &["protect", "synthetic:1", "--attack", "nope"]);
    assert!(!o.status.success());

    let empty = tempfile::tempdir().unwrap();
    let o = facelock(dir.path(), &["evaluate", "--dataset", empty.path().to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn shipped_configs_parse_and_validate() {
    for name in ["toy", "real"] {
        let path = format!("{}/../../configs/{name}.toml", env!("CARGO_MANIFEST_DIR"));
        let cfg = facelock::harness::Config::load(&path).unwrap();
        cfg.validate().unwrap();
        assert!(cfg.plan.dataset.is_some());
    }
}

#[test]
fn toy_config_runs_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{}/../../configs/toy.toml", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&config)
        .unwrap()
        .replace("cache = \"out/cache\"", &format!("cache = {:?}", dir.path().join("cache")));
    let local = dir.path().join("toy.toml");
    std::fs::write(&local, text).unwrap();
    let o = facelock(
        dir.path(),
        &["--config", local.to_str().unwrap(), "evaluate", "--steps", "2", "--seeds", "0", "--purify", "none"],
    );
    ok(&o);
    let n = std::fs::read_to_string(dir.path().join("records.jsonl")).unwrap().lines().count();
    assert_eq!(n, 4 * 3 * 5);
    assert!(std::fs::read_dir(dir.path().join("cache")).unwrap().count() > 0);
}
