use std::path::Path;
use std::process::{Command, Output};

fn camtrap(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_camtrap"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = "n_events = 300\nepochs = 3\nepoch_size = 5\nbatch_size = 32\nhidden = [16]\n";

#[test]
fn sweep_from_configured_fractions() {
    let dir = tempfile::tempdir().unwrap();
    let base = "automation_empty_share = 0.75\nstage1_auto_fraction = 1.0\n";
    let out = stdout(&camtrap(
        dir.path(),
        &format!("{base}stage2_species_auto_fraction = 0.972\n"),
        &["sweep"],
    ));
    assert!(out.contains("total automated (species): 99.3%"), "{out}");
    assert!(out.contains("labor saved: 175"), "{out}");
    let out = stdout(&camtrap(
        dir.path(),
        &format!("{base}stage2_species_auto_fraction = 0.445\n"),
        &["sweep"],
    ));
    assert!(out.contains("total automated (species): 86.1%"), "{out}");
}

#[test]
fn full_run_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}ensemble_members = 3\n");
    stdout(&camtrap(dir.path(), &cfg, &["synth"]));
    let train = stdout(&camtrap(dir.path(), &cfg, &["train"]));
    assert_eq!(train.lines().count(), 3, "{train}");
    stdout(&camtrap(dir.path(), &cfg, &["eval"]));
    stdout(&camtrap(dir.path(), &cfg, &["sweep"]));
    let report = stdout(&camtrap(dir.path(), &cfg, &["report"]));
    let out = dir.path().join("out");

    for m in 0..3 {
        let ckpt: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join(format!("stage1_m{m}.ckpt.json"))).unwrap())
                .unwrap();
        let epoch = ckpt["epoch"].as_u64().unwrap();
        let log = std::fs::read_to_string(out.join(format!("stage1_m{m}.log.csv"))).unwrap();
        let best: Vec<&str> = log.lines().filter(|l| l.ends_with(",true")).collect();
        assert_eq!(best.len(), 1);
        assert!(best[0].starts_with(&format!("{epoch},")), "{} vs {epoch}", best[0]);
        assert!(out.join(format!("eval_binary_member{m}_image.json")).exists());
    }

    let curve = std::fs::read_to_string(out.join("stage1_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 100);
    assert!(out.join("stage1_curve.svg").exists());
    assert!(report.contains("report.md"));
    let md = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("paper reference, not reproduced"));

    let resolved = std::fs::read_to_string(out.join("train_stage1.config.toml")).unwrap();
    assert!(resolved.starts_with("# camtrap "));
    assert!(resolved.contains("ensemble_members = 3"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&camtrap(dir.path(), "n_events = 50\nseed = 1\n", &["synth"]));
    let a = std::fs::read(dir.path().join("out/manifest.jsonl")).unwrap();
    stdout(&camtrap(
        dir.path(),
        "n_events = 50\nseed = 1\n",
        &["--seed", "2", "synth"],
    ));
    let b = std::fs::read(dir.path().join("out/manifest.jsonl")).unwrap();
    assert_ne!(a, b);
    let resolved = std::fs::read_to_string(dir.path().join("out/synth.config.toml")).unwrap();
    assert!(resolved.contains("seed = 2"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        camtrap(dir.path(), "no_such_key = 1\n", &["synth"]).status.code(),
        Some(1)
    );
    assert_eq!(camtrap(dir.path(), "", &["train"]).status.code(), Some(2));
    assert_eq!(camtrap(dir.path(), "", &["report"]).status.code(), Some(2));
    assert_eq!(camtrap(dir.path(), "", &["frobnicate"]).status.code(), Some(1));
    assert_eq!(camtrap(dir.path(), "", &["--help"]).status.code(), Some(0));
}

#[test]
fn unreachable_target_is_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}stage = \"stage2\"\ncount_human_accuracy = 1.0\nhuman_accuracy = 1.0\n");
    stdout(&camtrap(dir.path(), &cfg, &["synth"]));
    stdout(&camtrap(dir.path(), &cfg, &["train"]));
    stdout(&camtrap(dir.path(), &cfg, &["eval"]));
    let out = camtrap(dir.path(), &cfg, &["sweep"]);
    let text = stdout(&out);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/sweep_summary.json")).unwrap()).unwrap();
    for task in ["species", "count"] {
        if summary[task]["automatable"] == false {
            assert!(text.contains("not automatable"), "{text}");
        }
    }
}
