use std::path::Path;
use std::process::{Command, Output};

const PRESET: [&str; 6] = [
    "--preset",
    "synthetic_aae_desk",
    "--set",
    "train_size=400",
    "--set",
    "test_size=200",
];

fn latentflow(args: &[&str], extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latentflow"))
        .args(args)
        .args(extra)
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_then_every_analysis_verb() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(latentflow(
        &[
            "train",
            "--out",
            s(&run),
            "--set",
            "prior=flow",
            "--set",
            "epochs=2",
            "--set",
            "flow_depth=2",
        ],
        &PRESET,
    ));
    for f in ["epochs.csv", "manifest.txt", "model.lfck", "samples.pgm"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(run.join("epochs.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let ck = run.join("model.lfck");

    let out = |name: &str| dir.path().join(name);
    ok(latentflow(
        &[
            "sample",
            "--checkpoint",
            s(&ck),
            "--n",
            "4",
            "--out",
            s(&out("s")),
        ],
        &PRESET,
    ));
    assert!(std::fs::read(out("s").join("samples.pgm"))
        .unwrap()
        .starts_with(b"P5\n"));
    ok(latentflow(
        &[
            "interpolate",
            "--checkpoint",
            s(&ck),
            "--space",
            "z0",
            "--out",
            s(&out("i")),
        ],
        &PRESET,
    ));
    assert!(out("i").join("interpolation.pgm").exists());
    ok(latentflow(
        &[
            "pca-traverse",
            "--checkpoint",
            s(&ck),
            "--out",
            s(&out("p")),
        ],
        &PRESET,
    ));
    assert!(out("p").join("pca.pgm").exists());
    ok(latentflow(
        &[
            "direction",
            "--checkpoint",
            s(&ck),
            "--class",
            "1",
            "--set",
            "probe_epochs=1",
            "--out",
            s(&out("d")),
        ],
        &PRESET,
    ));
    let profile = std::fs::read_to_string(out("d").join("profile.csv")).unwrap();
    assert!(profile.starts_with("index,p5,median,p95\n"));

    ok(latentflow(
        &[
            "metrics",
            "--checkpoint",
            s(&ck),
            "--set",
            "eval_samples=200",
            "--set",
            "ppl_pairs=50",
            "--set",
            "diversity_samples=100",
            "--set",
            "probe_epochs=1",
            "--out",
            s(&out("m")),
        ],
        &PRESET,
    ));
    let metrics = std::fs::read_to_string(out("m").join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(!metrics.contains("failed"), "{metrics}");

    let agg = out("agg.csv");
    let report = ok(latentflow(&["report", s(&out("m")), "--out", s(&agg)], &[]));
    assert!(String::from_utf8_lossy(&report.stdout).contains("flow"));
    assert!(std::fs::read_to_string(&agg)
        .unwrap()
        .starts_with("prior,latent_dim,beta,runs,frechet_mean"));
}

#[test]
fn grad_check_passes() {
    let out = ok(latentflow(&["grad-check"], &[]));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 30);
    assert!(text.lines().all(|l| l.starts_with("ok")), "{text}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x");
    assert_eq!(latentflow(&["frobnicate"], &[]).status.code(), Some(1));
    assert_eq!(
        latentflow(&["train", "--out", s(&x), "--set", "bogus=1"], &PRESET)
            .status
            .code(),
        Some(1)
    );
    let missing = latentflow(
        &["sample", "--checkpoint", "missing.lfck", "--out", s(&x)],
        &PRESET,
    );
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing.lfck"));
}

#[test]
fn shipped_configs_match_presets() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in latentflow::data::config::PRESETS {
        let text = std::fs::read_to_string(dir.join(format!("{name}.cfg"))).unwrap();
        let parsed = latentflow::data::RunConfig::parse_str(&text).unwrap();
        let preset = latentflow::data::RunConfig::preset(name).unwrap();
        assert_eq!(parsed.manifest(), preset.manifest(), "{name}");
    }
}
