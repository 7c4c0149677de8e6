use std::path::Path;
use std::process::{Command, Output};

use hapfuse_core::analysis::eval::EvalReport;
use hapfuse_core::io::dataset::directory_digest;

const TINY: &str = r#"
[pipeline]
mel_bins = 8
window_frames = 4
n_fft = 256
points = 16

[model]
dim = 8
audio_channels = 4
point_hidden = 8
proprio_hidden = 8
gate_hidden = 8
denoiser_hidden = 16
time_embed = 8
diffusion_steps = 10
inference_steps = 5
horizon = 4
exec_actions = 2

[train]
steps = 12
batch = 4
warmup = 2
checkpoint_every = 6
pretrain_steps = 4

[eval]
trials = 2
variants = [4]

[mi]
rollouts = 2
"#;

fn hapfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hapfuse")).args(args).output().expect("runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn metric_calculator() {
    for (args, want) in [(["0", "0", "0"], "0.0000"), (["1", "1", "1"], "1.0000"), (["2", "0", "5"], "2.6000")] {
        let mut a = vec!["metric"];
        a.extend(args);
        let o = hapfuse(&a);
        assert!(o.status.success());
        assert_eq!(stdout(&o), want);
    }
    let o = hapfuse(&["metric", "1", "2", "3", "--weights", "1,0,0"]);
    assert_eq!(stdout(&o), "1.0000");
    let o = hapfuse(&["metric", "-1", "0", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("d_slide"));
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nD = 4\n").unwrap();
    let o = hapfuse(&["gen-data", "--config", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("model.D"), "{err}");
    assert_eq!(err.trim().lines().count(), 1, "{err}");

    assert_eq!(hapfuse(&["no-such-verb"]).status.code(), Some(1));
    assert_eq!(hapfuse(&["train", "--mode", "fancy"]).status.code(), Some(1));
    let o = hapfuse(&["eval", "--checkpoint", s(&dir.path().join("missing.ckpt")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupt_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("junk.ckpt");
    std::fs::write(&ck, b"not a checkpoint").unwrap();
    let o = hapfuse(&["eval", "--checkpoint", s(&ck), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pipeline_is_reproducible_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let run = |args: &[&str]| {
        let o = hapfuse(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };

    for name in ["data_a", "data_b"] {
        run(&["gen-data", "--config", s(&cfg), "--out", s(&d.join(name)), "--n", "2", "--seed", "5"]);
    }
    assert_eq!(directory_digest(&d.join("data_a")).unwrap(), directory_digest(&d.join("data_b")).unwrap());
    let meta = std::fs::read_to_string(d.join("data_a/run.meta")).unwrap();
    for key in ["config_hash", "code_version", "seed.data", "started_unix"] {
        assert!(meta.contains(key), "{meta}");
    }

    run(&["pretrain", "--config", s(&cfg), "--data", s(&d.join("data_a")), "--out", s(&d.join("pre"))]);
    let init = d.join("pre/pretrained.ckpt");
    for name in ["run_a", "run_b"] {
        run(&["train", "--config", s(&cfg), "--data", s(&d.join("data_a")), "--out", s(&d.join(name)), "--init", s(&init)]);
    }
    assert_eq!(directory_digest(&d.join("run_a")).unwrap(), directory_digest(&d.join("run_b")).unwrap());
    let log = std::fs::read_to_string(d.join("run_a/metrics.tsv")).unwrap();
    assert_eq!(log.lines().next(), Some("step\tloss\tlr"));
    assert_eq!(log.lines().count(), 13);
    assert!(d.join("run_a/checkpoints/step_000006.ckpt").exists());

    let ckpt = d.join("run_a/policy.ckpt");
    for name in ["ev_a", "ev_b"] {
        run(&["eval", "--checkpoint", s(&ckpt), "--out", s(&d.join(name)), "--trials", "3", "--exec-slice", "last"]);
    }
    let a = std::fs::read(d.join("ev_a/eval.json")).unwrap();
    assert_eq!(a, std::fs::read(d.join("ev_b/eval.json")).unwrap());
    let report: EvalReport = serde_json::from_slice(&a).unwrap();
    assert_eq!(report.n_trials, 3);
    assert!(report.is_consistent());

    run(&["generalize", "--checkpoint", s(&ckpt), "--out", s(&d.join("gen"))]);
    run(&["mi", "--checkpoint", s(&ckpt), "--out", s(&d.join("mi"))]);
    run(&["plot", "--input", s(&d.join("run_a/metrics.tsv")), "--out", s(&d.join("loss.svg"))]);
    run(&["plot", "--input", s(&d.join("gen/generalization.json")), "--out", s(&d.join("gen.svg"))]);
    let svg = std::fs::read_to_string(d.join("loss.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}
