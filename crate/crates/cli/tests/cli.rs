use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3

[data]
graphs_per_domain = 12
nodes_max = 12

[pretrain]
epochs = 2
hidden = 6

[generation]
count = 4
nodes_min = 4
nodes_max = 6
epochs = 2
encoder_hidden = 4

[merge]
epochs = 2
batch_size = 8
"#;

fn graphmerge(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_graphmerge"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("GRAPHMERGE_THREADS", t),
        None => cmd.env_remove("GRAPHMERGE_THREADS"),
    };
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn pipeline_writes_every_artifact_and_prints_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run = dir.path().join("run");
    let out = graphmerge(&["pipeline", "--config", &cfg, "--out", run.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", stderr(&out));

    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("target domain: T"));
    assert!(stdout.contains("OGMM"));
    for stage in ["gen-data", "pretrain", "invert", "merge", "eval"] {
        assert!(stderr(&out).contains(&format!("== {stage}")));
    }
    for rel in [
        "data/A.txt",
        "data/B.txt",
        "data/T.txt",
        "experts/GCN-A.ckpt",
        "experts/GIN-B.ckpt",
        "synthetic/GIN-A.txt",
        "synthetic/pool.txt",
        "merged.txt",
        "merge_history.csv",
        "report.csv",
        "report.txt",
        "cross_error.csv",
        "divergence.csv",
        "timings.txt",
        "config.toml",
    ] {
        assert!(run.join(rel).is_file(), "missing {rel}");
    }
    let csv = fs::read_to_string(run.join("report.csv")).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("method,"));
}

#[test]
fn stages_run_separately_and_match_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let staged = dir.path().join("staged");
    let whole = dir.path().join("whole");
    for stage in ["gen-data", "pretrain", "invert", "merge", "eval"] {
        let out = graphmerge(&[stage, "--config", &cfg, "--out", staged.to_str().unwrap(), "--quiet"], Some("2"));
        assert!(out.status.success(), "{stage}: {}", stderr(&out));
        assert!(out.stdout.is_empty() && out.stderr.is_empty());
    }
    let out = graphmerge(&["pipeline", "--config", &cfg, "--out", whole.to_str().unwrap(), "--quiet"], None);
    assert!(out.status.success(), "{}", stderr(&out));
    for rel in ["report.csv", "cross_error.csv", "merged.txt", "synthetic/pool.txt"] {
        assert_eq!(
            fs::read_to_string(staged.join(rel)).unwrap(),
            fs::read_to_string(whole.join(rel)).unwrap(),
            "{rel} differs"
        );
    }
}

#[test]
fn gen_data_writes_the_three_domains() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = graphmerge(&["gen-data", "--config", &cfg, "--out", dir.path().to_str().unwrap()], None);
    assert!(out.status.success(), "{}", stderr(&out));
    for tag in ["A", "B", "T"] {
        assert!(dir.path().join("data").join(format!("{tag}.txt")).is_file());
        assert!(stderr(&out).contains(&format!("domain {tag}: 12 graphs")));
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let data = |seed: &str, sub: &str| {
        let run = dir.path().join(sub);
        let out = graphmerge(&["gen-data", "--config", &cfg, "--seed", seed, "--out", run.to_str().unwrap()], None);
        assert!(out.status.success());
        fs::read_to_string(run.join("data/A.txt")).unwrap()
    };
    assert_eq!(data("8", "x"), data("8", "y"));
    assert_ne!(data("8", "x"), data("9", "z"));
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out_dir = out_dir.to_str().unwrap();

    let cfg = write_config(dir.path(), "[merge]\ntopk = 2\n");
    let out = graphmerge(&["gen-data", "--config", &cfg, "--out", out_dir], None);
    assert!(!out.status.success());
    assert!(stderr(&out).starts_with("error:"), "{}", stderr(&out));

    let out = graphmerge(&["eval", "--out", out_dir], None);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("error:"));

    let out = graphmerge(&["gen-data", "--out", out_dir], Some("0"));
    assert!(!out.status.success());
    assert!(stderr(&out).contains("GRAPHMERGE_THREADS"));

    let out = graphmerge(&["merge", "--config", "/nonexistent/config.toml"], None);
    assert!(!out.status.success());
}
