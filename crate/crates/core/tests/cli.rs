use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
collect.n_episodes = 6
collect.n_commands = 4
ae.epochs = 1
ae.samples_per_epoch = 16
ae.val_samples = 4
ae.batch_size = 8
ae.enc_channels_1 = 4
ae.enc_channels_2 = 4
ae.dec_channels_1 = 4
ae.dec_channels_2 = 4
dyn.hidden = 16
dyn.hidden_layers = 1
dyn.epochs = 2
eval.n_trials = 2
eval.n_steps = 3
eval.particles = 8
eval.horizon = 2
eval.max_iters = 2
";

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tactile-mpc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) {
    let o = bin(args, cwd);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["bench", "--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("--parallel"));

    let o = bin(&["collect", "--bogus-flag"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--bogus-flag"));

    let o = bin(&["train-ae", "--data", "missing"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_key_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("lab.cfg"), "collect.n_episode = 3\n").unwrap();
    let o = bin(&["collect", "--config", "lab.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("collect.n_episode"));
}

#[test]
fn collection_bytes_do_not_depend_on_workers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("one.cfg"), format!("{SMALL}collect.workers = 1\n")).unwrap();
    std::fs::write(d.join("eight.cfg"), format!("{SMALL}collect.workers = 8\n")).unwrap();
    ok(&["collect", "--config", "one.cfg", "--seed", "3", "--out", "a"], d);
    ok(&["collect", "--config", "eight.cfg", "--seed", "3", "--out", "b"], d);
    assert_eq!(tree(&d.join("a")), tree(&d.join("b")));
}

#[test]
fn small_pipeline_runs_end_to_end_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("lab.cfg"), SMALL).unwrap();
    for run in ["r1", "r2"] {
        let data = format!("{run}/data");
        let models = format!("{run}/models");
        let ae = format!("{models}/ae.ckpt");
        let dynamics = format!("{models}/dyn.ckpt");
        ok(&["collect", "--config", "lab.cfg", "--seed", "1", "--out", &data], d);
        ok(&["train-ae", "--config", "lab.cfg", "--data", &data, "--out", &models], d);
        ok(&["train-dyn", "--config", "lab.cfg", "--data", &data, "--ae", &ae, "--out", &models], d);
        ok(&["encode", "--config", "lab.cfg", "--data", &data, "--ae", &ae, "--out", &format!("{run}/encoded")], d);
        let eval = format!("{run}/eval");
        ok(&["eval-mpc", "--config", "lab.cfg", "--ae", &ae, "--dyn", &dynamics, "--out", &eval], d);
    }
    let r1 = tree(&d.join("r1"));
    assert_eq!(r1, tree(&d.join("r2")));
    let names: Vec<&str> = r1.iter().map(|(n, _)| n.as_str()).collect();
    for want in ["data/manifest.json", "models/ae.ckpt", "models/dyn.ckpt", "encoded/keypoints.csv", "eval/summary.json"] {
        assert!(names.contains(&want), "missing {want}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&r1.iter().find(|(n, _)| n == "eval/summary.json").unwrap().1).unwrap();
    assert_eq!(summary["n_trials"], 2);
}
