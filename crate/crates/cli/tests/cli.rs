use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use raft_core::dataset::LoadOptions;
use raft_core::load_csv;

fn raft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raft"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_fixture(dir: &Path) -> PathBuf {
    let mut text = String::from("alpha,beta gamma,delta,y\n");
    for i in 0..60 {
        let a = ((i * 7) % 13) as f64 / 3.0 - 2.0;
        let b = ((i * 5) % 11) as f64 / 2.0 - 1.5;
        let c = ((i * 3) % 17) as f64;
        let y = (a + b) * (a + b) + 0.01 * c;
        text.push_str(&format!("{a},{b},{c},{y}\n"));
    }
    let path = dir.join("data.csv");
    fs::write(&path, text).unwrap();
    path
}

fn quick_args<'a>(input: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "run", "--input", input, "--target", "y", "--out", out, "--episodes", "2", "--steps", "3", "--seed", "4",
        "--encoder-epochs", "2", "--hidden", "8",
    ]
}

#[test]
fn run_writes_all_outputs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path());
    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    for out in [&o1, &o2] {
        let res = raft(&quick_args(input.to_str().unwrap(), out.to_str().unwrap()));
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    for name in ["transformed.csv", "trace.tsv", "report.txt"] {
        let a = fs::read(o1.join(name)).unwrap();
        assert_eq!(a, fs::read(o2.join(name)).unwrap(), "{name} differs");
    }
    let echo_without_out = |dir: &Path| -> String {
        let text = fs::read_to_string(dir.join("config.echo")).unwrap();
        text.lines().filter(|l| !l.starts_with("out = ")).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(echo_without_out(&o1), echo_without_out(&o2));
    let trace = fs::read_to_string(o1.join("trace.tsv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 6);

    let original = load_csv(&input, "y", LoadOptions::default()).unwrap();
    let transformed = load_csv(o1.join("transformed.csv"), "y", LoadOptions::default()).unwrap();
    assert!(transformed.lineage_mismatches(&original).is_empty());
    assert!(original.names().contains(&"beta_gamma"));

    let echo = fs::read_to_string(o1.join("config.echo")).unwrap();
    assert!(echo.contains("task = reg\n"));
    assert!(echo.contains("metric = one_minus_rae\n"));
    assert!(echo.contains("seed = 4\n"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path());
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "# fixture\ninput = {}\ntarget = y\ndistance = euclidean\nepisodes = 1\nsteps = 2\nencoder_epochs = 1\nhidden = 4\n",
            input.display()
        ),
    )
    .unwrap();
    let res = raft(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--distance",
        "cosine",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let echo = fs::read_to_string(out.join("config.echo")).unwrap();
    assert!(echo.contains("distance = cosine\n"));
    assert!(echo.contains("episodes = 1\n"));
}

#[test]
fn gae_width_sets_agent_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path());
    let out = dir.path().join("out");
    let ckpt = dir.path().join("agents.ckpt");
    let mut args = quick_args(input.to_str().unwrap(), out.to_str().unwrap());
    args.extend(["--encoder", "gae", "--k", "8", "--checkpoint", ckpt.to_str().unwrap()]);
    let res = raft(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(&ckpt).unwrap();
    assert!(text.starts_with("raft agents v1\n"));
    let shapes: Vec<&str> = text.lines().filter(|l| l.starts_with("shape ")).collect();
    // head actor, head critic, op actor, op critic, tail actor, tail critic
    assert_eq!(
        shapes,
        vec!["shape 16 8 1", "shape 8 8 1", "shape 16 8 7", "shape 16 8 1", "shape 31 8 1", "shape 23 8 1"]
    );
}

#[test]
fn bench_mode_runs_random_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path());
    let out = dir.path().join("out");
    let mut args = quick_args(input.to_str().unwrap(), out.to_str().unwrap());
    args.push("--bench");
    let res = raft(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(fs::read_to_string(out.join("config.echo")).unwrap().contains("bench = true\n"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path());
    let input = input.to_str().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    assert_eq!(raft(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(raft(&["run", "--input", input, "--out", out]).status.code(), Some(2));
    let mut bad_gamma = quick_args(input, out);
    bad_gamma.extend(["--gamma", "3"]);
    assert_eq!(raft(&bad_gamma).status.code(), Some(2));
    let mut clash = quick_args(input, out);
    clash.extend(["--task", "reg", "--metric", "f1_macro"]);
    assert_eq!(raft(&clash).status.code(), Some(2));
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "colour = red\n").unwrap();
    assert_eq!(raft(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));

    let missing = dir.path().join("nope.csv");
    assert_eq!(raft(&quick_args(missing.to_str().unwrap(), out)).status.code(), Some(3));
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "a,y\n1,2\nfoo,3\n").unwrap();
    assert_eq!(raft(&quick_args(bad.to_str().unwrap(), out)).status.code(), Some(3));
    let mut no_target = quick_args(input, out);
    no_target[4] = "zzz";
    assert_eq!(raft(&no_target).status.code(), Some(3));
}
