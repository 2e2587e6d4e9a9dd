use std::fs;
use std::process::{Command, Output};

fn tfshape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfshape"))
        .args(args)
        .env_remove("TFSHAPE_GPU_DIR")
        .output()
        .expect("run tfshape")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn row<'a>(text: &'a str, name: &str) -> Vec<&'a str> {
    text.lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>())
        .find(|cols| cols.first() == Some(&name))
        .unwrap_or_else(|| panic!("no `{name}` row in\n{text}"))
}

const GPT3: &[&str] = &[
    "--gpu", "A100", "--h", "2560", "--a", "32", "--b", "4", "--s", "2048", "--t", "1", "--L",
    "32", "--v", "50304",
];

#[test]
fn lint_head_dim_80_exits_with_warning() {
    let mut args = vec!["lint"];
    args.extend_from_slice(GPT3);
    let o = tfshape(&args);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    let r3 = row(&text, "R3");
    assert_eq!(&r3[1..4], ["warn", "h/a", "80"]);
    assert!(r3[4].starts_with("a=40"));
}

#[test]
fn lint_exit_codes() {
    let clean = tfshape(&[
        "lint", "--h", "4096", "--a", "32", "--b", "4", "--s", "2048", "--L", "32", "--v", "50304",
    ]);
    assert_eq!(clean.status.code(), Some(0), "{}", stdout(&clean));
    let broken = tfshape(&["lint", "--h", "2560", "--a", "30", "--s", "2048", "--L", "32", "--v", "50304"]);
    assert_eq!(broken.status.code(), Some(2));
}

#[test]
fn wave_worked_example() {
    let o = tfshape(&["wave", "--m", "13824", "--n", "13824", "--tile", "128x256", "--sms", "108"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(row(&text, "waves")[1], "54");
    assert_eq!(row(&text, "tail")[1], "0");
    assert_eq!(row(&text, "wave_free")[1], "true");
}

#[test]
fn params_of_unit_model() {
    let o = tfshape(&["params", "--h", "1", "--L", "1", "--v", "1", "--s", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(row(&stdout(&o), "total")[1], "27");
}

#[test]
fn usage_errors_are_distinct() {
    assert_eq!(tfshape(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(tfshape(&["wave", "--m", "8"]).status.code(), Some(64));
    assert_eq!(tfshape(&["wave", "--m", "8", "--n", "8", "--tile", "100x3"]).status.code(), Some(64));
    assert_eq!(tfshape(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_2() {
    let o = tfshape(&["params", "--h", "64"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`L`"));
    assert_eq!(tfshape(&["wave", "--gpu", "Z9", "--m", "8", "--n", "8"]).status.code(), Some(2));
    assert_eq!(tfshape(&["explain", "R13"]).status.code(), Some(2));
}

#[test]
fn output_is_deterministic() {
    let mut args = vec!["suggest", "--format", "json"];
    args.extend_from_slice(GPT3);
    let one = tfshape(&args);
    let two = tfshape(&args);
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, two.stdout);
    let parsed: serde_json::Value = serde_json::from_slice(&one.stdout).unwrap();
    assert_eq!(parsed[0]["config"]["a"], 40);
}

#[test]
fn config_file_with_inline_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("model.toml");
    fs::write(&cfg, "h = 2560\na = 32\nb = 4\ns = 2048\nL = 32\nv = 50304\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(tfshape(&["lint", "--config", cfg]).status.code(), Some(1));
    assert_eq!(tfshape(&["lint", "--config", cfg, "--a", "40"]).status.code(), Some(0));
}

#[test]
fn bench_plan_csv_feeds_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["bench-plan", "--format", "csv"];
    args.extend_from_slice(GPT3);
    let plan = stdout(&tfshape(&args));
    let mut lines = plan.lines();
    assert_eq!(lines.next(), Some("gpu,dtype,batch,m,k,n"));
    let mut measured = String::from("gpu,dtype,batch,m,k,n,tflops,repeats\n");
    let mut rows = 0;
    for l in lines {
        measured.push_str(&format!("{l},123.5,3\n"));
        rows += 1;
    }
    assert!(plan.contains("A100,fp16,128,2048,80,2048"));
    let path = dir.path().join("measured.csv");
    fs::write(&path, measured).unwrap();
    let o = tfshape(&["ingest", "--format", "csv", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), rows + 1);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",123.5,3")));
}

#[test]
fn ingest_reports_skipped_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    fs::write(
        &path,
        "gpu,dtype,batch,m,k,n,tflops,repeats\nA100,fp16,1,64,64,64,10,1\nA100,fp16,1,64,64,64,0,1\n",
    )
    .unwrap();
    let o = tfshape(&["ingest", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 3 skipped"));

    fs::write(&path, "gpu,m,k\n").unwrap();
    assert_eq!(tfshape(&["ingest", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn sweep_exports_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = tfshape(&[
        "sweep", "--h", "2048", "--s", "2048", "--L", "1", "--v", "50304", "--dim", "h", "--start",
        "1024", "--end", "2048", "--step", "256", "--head-dim", "64", "--roles",
        "attention_score,mlp_up", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("h,role,predicted_tflops,predicted_latency_us,wave_efficiency,aligned")
    );
    assert_eq!(lines.count(), 5 * 2);
}

#[test]
fn gpu_spec_directory() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("tiny.toml"),
        "name = \"tiny\"\nsm_count = 10\ntc_alignment_bytes = 16\ntile_candidates = [\"64x64\"]\n\
         mem_bandwidth_gbps = 100.0\n[peak_matmul_tflops]\nfp16 = 10.0\n",
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_tfshape"))
        .args(["wave", "--gpu", "tiny", "--m", "640", "--n", "64"])
        .env("TFSHAPE_GPU_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(row(&text, "sm_count")[1], "10");
    assert_eq!(row(&text, "waves")[1], "1");
}

#[test]
fn swiglu_search_and_explain() {
    let o = tfshape(&["swiglu-search", "--h", "4096", "--format", "csv", "--top", "1000"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("11008,11008,256,true,")));
    let o = tfshape(&["explain", "r3"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("R3"));
}
