//! End-to-end CLI tests driving the compiled `brpolab` binary.

use std::path::Path;
use std::process::{Command, Output};

fn brpolab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brpolab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// Overrides that keep a training run to well under a second.
const FAST: &[&str] = &[
    "--override",
    "max_iterations=3",
    "--override",
    "batch_groups=2",
    "--override",
    "group_size=4",
    "--override",
    "eval_every=0",
    "--override",
    "task_pool=1",
    "--override",
    "eval.n_samples=4",
];

#[test]
fn noop_train_emits_header_only_metrics_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = brpolab(
        dir.path(),
        &["train", "--out", "run", "--override", "max_iterations=0"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let metrics = std::fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert!(lines.next().unwrap().starts_with("iteration,"));
    assert_eq!(lines.next(), None, "no data rows expected");
    assert!(dir.path().join("run/checkpoint.jsonl").exists());
}

#[test]
fn missing_config_file_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = brpolab(
        dir.path(),
        &["train", "--config", "nope.toml", "--out", "run"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!dir.path().join("run/metrics.csv").exists());
}

#[test]
fn unknown_override_names_nearest_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = brpolab(dir.path(), &["train", "--override", "max_iteration=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("train.max_iterations"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn starvation_exits_3_and_numeric_config_wiring_holds() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--seed", "7"];
    args.extend_from_slice(FAST);
    args.extend_from_slice(&[
        "--override",
        "judge.delta_pos=-50",
        "--override",
        "judge.sigma_score=0",
    ]);
    let out = brpolab(dir.path(), &args);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("starvation"));
}

#[test]
fn same_seed_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let mut args = vec!["train", "--seed", "5", "--out", name];
        args.extend_from_slice(FAST);
        let out = brpolab(dir.path(), &args);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = std::fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let ca = std::fs::read(dir.path().join("a/checkpoint.jsonl")).unwrap();
    let cb = std::fs::read(dir.path().join("b/checkpoint.jsonl")).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn recipe_produces_one_metrics_file_per_arm_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "train",
        "--recipe",
        "hacking_separation",
        "--seeds",
        "1,2,3",
        "--out",
        "exp",
    ];
    args.extend_from_slice(FAST);
    let out = brpolab(dir.path(), &args);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut count = 0;
    for arm in ["arm_scalar_grpo", "arm_genrm_brpo"] {
        for seed in [1, 2, 3] {
            let path = dir
                .path()
                .join(format!("exp/hacking_separation/{arm}_seed{seed}/metrics.csv"));
            assert!(path.exists(), "missing {}", path.display());
            count += 1;
        }
    }
    assert_eq!(count, 6);
}

#[test]
fn report_summarizes_and_round_trips_through_own_reader() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--seed", "3", "--out", "run"];
    args.extend_from_slice(FAST);
    assert!(brpolab(dir.path(), &args).status.success());

    // Identical files produce identical rows.
    let out = brpolab(
        dir.path(),
        &[
            "report",
            "run/metrics.csv",
            "run/metrics.csv",
            "--out",
            "rep",
            "--window",
            "2",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report = std::fs::read_to_string(dir.path().join("rep/report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    let tail = |row: &str| row.split(',').skip(1).map(str::to_owned).collect::<Vec<_>>();
    assert_eq!(tail(rows[0]), tail(rows[1]));

    // Hand-average cross-check on the final window.
    let metrics = std::fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    let data: Vec<Vec<f64>> = metrics
        .lines()
        .skip(1)
        .map(|l| {
            l.split(',')
                .map(|f| f.parse::<f64>().unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    let last2: Vec<&Vec<f64>> = data.iter().rev().take(2).collect();
    let hand_quality: f64 = last2.iter().map(|r| r[1]).sum::<f64>() / 2.0;
    let reported: f64 = rows[0].split(',').nth(2).unwrap().parse().unwrap();
    assert!((hand_quality - reported).abs() < 1e-9);
}

#[test]
fn report_rejects_empty_and_mismatched_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.csv"), "").unwrap();
    let out = brpolab(dir.path(), &["report", "empty.csv"]);
    assert!(!out.status.success());

    std::fs::write(dir.path().join("other.csv"), "foo,bar\n1,2\n").unwrap();
    let mut args = vec!["train", "--seed", "3", "--out", "run"];
    args.extend_from_slice(FAST);
    assert!(brpolab(dir.path(), &args).status.success());
    let out = brpolab(dir.path(), &["report", "run/metrics.csv", "other.csv"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("other.csv"), "{}", stderr(&out));
}

#[test]
fn vote_curve_matches_binomial_majorities() {
    let dir = tempfile::tempdir().unwrap();
    let out = brpolab(
        dir.path(),
        &[
            "vote-curve",
            "--n",
            "1,3",
            "--trials",
            "4000",
            "--target-accuracy",
            "0.7",
            "--out",
            "vc",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let csv = std::fs::read_to_string(dir.path().join("vc/vote_curve.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    let acc1: f64 = rows[0][2].parse().unwrap();
    let acc3: f64 = rows[1][2].parse().unwrap();
    assert!((acc1 - 0.7).abs() < 0.025, "voting@1 {acc1} ({text})");
    assert!((acc3 - 0.784).abs() < 0.025, "majority@3 {acc3}");

    // Uninformative judge stays flat at one half.
    let out = brpolab(
        dir.path(),
        &[
            "vote-curve",
            "--n",
            "1,3,5",
            "--trials",
            "4000",
            "--target-accuracy",
            "0.5",
            "--out",
            "vc5",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("vc5/vote_curve.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let acc: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((acc - 0.5).abs() < 0.03, "flat curve violated: {line}");
    }
}

#[test]
fn vote_curve_rejects_even_n_without_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = brpolab(dir.path(), &["vote-curve", "--n", "2", "--trials", "10"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--allow-even"));
    let out = brpolab(
        dir.path(),
        &["vote-curve", "--n", "2", "--trials", "10", "--allow-even"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn bias_experiment_reduces_variance_and_rejects_single_batch() {
    let dir = tempfile::tempdir().unwrap();
    let out = brpolab(
        dir.path(),
        &["bias-experiment", "--seed", "11", "--out", "bias"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = std::fs::read_to_string(dir.path().join("bias/bias_summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    let std_u: f64 = row[2].parse().unwrap();
    let std_w: f64 = row[3].parse().unwrap();
    assert!(std_w < std_u);
    assert_eq!(row[6], "true");
    let series = std::fs::read_to_string(dir.path().join("bias/bias_ratio_series.csv")).unwrap();
    assert_eq!(series.lines().count(), 101);

    let out = brpolab(dir.path(), &["bias-experiment", "--batches", "1"]);
    assert!(!out.status.success());
}

#[test]
fn datapipe_runs_all_stages_and_emits_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = brpolab(
        dir.path(),
        &[
            "datapipe",
            "--generate",
            "60",
            "--group",
            "8",
            "--seed",
            "9",
            "--out",
            "pipe",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    for file in [
        "pipe/pairs_raw.jsonl",
        "pipe/pairs_filtered.jsonl",
        "pipe/judge_prompts.jsonl",
        "pipe/drop_rate.csv",
        "pipe/pref_ratio.csv",
    ] {
        assert!(dir.path().join(file).exists(), "missing {file}");
    }
    // The doubled prompt file alternates presentation orders.
    let prompts = std::fs::read_to_string(dir.path().join("pipe/judge_prompts.jsonl")).unwrap();
    let lines: Vec<&str> = prompts.lines().collect();
    assert!(!lines.is_empty());
    assert_eq!(lines.len() % 2, 0, "doubling produces pairs of prompts");
    // Series parse back through a CSV reader.
    let drop = std::fs::read_to_string(dir.path().join("pipe/drop_rate.csv")).unwrap();
    assert!(drop.lines().next().unwrap().contains("step"));
}

#[test]
fn eval_reports_on_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--seed", "3", "--out", "run"];
    args.extend_from_slice(FAST);
    assert!(brpolab(dir.path(), &args).status.success());
    let out = brpolab(
        dir.path(),
        &[
            "eval",
            "--checkpoint",
            "run/checkpoint.jsonl",
            "--n-samples",
            "8",
            "--seed",
            "3",
            "--out",
            "ev",
            "--override",
            "task_pool=1",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("ev/eval_report.csv").exists());
    assert!(stdout(&out).contains("quality"));
}

#[test]
fn warm_start_recipe_writes_init_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "train",
        "--recipe",
        "warm_start",
        "--seeds",
        "1",
        "--out",
        "warm",
    ];
    args.extend_from_slice(FAST);
    let out = brpolab(dir.path(), &args);
    assert!(out.status.success(), "{}", stderr(&out));
    let run = dir.path().join("warm/warm_start/arm_genrm_brpo_warm_seed1");
    assert!(run.join("init_checkpoint.jsonl").exists());
    assert!(run.join("metrics.csv").exists());
}

#[test]
fn vote_curve_is_deterministic_and_self_consumable() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["v1", "v2"] {
        let out = brpolab(
            dir.path(),
            &[
                "vote-curve", "--n", "1,3", "--trials", "500", "--seed", "4", "--out", name,
            ],
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = std::fs::read(dir.path().join("v1/vote_curve.csv")).unwrap();
    let b = std::fs::read(dir.path().join("v2/vote_curve.csv")).unwrap();
    assert_eq!(a, b);
    // Parses back through a strict CSV reader.
    let mut reader = csv::Reader::from_path(dir.path().join("v1/vote_curve.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
}

#[test]
fn remote_judge_reaches_stub_through_env_var() {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    // Two pairs through the swap stage = four judge calls; the stub always
    // prefers the first-presented response, so both orderings disagree and
    // every pair is dropped.
    let server = std::thread::spawn(move || {
        let mut served = 0usize;
        for _ in 0..4 {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let mut content_length = 0usize;
            loop {
                let mut header = String::new();
                reader.read_line(&mut header).unwrap();
                if header.trim().is_empty() {
                    break;
                }
                if let Some(v) = header.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0u8; content_length];
            reader.read_exact(&mut body).unwrap();
            let reply = r#"{"critique":"first looks stronger. \\boxed{8, 3}","score_a":8.0,"score_b":3.0}"#;
            let response = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                reply.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
            served += 1;
        }
        served
    });

    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_brpolab"))
        .current_dir(dir.path())
        .env("BRPOLAB_JUDGE_URL", &endpoint)
        .args([
            "datapipe",
            "--generate",
            "2",
            "--stage",
            "swap",
            "--seed",
            "6",
            "--out",
            "pipe",
            "--override",
            "reward.source=remote",
            "--override",
            "datapipe.min_gap=-100",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(server.join().unwrap(), 4);
    let prompts = std::fs::read_to_string(dir.path().join("pipe/judge_prompts.jsonl")).unwrap();
    assert!(prompts.trim().is_empty(), "position-biased stub keeps nothing");
}
