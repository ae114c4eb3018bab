use std::fs;
use std::path::{Path, PathBuf};

use proxyrec::dataset::SplitManifest;
use proxyrec::trainer::{Checkpoint, EpochRecord};
use proxyrec_cli::{run_with_env, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use tempfile::TempDir;

fn no_env(_: &str) -> Option<String> {
    None
}

fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["proxyrec"];
    argv.extend_from_slice(args);
    run_with_env(argv, &no_env)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Ten sessions on ten days; item `rare` shows up twice, the rest often.
fn toy_log(dir: &Path) -> PathBuf {
    let mut s = String::new();
    for day in 0..10i64 {
        let user = format!("u{}", day % 3);
        let t0 = day * 86_400 + 3_600;
        let mut items = vec![format!("a{}", day % 4), format!("b{}", day % 2), "c".to_string()];
        if day == 2 || day == 7 {
            items.push("rare".into());
        }
        for (k, it) in items.iter().enumerate() {
            s.push_str(&format!("{user}\t{it}\t{}\n", t0 + 60 * k as i64));
        }
    }
    let path = dir.join("toy.tsv");
    fs::write(&path, s).unwrap();
    path
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn prepare_toy_log() {
    let tmp = TempDir::new().unwrap();
    let input = toy_log(tmp.path());
    let out = tmp.path().join("data");
    assert_eq!(cli(&["prepare", "--input", p(&input), "--out-dir", p(&out)]), EXIT_OK);
    let stats: serde_json::Value = serde_json::from_slice(&read(&out.join("stats.json"))).unwrap();
    assert_eq!(stats["sessions"], 10);
    assert_eq!(
        (stats["train_sessions"].as_u64(), stats["valid_sessions"].as_u64(), stats["test_sessions"].as_u64()),
        (Some(8), Some(1), Some(1))
    );
    assert!(out.join("resolved_config.txt").exists());

    let again = tmp.path().join("again");
    assert_eq!(cli(&["prepare", "--input", p(&input), "--out-dir", p(&again)]), EXIT_OK);
    for f in SplitManifest::FILES.iter().chain(&["items.tsv", "stats.txt", "stats.json"]) {
        assert_eq!(read(&out.join(f)), read(&again.join(f)), "{f}");
    }
}

#[test]
fn min_item_count_drops_rare_items() {
    let tmp = TempDir::new().unwrap();
    let input = toy_log(tmp.path());
    let out = tmp.path().join("data");
    let code = cli(&["prepare", "--input", p(&input), "--out-dir", p(&out), "--min-item-count", "5"]);
    assert_eq!(code, EXIT_OK);
    let items = fs::read_to_string(out.join("items.tsv")).unwrap();
    assert!(!items.contains("rare"));
    assert!(items.contains("\tc\n"));
}

#[test]
fn exit_codes() {
    assert_eq!(cli(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(cli(&["--help"]), EXIT_OK);
    let tmp = TempDir::new().unwrap();
    let input = toy_log(tmp.path());
    let out = tmp.path().join("d");
    let bad_key = ["prepare", "--input", p(&input), "--out-dir", p(&out), "--set", "colour=red"];
    assert_eq!(cli(&bad_key), EXIT_USAGE);
    let missing = tmp.path().join("nope.tsv");
    assert_eq!(cli(&["prepare", "--input", p(&missing), "--out-dir", p(&out)]), EXIT_DATA);
}

/// A small synthetic manifest plus a config file for quick training runs.
struct Fixture {
    _tmp: TempDir,
    root: PathBuf,
    data: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().to_path_buf();
    let log = root.join("synth.tsv");
    assert_eq!(cli(&["synth", "--out", p(&log), "--sessions", "240", "--users", "6"]), EXIT_OK);
    let data = root.join("data");
    assert_eq!(cli(&["prepare", "--input", p(&log), "--out-dir", p(&data)]), EXIT_OK);
    let config = root.join("run.conf");
    fs::write(
        &config,
        "# tiny model\ndim = 8\nnum_proxies = 4\nepochs = 3\nbatch_size = 32\nnegatives = 3\n\
         learning_rate = 0.01\nmin_user_sessions = 2\n",
    )
    .unwrap();
    Fixture {
        _tmp: tmp,
        root,
        data,
        config,
    }
}

fn train(f: &Fixture, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["train", "--data", p(&f.data), "--out-dir", p(out), "--config", p(&f.config)];
    args.extend_from_slice(extra);
    cli(&args)
}

fn log_records(dir: &Path) -> Vec<EpochRecord> {
    fs::read_to_string(dir.join("train_log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn train_outputs_and_config_replay() {
    let f = fixture();
    let a = f.root.join("a");
    assert_eq!(train(&f, &a, &["--set", "seed=7"]), EXIT_OK);
    for name in ["resolved_config.txt", "known_users.txt", "train_log.jsonl", "last.ckpt", "best.ckpt"] {
        assert!(a.join(name).exists(), "{name}");
    }
    assert_eq!(log_records(&a).len(), 3);
    assert_eq!(fs::read_to_string(a.join("known_users.txt")).unwrap(), "");
    let resolved = fs::read_to_string(a.join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("seed = 7\n"));

    // the echoed config alone reproduces the run
    let b = f.root.join("b");
    let code = cli(&[
        "train",
        "--data",
        p(&f.data),
        "--out-dir",
        p(&b),
        "--config",
        p(&a.join("resolved_config.txt")),
    ]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(read(&a.join("best.ckpt")), read(&b.join("best.ckpt")));
}

#[test]
fn known_user_ratio_flags_half() {
    let f = fixture();
    let out = f.root.join("semi");
    assert_eq!(train(&f, &out, &["--known-user-ratio", "0.5", "--epochs", "1"]), EXIT_OK);
    let known: Vec<String> = fs::read_to_string(out.join("known_users.txt"))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    assert_eq!(known.len(), 3);
    let ckpt = Checkpoint::load(&out.join("best.ckpt")).unwrap();
    let users: Vec<String> = ckpt.params.users.keys().cloned().collect();
    assert_eq!(users, known);
}

#[test]
fn evaluate_reports_and_recomputes_validation() {
    let f = fixture();
    let out = f.root.join("run");
    assert_eq!(train(&f, &out, &[]), EXIT_OK);
    let best = out.join("best.ckpt");
    let code = cli(&[
        "evaluate", "--checkpoint", p(&best), "--data", p(&f.data), "--task", "unseen", "--task", "repeat",
        "--ks", "5,10,20",
    ]);
    assert_eq!(code, EXIT_OK);
    for task in ["unseen", "repeat"] {
        let json = read(&out.join(format!("metrics_test_{task}.json")));
        let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert_eq!(v["cells"].as_array().unwrap().len(), 3);
        assert!(out.join(format!("metrics_test_{task}.txt")).exists());
    }

    let code = cli(&["evaluate", "--checkpoint", p(&best), "--data", p(&f.data), "--split", "valid", "--ks", "20"]);
    assert_eq!(code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_slice(&read(&out.join("metrics_valid_unseen.json"))).unwrap();
    let recall = v["cells"][0]["recall"].as_f64().unwrap();
    let logged = log_records(&out).into_iter().filter(|r| r.improved).last().unwrap();
    assert_eq!(recall, logged.val_recall_20);
}

#[test]
fn evaluate_rejects_mismatched_catalog() {
    let f = fixture();
    let out = f.root.join("run");
    assert_eq!(train(&f, &out, &["--epochs", "1"]), EXIT_OK);
    let input = toy_log(&f.root);
    let toy = f.root.join("toy");
    assert_eq!(cli(&["prepare", "--input", p(&input), "--out-dir", p(&toy)]), EXIT_OK);
    let code = cli(&["evaluate", "--checkpoint", p(&out.join("best.ckpt")), "--data", p(&toy)]);
    assert_eq!(code, EXIT_DATA);
}

#[test]
fn resume_matches_uninterrupted() {
    let f = fixture();
    let whole = f.root.join("whole");
    assert_eq!(train(&f, &whole, &[]), EXIT_OK);
    let split = f.root.join("split");
    assert_eq!(train(&f, &split, &["--stop-after", "1"]), EXIT_OK);
    assert_eq!(log_records(&split).len(), 1);
    assert_eq!(train(&f, &split, &["--resume"]), EXIT_OK);
    for name in ["best.ckpt", "last.ckpt"] {
        assert_eq!(read(&whole.join(name)), read(&split.join(name)), "{name}");
    }
    let strip = |v: Vec<EpochRecord>| -> Vec<EpochRecord> {
        v.into_iter().map(|r| EpochRecord { wall_secs: 0.0, ..r }).collect()
    };
    assert_eq!(strip(log_records(&whole)), strip(log_records(&split)));

    // a different config cannot pick up the interrupted run
    assert_eq!(train(&f, &split, &["--resume", "--set", "margin=0.3"]), EXIT_DATA);
}

#[test]
fn ablate_grid_and_full_row_matches_train() {
    let f = fixture();
    let out = f.root.join("ablate");
    let code = cli(&["ablate", "--data", p(&f.data), "--out-dir", p(&out), "--config", p(&f.config)]);
    assert_eq!(code, EXIT_OK);
    let table = fs::read_to_string(out.join("ablation.txt")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 8);
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(
        names,
        ["full", "proxy_only", "short_only", "no_projection", "weighted_comb", "dot_product", "no_reg_dist"]
    );
    let alone = f.root.join("alone");
    assert_eq!(train(&f, &alone, &[]), EXIT_OK);
    assert_eq!(read(&alone.join("best.ckpt")), read(&out.join("full").join("best.ckpt")));

    let wc = Checkpoint::load(&out.join("weighted_comb").join("best.ckpt")).unwrap();
    assert_eq!(wc.meta_parse::<f64>("tau").unwrap(), 3.0);
}

#[test]
fn env_sits_between_file_and_set() {
    let f = fixture();
    let env = |k: &str| (k == "PROXYREC_SEED").then(|| "11".to_string());
    let out = f.root.join("env");
    let args = ["proxyrec", "train", "--data", p(&f.data), "--out-dir", p(&out), "--config", p(&f.config), "--epochs", "1"];
    assert_eq!(run_with_env(args, &env), EXIT_OK);
    let resolved = fs::read_to_string(out.join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("seed = 11\n"));
    let mut with_set = args.to_vec();
    with_set.extend(["--set", "seed=12"]);
    assert_eq!(run_with_env(with_set, &env), EXIT_OK);
    let resolved = fs::read_to_string(out.join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("seed = 12\n"));
}
