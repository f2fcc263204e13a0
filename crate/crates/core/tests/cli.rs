mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::fixture_dir;
use expnote::agent::Trajectory;
use expnote::evaluation::RunReport;
use expnote::memory::MemoryStore;

fn expnote(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expnote"))
        .args(args)
        .current_dir(cwd)
        .env_remove("EXPNOTE_API_KEY")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn ok(o: Output) -> Output {
    assert_eq!(
        code(&o),
        0,
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn fixture(name: &str) -> String {
    fixture_dir().join(name).display().to_string()
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn read_report(path: &Path) -> RunReport {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn train(cwd: &Path) {
    ok(expnote(
        cwd,
        &[
            "train",
            "--tasks",
            &fixture("train.jsonl"),
            "--backend",
            "scripted",
            "--script",
            &fixture("train.script.jsonl"),
            "--prompts",
            "lets",
            "--out",
            "out",
        ],
    ));
}

fn test_variant(cwd: &Path, variant: &str, with_memory: bool) -> PathBuf {
    let out = format!("out-{variant}");
    let tasks = fixture("test.jsonl");
    let mut args = vec![
        "test",
        "--tasks",
        &tasks,
        "--variant",
        variant,
        "--backend",
        "scripted",
        "--prompts",
        "lets",
        "--out",
        &out,
    ];
    let script = fixture("test.script.jsonl");
    args.extend(["--script", &script]);
    if with_memory {
        args.extend(["--memory", "out/memory.jsonl"]);
    }
    ok(expnote(cwd, &args));
    cwd.join(out)
}

fn golden() -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(fixture_dir().join("golden.json")).unwrap())
        .unwrap()
}

#[test]
fn golden_train_stores_scripted_notes() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path());
    let g = golden();
    let memory = MemoryStore::load(&dir.path().join("out/memory.jsonl")).unwrap();
    let want = g["memory"].as_array().unwrap();
    assert_eq!(memory.store_count(), want.len());
    for (e, w) in memory.experiences().iter().zip(want) {
        assert_eq!(e.id, w["id"].as_u64().unwrap());
        assert_eq!(e.key, w["key"].as_str().unwrap());
        assert_eq!(serde_json::to_value(e.polarity).unwrap(), w["polarity"]);
        assert_eq!(e.source_case_id, w["source_case_id"].as_str().unwrap());
    }
    let log: Vec<Trajectory> = read_jsonl(&dir.path().join("out/train_trajectories.jsonl"));
    for t in &log {
        assert_eq!(
            t.steps.len() as u64,
            g["train_steps"][&t.instance_id].as_u64().unwrap(),
            "{}",
            t.instance_id
        );
        // bounded loop: 1 answer + n_train actions + 1 recovery
        assert!(t.steps.len() <= 1 + 4 + 1);
    }
    // conservation: every accepted NOTE is in memory
    let noted: usize = log.iter().map(|t| t.noted_experience_ids.len()).sum();
    assert_eq!(noted, memory.store_count());
    assert!(dir.path().join("out/train.manifest.json").exists());
}

#[test]
fn golden_test_variants_match_hand_trace() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path());
    let memory_before = std::fs::read(dir.path().join("out/memory.jsonl")).unwrap();
    let g = golden();
    let mut reports = BTreeMap::new();
    for variant in ["full", "disabled", "positive", "negative"] {
        let out = test_variant(dir.path(), variant, variant != "disabled");
        let report = read_report(&out.join("report.json"));
        let want = &g["reports"][variant];
        assert_eq!(
            report.n_correct as u64,
            want["n_correct"].as_u64().unwrap(),
            "{variant}"
        );
        assert_eq!(report.n_cases as u64, want["n_cases"].as_u64().unwrap());
        assert_eq!(
            report.memory_count as u64,
            want["memory_count"].as_u64().unwrap(),
            "{variant}"
        );
        for (id, outcome) in &report.per_case {
            assert_eq!(
                outcome.correct,
                want["correct"][id].as_bool().unwrap(),
                "{variant} {id}"
            );
        }

        let log: Vec<Trajectory> = read_jsonl(&out.join("test_trajectories.jsonl"));
        for t in &log {
            assert!(t.noted_experience_ids.is_empty());
            let prompt = &t.steps[0].prompt_sent;
            if variant == "disabled" {
                assert!(prompt.contains("No relevant experience"));
                assert!(t.retrieved_experience_ids.is_empty());
            }
            if variant == "full" {
                let ids: Vec<u64> = g["retrieved"][&t.instance_id]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|v| v.as_u64().unwrap())
                    .collect();
                assert_eq!(t.retrieved_experience_ids, ids, "{}", t.instance_id);
                let memory = MemoryStore::load(&dir.path().join("out/memory.jsonl")).unwrap();
                for id in ids {
                    let value = &memory.get(id).unwrap().value;
                    assert_eq!(prompt.matches(value.as_str()).count(), 1);
                }
            }
        }
        reports.insert(variant, out);
    }
    // test-time memory is read-only
    assert_eq!(
        std::fs::read(dir.path().join("out/memory.jsonl")).unwrap(),
        memory_before
    );

    let eval = ok(expnote(
        dir.path(),
        &[
            "eval",
            "--base",
            "out-disabled/report.json",
            "--treated",
            "out-full/report.json",
            "--out",
            "eval",
        ],
    ));
    let tsv = std::fs::read_to_string(dir.path().join("eval/buckets.tsv")).unwrap();
    let b = &g["buckets_disabled_vs_full"];
    let want = format!(
        "bucket\tcount\tfraction\nF=>F\t{}\t0.000\nF=>T\t{}\t0.500\nT=>T\t{}\t0.250\nT=>F\t{}\t0.250\n",
        b["ff"], b["ft"], b["tt"], b["tf"]
    );
    assert_eq!(tsv, want);
    assert!(String::from_utf8_lossy(&eval.stdout).contains("F=>T"));

    ok(expnote(
        dir.path(),
        &[
            "report",
            "--reports",
            "out-full/report.json",
            "out-disabled/report.json",
            "out-positive/report.json",
            "out-negative/report.json",
            "--out",
            "tables",
        ],
    ));
    let eff = std::fs::read_to_string(dir.path().join("tables/efficiency.tsv")).unwrap();
    assert_eq!(
        eff,
        format!(
            "type\tefficiency\npositive\t{:.3}\nnegative\t{:.3}\n",
            g["efficiency"]["positive"].as_f64().unwrap(),
            g["efficiency"]["negative"].as_f64().unwrap()
        )
    );
    let variants = std::fs::read_to_string(dir.path().join("tables/variants.tsv")).unwrap();
    assert!(variants.contains("full\t75.0\t7\t75.0 (7)"));
    assert!(variants.contains("disabled\t50.0\t0\t50.0 (0)"));
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    files
}

#[test]
fn golden_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        train(dir);
        test_variant(dir, "full", true);
        test_variant(dir, "disabled", false);
    }
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert!(sa.len() >= 12);
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert_eq!(v, &sb[k], "{} differs", k.display());
    }
}

#[test]
fn inputs_are_not_mutated() {
    let before = snapshot(&fixture_dir());
    let dir = tempfile::tempdir().unwrap();
    train(dir.path());
    test_variant(dir.path(), "full", true);
    assert_eq!(snapshot(&fixture_dir()), before);
}

#[test]
fn run_subcommand_emits_training_curve() {
    let dir = tempfile::tempdir().unwrap();
    let mut entries = vec![];
    // a model that answers every question with "abc" and notes one rule per case
    entries.push(serde_json::json!({"matcher": "Your answer is", "reply": "NOTE[letter, splice]: count from the first letter."}));
    entries.push(serde_json::json!({"matcher": "Experience noted", "reply": "ANSWER[done]"}));
    entries.push(serde_json::json!({"matcher": "", "reply": "ANSWER[abc]"}));
    let script: String = entries.iter().map(|e| e.to_string() + "\n").collect();
    std::fs::write(dir.path().join("script.jsonl"), script).unwrap();
    ok(expnote(
        dir.path(),
        &[
            "gen-data",
            "--count",
            "12",
            "--seed",
            "3",
            "--out",
            "all.jsonl",
        ],
    ));
    ok(expnote(
        dir.path(),
        &[
            "split",
            "--tasks",
            "all.jsonl",
            "--train-ratio",
            "0.5",
            "--seed",
            "1",
            "--out",
            "data",
        ],
    ));
    ok(expnote(
        dir.path(),
        &[
            "run",
            "--tasks",
            "data/train.jsonl",
            "--test-tasks",
            "data/test.jsonl",
            "--backend",
            "scripted",
            "--script",
            "script.jsonl",
            "--prompts",
            "lets",
            "--checkpoint-every",
            "2",
            "--out",
            "run",
        ],
    ));
    let curve = std::fs::read_to_string(dir.path().join("run/curve.tsv")).unwrap();
    let ns: Vec<&str> = curve
        .lines()
        .skip(1)
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(ns, ["0", "2", "4", "6"]);
    let memory = MemoryStore::load(&dir.path().join("run/memory.jsonl")).unwrap();
    assert_eq!(memory.store_count(), 6);
    let report = read_report(&dir.path().join("run/report.json"));
    assert_eq!(report.memory_count, 6);
    assert_eq!(report.n_cases, 6);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        "variant = \"disabled\"\nbackend = \"scripted\"\nscript = {:?}\nprompts = \"lets\"\ntasks = {:?}\nout = \"cfg-out\"\n",
        fixture("test.script.jsonl"),
        fixture("test.jsonl"),
    );
    std::fs::write(dir.path().join("run.toml"), cfg).unwrap();
    ok(expnote(dir.path(), &["test", "--config", "run.toml"]));
    let report = read_report(&dir.path().join("cfg-out/report.json"));
    assert_eq!(report.n_correct, 2);

    std::fs::write(
        dir.path().join("bad.toml"),
        "variant = \"disabled\"\nbogus = 1\n",
    )
    .unwrap();
    assert_eq!(
        code(&expnote(
            dir.path(),
            &["test", "--config", "bad.toml", "--backend", "scripted"]
        )),
        3
    );
}

#[test]
fn gen_data_is_deterministic_and_oracle_valid() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.jsonl", "b.jsonl"] {
        ok(expnote(
            dir.path(),
            &["gen-data", "--count", "200", "--seed", "7", "--out", name],
        ));
    }
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.jsonl")).unwrap());
    let rows: Vec<serde_json::Value> = read_jsonl(&dir.path().join("a.jsonl"));
    assert_eq!(rows.len(), 200);
    for r in rows {
        let words = r["words"].as_array().unwrap();
        let indexes = r["indexes"].as_array().unwrap();
        let answer: String = words
            .iter()
            .zip(indexes)
            .map(|(w, i)| w.as_str().unwrap().as_bytes()[i.as_u64().unwrap() as usize - 1] as char)
            .collect();
        assert_eq!(r["answer"].as_str().unwrap(), answer);
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    // usage errors
    assert_eq!(
        code(&expnote(
            p,
            &["gen-data", "--count", "0", "--out", "x.jsonl"]
        )),
        2
    );
    assert_eq!(
        code(&expnote(p, &["test", "--variant", "weird", "--out", "o"])),
        2
    );
    assert_eq!(
        code(&expnote(
            p,
            &[
                "test",
                "--tasks",
                &fixture("test.jsonl"),
                "--backend",
                "scripted",
                "--script",
                &fixture("test.script.jsonl"),
                "--variant",
                "full",
                "--out",
                "o"
            ]
        )),
        2,
        "full variant without a memory file"
    );
    assert_eq!(
        code(&expnote(
            p,
            &[
                "test",
                "--tasks",
                "missing.jsonl",
                "--backend",
                "scripted",
                "--out",
                "o"
            ]
        )),
        2
    );
    // format error
    std::fs::write(p.join("bad.jsonl"), "{\"id\": 1}\n").unwrap();
    assert_eq!(
        code(&expnote(
            p,
            &[
                "test",
                "--tasks",
                "bad.jsonl",
                "--variant",
                "disabled",
                "--backend",
                "scripted",
                "--script",
                &fixture("test.script.jsonl"),
                "--out",
                "o"
            ]
        )),
        3
    );
    // backend failure: the test script has no entries for training prompts
    let out = expnote(
        p,
        &[
            "train",
            "--tasks",
            &fixture("train.jsonl"),
            "--backend",
            "scripted",
            "--script",
            &fixture("test.script.jsonl"),
            "--prompts",
            "lets",
            "--out",
            "o",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("backend failure"));
    // partial log is still written
    assert!(p.join("o/train_trajectories.jsonl").exists());
}

#[test]
fn disabled_test_without_memory_succeeds_and_eval_partitions() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path());
    test_variant(dir.path(), "disabled", false);
    test_variant(dir.path(), "full", true);
    ok(expnote(
        dir.path(),
        &[
            "eval",
            "--base",
            "out-disabled/report.json",
            "--treated",
            "out-full/report.json",
            "--out",
            "ev",
        ],
    ));
    let tsv = std::fs::read_to_string(dir.path().join("ev/buckets.tsv")).unwrap();
    let total: usize = tsv
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 4);
}

#[test]
fn live_run_records_cassette_into_fresh_out_dir() {
    let server = common::StubServer::start(Box::new(common::cooperative_model));
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("live.toml"),
        format!(
            "[live]\nbase_url = \"{}\"\nbackoff_base_ms = 1\n",
            server.url
        ),
    )
    .unwrap();
    let train = fixture("train.jsonl");
    let test = fixture("test.jsonl");
    ok(expnote(
        dir.path(),
        &[
            "run",
            "--config",
            "live.toml",
            "--backend",
            "live",
            "--tasks",
            &train,
            "--test-tasks",
            &test,
            "--out",
            "fresh/run",
        ],
    ));
    let out = dir.path().join("fresh/run");
    let recorded = std::fs::read_to_string(out.join("cassette.jsonl")).unwrap();
    assert_eq!(recorded.lines().count(), server.requests());

    ok(expnote(
        dir.path(),
        &[
            "run",
            "--backend",
            "cassette",
            "--cassette",
            "fresh/run/cassette.jsonl",
            "--tasks",
            &train,
            "--test-tasks",
            &test,
            "--out",
            "replay",
        ],
    ));
    assert_eq!(
        read_report(&out.join("report.json")),
        read_report(&dir.path().join("replay/report.json"))
    );
}
