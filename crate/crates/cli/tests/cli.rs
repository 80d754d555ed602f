use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rgen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rgen"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run rgen")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rgen(dir, args);
    assert!(
        out.status.success(),
        "rgen {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn manifest(path: &Path) -> Value {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest.json");
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// FNV-1a, stable across platforms and toolchains.
fn fingerprint(path: &Path) -> u64 {
    fs::read(path)
        .unwrap()
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["--help"][..], &["decode", "--help"], &["--version"]] {
        let out = rgen(dir.path(), args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(!out.stdout.is_empty());
    }
    let help = ok(dir.path(), &["--help"]);
    for sub in [
        "build-dataset",
        "train-lm",
        "train-encoder",
        "decode",
        "eval-suffix-id",
        "mine-hard",
        "eval-retrieval",
        "eval-gen",
        "grid-search",
        "bench",
    ] {
        assert!(help.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rgen(dir.path(), &["build-dataset", "--out", "d.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--corpus"));
    assert!(!dir.path().join("d.jsonl").exists());
}

#[test]
fn unknown_flags_and_bad_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        rgen(dir.path(), &["decode", "--bogus"]).status.code(),
        Some(1)
    );
    assert_eq!(rgen(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(rgen(dir.path(), &[]).status.code(), Some(1));
    let out = rgen(
        dir.path(),
        &[
            "eval-retrieval",
            "--corpus",
            "c.jsonl",
            "--scorer",
            "nonsense",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = rgen(
        dir.path(),
        &[
            "build-dataset",
            "--corpus",
            "missing.jsonl",
            "--out",
            "d.jsonl",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    fs::write(
        dir.path().join("bad.jsonl"),
        "{\"doc_id\": \"a\", \"text\": \"x.\"}\nnot json\n",
    )
    .unwrap();
    let out = rgen(
        dir.path(),
        &["train-lm", "--corpus", "bad.jsonl", "--out", "lm.ckpt"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn flags_override_config_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &["synth-corpus", "--out", "corpus.jsonl", "--num-docs", "5"],
    );
    fs::write(
        d.join("rgen.toml"),
        "seed = 3\n[build-dataset]\ncorpus = \"corpus.jsonl\"\nprefix-len = 20\ncont-max = 30\n",
    )
    .unwrap();
    ok(
        d,
        &[
            "--config",
            "rgen.toml",
            "build-dataset",
            "--out",
            "a.jsonl",
            "--cont-max",
            "25",
        ],
    );
    let m = manifest(&d.join("a.jsonl"));
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["prefix-len"], 20);
    assert_eq!(m["config"]["cont-max"], 25);
    assert_eq!(m["config"]["cont-min"], 10);
    assert_eq!(m["config"]["corpus"], "corpus.jsonl");
    assert_eq!(m["command"], "build-dataset");
    assert!(m["versions"]["rgen-core"].is_string());

    fs::write(d.join("broken.toml"), "[build-dataset\n").unwrap();
    assert_eq!(
        rgen(d, &["--config", "broken.toml", "build-dataset"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = [
        "--corpus",
        "corpus.jsonl",
        "--prefix-len",
        "32",
        "--cont-max",
        "32",
    ];
    ok(d, &["synth-corpus", "--out", "corpus.jsonl", "--seed", "1"]);
    ok(
        d,
        &[&["build-dataset", "--out", "plain.jsonl"][..], &corpus].concat(),
    );
    ok(
        d,
        &["train-lm", "--corpus", "corpus.jsonl", "--out", "lm.ckpt"],
    );
    ok(
        d,
        &[
            &[
                "build-dataset",
                "--out",
                "data.jsonl",
                "--generator",
                "lm.ckpt",
                "--gen-max-words",
                "32",
            ][..],
            &corpus,
        ]
        .concat(),
    );
    assert_eq!(
        manifest(&d.join("data.jsonl"))["results"]["seed_attested"],
        true
    );
    ok(
        d,
        &[
            "train-encoder",
            "--dataset",
            "data.jsonl",
            "--out",
            "enc.ckpt",
            "--steps",
            "150",
            "--batch-size",
            "8",
            "--loss-curve",
            "loss.csv",
        ],
    );
    let lines: Vec<String> = fs::read_to_string(d.join("plain.jsonl"))
        .unwrap()
        .lines()
        .take(12)
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["prefix"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| t.as_str().unwrap().to_string())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    fs::write(d.join("prefixes.txt"), lines.join("\n") + "\n").unwrap();
    let decode = |jobs: &str, out: &str| {
        ok(
            d,
            &[
                "decode",
                "--prefix-file",
                "prefixes.txt",
                "--generator",
                "lm.ckpt",
                "--scorer",
                "rankgen:enc.ckpt",
                "--L",
                "8",
                "--B",
                "2",
                "--N",
                "4",
                "--max-length",
                "32",
                "--seed",
                "7",
                "--jobs",
                jobs,
                "--out",
                out,
            ],
        )
    };
    decode("1", "dec1.jsonl");
    decode("3", "dec3.jsonl");
    assert_eq!(
        fs::read(d.join("dec1.jsonl")).unwrap(),
        fs::read(d.join("dec3.jsonl")).unwrap()
    );
    let first: Value = serde_json::from_str(
        fs::read_to_string(d.join("dec1.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(first["continuations"].as_array().unwrap().len(), 2);
    assert_eq!(first["continuations"][0]["rank"], 1);
    assert_eq!(
        manifest(&d.join("dec1.jsonl"))["results"]["seed_attested"],
        true
    );

    let report = ok(
        d,
        &[
            &[
                "eval-suffix-id",
                "--scorer",
                "rankgen:enc.ckpt",
                "--scorer",
                "overlap",
                "--format",
                "json",
                "--out",
                "sid.json",
            ][..],
            &corpus,
        ]
        .concat(),
    );
    let reports: Value = serde_json::from_str(&report).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);
    let table = ok(
        d,
        &[
            "eval-suffix-id",
            "--dataset",
            "data.jsonl",
            "--scorer",
            "avg_cll:lm.ckpt",
        ],
    );
    assert!(table.contains("suffix_id[avg_cll]"), "{table}");
    ok(
        d,
        &[
            &[
                "mine-hard",
                "--scorer",
                "overlap",
                "--count",
                "3",
                "--out",
                "hard.jsonl",
            ][..],
            &corpus,
        ]
        .concat(),
    );
    let hard: Value = serde_json::from_str(
        fs::read_to_string(d.join("hard.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert!(hard["negatives"].as_array().unwrap().len() <= 3);
    ok(
        d,
        &[
            &[
                "eval-retrieval",
                "--scorer",
                "rankgen:enc.ckpt",
                "--ks",
                "1,5",
                "--out",
                "ret.json",
            ][..],
            &corpus,
        ]
        .concat(),
    );
    let gen = ok(
        d,
        &[
            "eval-gen",
            "--generations",
            "dec1.jsonl",
            "--references",
            "data.jsonl",
            "--embedder",
            "enc.ckpt",
            "--clusters",
            "4",
            "--format",
            "json",
        ],
    );
    let metrics: Vec<String> = serde_json::from_str::<Value>(&gen)
        .unwrap()
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["metric"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(metrics.len(), 3, "{metrics:?}");
    assert!(d.join("rgen-eval-gen.manifest.json").exists());
    ok(
        d,
        &[
            "grid-search",
            "--prefix-file",
            "prefixes.txt",
            "--generator",
            "lm.ckpt",
            "--scorer",
            "overlap",
            "--max-length",
            "12",
            "--out",
            "grid.csv",
        ],
    );
    assert_eq!(
        fs::read_to_string(d.join("grid.csv"))
            .unwrap()
            .lines()
            .count(),
        46
    );
    ok(
        d,
        &[
            "bench",
            "--prefix-file",
            "prefixes.txt",
            "--generator",
            "lm.ckpt",
            "--scorer",
            "overlap",
            "--max-length",
            "8",
            "--iterations",
            "1",
        ],
    );
    for f in [
        "plain.jsonl",
        "lm.ckpt",
        "data.jsonl",
        "enc.ckpt",
        "loss.csv",
        "sid.json",
        "hard.jsonl",
        "ret.json",
    ] {
        assert!(d.join(f).exists(), "{f}");
    }
}

/// Outputs of a fixed small run; values recorded from a reference run.
#[test]
fn golden_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth-corpus",
            "--out",
            "corpus.jsonl",
            "--num-docs",
            "20",
            "--seed",
            "4",
        ],
    );
    ok(
        d,
        &[
            "build-dataset",
            "--corpus",
            "corpus.jsonl",
            "--prefix-len",
            "24",
            "--cont-max",
            "24",
            "--out",
            "data.jsonl",
        ],
    );
    ok(
        d,
        &["train-lm", "--corpus", "corpus.jsonl", "--out", "lm.ckpt"],
    );
    fs::write(d.join("p.txt"), "bo ta .\n").unwrap();
    ok(
        d,
        &[
            "decode",
            "--prefix-file",
            "p.txt",
            "--generator",
            "lm.ckpt",
            "--scorer",
            "overlap",
            "--L",
            "4",
            "--B",
            "2",
            "--N",
            "3",
            "--max-length",
            "16",
            "--seed",
            "9",
            "--out",
            "dec.jsonl",
        ],
    );
    let got = [
        fingerprint(&d.join("corpus.jsonl")),
        fingerprint(&d.join("data.jsonl")),
        fingerprint(&d.join("lm.ckpt")),
        fingerprint(&d.join("dec.jsonl")),
    ];
    assert_eq!(got, GOLDEN);
}

const GOLDEN: [u64; 4] = [
    0x24a3_6c17_a4f6_fb34,
    0xb8cb_8a1c_a075_cdbe,
    0x4c05_8a90_644b_38b6,
    0x124f_e901_a99d_44d5,
];
