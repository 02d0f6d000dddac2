use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_medresp");

const SMALL: &str = r#"{
  "synth": {"grid": [10, 10, 6], "n_components": 8, "n_domains": 3, "timepoints": 80,
            "class_scale": 0.2, "min_class_count": 5, "informative_components": 2},
  "eval": {"outer_folds": 3, "repeats": 2, "permutation_rounds": 2},
  "selection": {"search": {"inner_folds": 2, "inner_repeats": 2}}
}"#;

fn medresp(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn medresp")
}

fn workspace(body: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, body).unwrap();
    (dir, cfg)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn simulate_writes_manifest() {
    let (dir, cfg) = workspace(SMALL);
    let out = dir.path().join("o");
    let r = medresp(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(out.join("dataset/manifest.json").exists());
    assert!(String::from_utf8_lossy(&r.stdout).contains("SNR"));
}

#[test]
fn unknown_key_exits_2_naming_it() {
    let (dir, cfg) = workspace(r#"{"svm": {"C": 1.0, "kernel_gama": 3}}"#);
    let r = medresp(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("kernel_gama"));
}

#[test]
fn bad_flag_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("o");
    for args in [
        vec!["simulate", "--out", s(&o), "--selection", "beam"],
        vec!["simulate", "--out", s(&o), "--features", "fnc"],
        vec!["simulate", "--out", s(&o), "--template", "/no/such/template.json"],
    ] {
        let r = medresp(&args);
        assert_eq!(r.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&r.stderr));
    }
}

#[test]
fn missing_artifacts_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let r = medresp(&["evaluate", "--out", s(&dir.path().join("empty"))]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("index.json"));
}

#[test]
fn help_lists_flags_with_defaults() {
    for sub in ["simulate", "extract", "fnc", "kernel", "select", "evaluate", "report", "run"] {
        let r = medresp(&[sub, "--help"]);
        assert!(r.status.success());
        let text = String::from_utf8_lossy(&r.stdout);
        for flag in ["--config", "--out", "--seed", "--threads", "--template", "--features", "--selection"] {
            assert!(text.contains(flag), "{sub} help lacks {flag}");
        }
        assert!(text.matches("default").count() >= 6, "{sub} help lacks defaults");
    }
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let (dir, cfg) = workspace(SMALL);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (o, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        assert!(medresp(&["simulate", "--config", s(&cfg), "--out", s(o), "--seed", seed]).status.success());
    }
    assert_eq!(tree(&a), tree(&b));
    assert_ne!(tree(&a), tree(&c));
}

#[test]
fn staged_pipeline_produces_reports_and_is_repeatable() {
    let (dir, cfg) = workspace(SMALL);
    let out = dir.path().join("o");
    let base = ["--config", s(&cfg), "--out", s(&out)];
    for stage in ["simulate", "extract", "fnc", "evaluate", "report"] {
        let mut args = vec![stage];
        args.extend(base);
        let r = medresp(&args);
        assert!(r.status.success(), "{stage}: {}", String::from_utf8_lossy(&r.stderr));
    }
    for f in ["report.csv", "summary.csv", "report.svg", "report.json", "baseline.json"] {
        assert!(out.join("eval").join(f).exists(), "{f}");
    }
    let first = fs::read(out.join("eval/report.csv")).unwrap();
    let mut args = vec!["evaluate", "--threads", "1"];
    args.extend(base);
    assert!(medresp(&args).status.success());
    assert_eq!(first, fs::read(out.join("eval/report.csv")).unwrap());
    let svg = fs::read_to_string(out.join("eval/report.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("sm+fnc/fixed"));
}

type Evaluations = BTreeMap<(String, usize, String), String>;

fn trace_rows(path: &Path) -> Evaluations {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("features,stage,domain,candidate,score,kept"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            ((f[0].to_string(), f[1].parse().unwrap(), f[3].to_string()), f[4].to_string())
        })
        .collect()
}

#[test]
fn sfs_trace_is_contained_in_beam_trace() {
    let (dir, cfg) = workspace(SMALL);
    let out = dir.path().join("o");
    for stage in ["simulate", "extract", "fnc"] {
        assert!(medresp(&[stage, "--config", s(&cfg), "--out", s(&out)]).status.success());
    }
    let mut traces = Vec::new();
    for mode in ["sfs", "ssfs"] {
        let r = medresp(&["select", "--config", s(&cfg), "--out", s(&out), "--selection", mode]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        traces.push(trace_rows(&out.join("selection/trace.csv")));
    }
    let (sfs, beam) = (&traces[0], &traces[1]);
    assert!(beam.len() > sfs.len());
    for (key, score) in sfs {
        assert_eq!(beam.get(key), Some(score), "SFS evaluation {key:?} missing from beam trace");
    }
    let stages: BTreeSet<usize> = sfs.keys().map(|k| k.1).collect();
    assert_eq!(stages.len(), 3);
}

#[test]
fn kernel_stage_and_template_file() {
    let (dir, cfg) = workspace(SMALL);
    let out = dir.path().join("o");
    assert!(medresp(&["simulate", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("dataset/manifest.json")).unwrap()).unwrap();
    let template = dir.path().join("template.json");
    let body = serde_json::json!({"maps": "o/dataset/template.msmx", "domains": manifest["domains"]});
    fs::write(&template, body.to_string()).unwrap();
    let r = medresp(&["extract", "--config", s(&cfg), "--out", s(&out), "--template", s(&template)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(medresp(&["fnc", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let r = medresp(&["kernel", "--config", s(&cfg), "--out", s(&out), "--selection", "fixed:0,3"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let n = manifest["subjects"].as_array().unwrap().len();
    for name in ["sm", "sm+fnc"] {
        let k = medresp::read_matrix(out.join(format!("kernel/{name}.msmx"))).unwrap();
        assert_eq!(k.shape(), (n, n));
        assert_eq!(k.max_asymmetry(), 0.0);
        let ids: Vec<String> =
            serde_json::from_str(&fs::read_to_string(out.join(format!("kernel/{name}.ids.json"))).unwrap()).unwrap();
        assert_eq!(ids.len(), n);
    }
    let r = medresp(&["kernel", "--config", s(&cfg), "--out", s(&out), "--selection", "fixed:0,99"]);
    assert_eq!(r.status.code(), Some(1));
}
