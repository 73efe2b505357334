use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qdiag(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdiag"))
        .current_dir(dir)
        .env_remove("QDIAG_OUT")
        .env_remove("QDIAG_THREADS")
        .args(args)
        .output()
        .expect("spawn qdiag")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = qdiag(dir, args);
    assert!(
        out.status.success(),
        "qdiag {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

/// Short CSTR suite in `dir/suite`.
fn small_suite(dir: &Path) {
    ok(dir, &["synth", "--preset", "cstr", "--seed", "3", "--duration", "160", "--onset", "40", "--out", "suite"]);
}

const FAST: &[&str] = &["--sampler", "cd", "--pretrain-epochs", "2", "--finetune-epochs", "3", "--hidden", "6,4"];

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn ok_owned(dir: &Path, args: &[String]) -> String {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(dir, &refs)
}

#[test]
fn synth_cstr_writes_four_series_and_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--preset", "cstr", "--seed", "7", "--out", "s"]);
    let f = files(&tmp.path().join("s"));
    let csvs: Vec<_> = f.keys().filter(|k| k.ends_with(".csv") && *k != "manifest.csv").collect();
    assert_eq!(csvs.len(), 4);
    let manifest = String::from_utf8(f["manifest.csv"].clone()).unwrap();
    assert_eq!(manifest.lines().next(), Some("name,path,fault_id,onset"));
    assert_eq!(manifest.lines().count(), 5);
    assert!(f.contains_key("config.toml"));
}

#[test]
fn pretrain_with_exact_sampler_never_decreases_likelihood() {
    let tmp = tempfile::tempdir().unwrap();
    small_suite(tmp.path());
    fs::write(
        tmp.path().join("toy.toml"),
        "[dbn]\nhidden = [5, 4]\n[binary_layer]\nsampler = \"exact\"\nbatch_size = 0\nepochs = 25\nlearning_rate = 0.05\n",
    )
    .unwrap();
    ok(tmp.path(), &["pretrain", "--config", "toy.toml", "--manifest", "suite/manifest.csv", "--out", "p"]);
    for branch in ["normal", "fault"] {
        let text = fs::read_to_string(tmp.path().join(format!("p/loss_{branch}_l2.csv"))).unwrap();
        let losses: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| {
                let cells: Vec<&str> = l.split(',').collect();
                assert_eq!(cells[2], "exact");
                cells[1].parse().unwrap()
            })
            .collect();
        assert_eq!(losses.len(), 25);
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{branch}: NLL rose {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn detect_writes_predictions_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_suite(d);
    ok_owned(d, &with(&["pretrain", "--manifest", "suite/manifest.csv", "--out", "p"], FAST));
    ok_owned(
        d,
        &with(&["finetune", "--manifest", "suite/manifest.csv", "--model", "p/pretrained.model", "--out", "f"], FAST),
    );
    let summary = ok(
        d,
        &["detect", "--model", "f/diagnosis.model", "--test-file", "suite/normal.csv,suite/fault_03.csv", "--out", "r"],
    );
    assert!(summary.contains("average FAR"));
    let pred = fs::read_to_string(d.join("r/predictions_fault_03.csv")).unwrap();
    let mut lines = pred.lines();
    assert_eq!(lines.next(), Some("sample_index,p_normal,p_faulty,state"));
    // Window 4 over 160 rows.
    assert_eq!(lines.count(), 157);
    let report = fs::read_to_string(d.join("r/report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().collect();
    assert_eq!(rows[0], "fault_id,fdr,far");
    assert!(rows[1].starts_with("0,,"), "normal series has no FDR: {}", rows[1]);
    assert!(rows[2].starts_with("3,"));

    // An unreachable FDR bound fails with the assertion exit code but still
    // writes the report.
    fs::remove_dir_all(d.join("r")).unwrap();
    let out = qdiag(
        d,
        &["detect", "--model", "f/diagnosis.model", "--test-file", "suite/fault_03.csv", "--assert-min-fdr", "100.5", "--out", "r"],
    );
    assert_eq!(code(&out), 4);
    assert!(d.join("r/report.csv").exists());
}

#[test]
fn rerun_from_echoed_config_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_suite(d);
    let anneal = ["--sampler", "anneal", "--reads", "40", "--sweeps", "5", "--hold-sweeps", "5"];
    let runs: Vec<Vec<String>> = vec![
        with(&["pretrain", "--manifest", "suite/manifest.csv", "--split", "0.75", "--hidden", "5,3", "--pretrain-epochs", "2"], &anneal),
        vec!["identify", "--manifest", "suite/manifest.csv", "--split", "0.75", "--sampler", "cd", "--hidden", "4,3", "--pretrain-epochs", "1", "--finetune-epochs", "2"]
            .into_iter()
            .map(String::from)
            .collect(),
        with(&["compare-samplers", "--samplers", "exact,cd,anneal", "--seed", "5"], &anneal),
        vec!["synth".into(), "--preset".into(), "te".into(), "--duration".into(), "50".into(), "--onset".into(), "10".into()],
    ];
    for (k, args) in runs.iter().enumerate() {
        let first = format!("run{k}");
        let second = format!("rerun{k}");
        ok_owned(d, &with(&args.iter().map(String::as_str).collect::<Vec<_>>(), &["--out", &first]));
        ok(d, &[args[0].as_str(), "--config", &format!("{first}/config.toml"), "--out", &second]);
        let a = files(&d.join(&first));
        let b = files(&d.join(&second));
        assert!(a.len() > 1);
        assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>(), "{}", args[0]);
        for (name, bytes) in &a {
            assert!(bytes == &b[name], "{} differs after rerun of {}", name, args[0]);
        }
    }
    // The later commands run off the pretrained model.
    ok(d, &["energy-hist", "--model", "run0/pretrained.model", "--reads", "50", "--sweeps", "10", "--out", "e1"]);
    ok(d, &["energy-hist", "--config", "e1/config.toml", "--out", "e2"]);
    assert_eq!(files(&d.join("e1")), files(&d.join("e2")));
    ok(d, &["export-qubo", "--model", "run0/pretrained.model", "--branch", "fault", "--out", "q"]);
    let qubo = fs::read_to_string(d.join("q/model.qubo")).unwrap();
    assert!(qubo.starts_with("qubo 8\n"));
}

#[test]
fn usage_data_and_numerical_errors_have_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_suite(d);

    fs::write(d.join("typo.toml"), "[finetune]\nepoch = 3\n").unwrap();
    let out = qdiag(d, &["synth", "--config", "typo.toml"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));

    assert_eq!(code(&qdiag(d, &["detect", "--no-such-flag"])), 1);
    assert_eq!(code(&qdiag(d, &["pretrain", "--out", "x"])), 1, "no training data");

    let out = qdiag(d, &["pretrain", "--train", "missing.csv", "--out", "x"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));

    fs::write(d.join("bad.csv"), "a,b,label\n1,2,0\n3,x,0\n").unwrap();
    let out = qdiag(d, &["pretrain", "--train", "bad.csv", "--out", "x"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.csv") && err.contains("row 2"), "{err}");

    fs::write(d.join("blowup.toml"), "[gaussian_layer]\nlearning_rate = 1e300\n").unwrap();
    let out = qdiag(
        d,
        &["pretrain", "--config", "blowup.toml", "--manifest", "suite/manifest.csv", "--sampler", "cd", "--out", "x"],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn output_directory_comes_from_flag_then_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_qdiag"))
            .current_dir(d)
            .env("QDIAG_OUT", "from_env")
            .args(args)
            .output()
            .unwrap();
        assert!(out.status.success());
    };
    run(&["synth", "--duration", "30", "--onset", "10"]);
    assert!(d.join("from_env/manifest.csv").exists());
    run(&["synth", "--duration", "30", "--onset", "10", "--out", "from_flag"]);
    assert!(d.join("from_flag/manifest.csv").exists());
}

#[test]
fn commands_do_not_modify_their_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_suite(d);
    let before = files(&d.join("suite"));
    ok_owned(d, &with(&["pretrain", "--manifest", "suite/manifest.csv", "--out", "suite_out"], FAST));
    ok_owned(
        d,
        &with(&["finetune", "--manifest", "suite/manifest.csv", "--model", "suite_out/pretrained.model", "--out", "suite_out"], FAST),
    );
    assert_eq!(files(&d.join("suite")), before);
}
