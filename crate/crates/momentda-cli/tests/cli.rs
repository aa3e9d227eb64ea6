use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_momentda"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

#[test]
fn help_matches_golden_files() {
    for sub in ["", "fit", "certify", "distance", "experiment", "basis"] {
        let mut args: Vec<&str> = Vec::new();
        if !sub.is_empty() {
            args.push(sub);
        }
        args.push("--help");
        let out = run(&args);
        assert_eq!(code(&out), 0);
        let name = format!("help-{}.txt", if sub.is_empty() { "main" } else { sub });
        let text = String::from_utf8(out.stdout).unwrap();
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::write(golden(&name), &text).unwrap();
        }
        assert_eq!(
            text,
            std::fs::read_to_string(golden(&name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn fit_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p.to_str().unwrap().to_string()
    };
    let zero = write("zero.csv", "0,0\n");
    let out = run(&["fit", "--moments", &zero, "--m", "2"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_json(&out)["lambda"], serde_json::json!([0.0, 0.0]));

    let bad = write("bad.csv", "0.1\n0.2,zz\n");
    let out = run(&["fit", "--moments", &bad, "--m", "3"]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 2, column 2"), "{err}");

    let infeasible = write("inf.csv", "1.73,2.2\n");
    assert_eq!(
        code(&run(&["fit", "--moments", &infeasible, "--m", "2"])),
        2
    );

    let hard = write("hard.csv", "0.9,0.4\n");
    assert_eq!(
        code(&run(&[
            "fit",
            "--moments",
            &hard,
            "--m",
            "2",
            "--max-iter",
            "1"
        ])),
        3
    );

    assert_eq!(
        code(&run(&["fit", "--moments", "/nonexistent.csv", "--m", "2"])),
        1
    );
}

#[test]
fn fit_recovers_truncated_normal_moments() {
    use momentda::density::{moments, GridDensity};
    use momentda::polybasis::TensorBasis;
    let p = GridDensity::truncated_normal(0.45, 0.15).unwrap();
    let mu = moments(&p, &TensorBasis::new(2, 1).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tn.csv");
    std::fs::write(&path, format!("{:e},{:e}\n", mu.values[0], mu.values[1])).unwrap();
    let out = run(&[
        "fit",
        "--moments",
        path.to_str().unwrap(),
        "--m",
        "2",
        "--tol",
        "1e-10",
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout_json(&out)["residual"].as_f64().unwrap() <= 1e-10);
    let csv = run(&[
        "fit",
        "--moments",
        path.to_str().unwrap(),
        "--m",
        "2",
        "--format",
        "csv",
    ]);
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.starts_with("dim,order,lambda\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn certify_preset_and_validation() {
    let out = run(&["certify", "--preset", "worked-example"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    let rows = v["rows"].as_array().unwrap();
    let get = |q: &str| {
        rows.iter().find(|r| r["quantity"] == q).unwrap()["computed"]
            .as_f64()
            .unwrap()
    };
    assert!((get("sqrt(2eC)") - 84.6).abs() <= 0.5);
    assert!((get("sqrt(8Cm/delta)") - 513.0).abs() <= 2.0);
    assert!((get("min_sample_size") / 6.3e9 - 1.0).abs() <= 0.02);
    assert!((get("vc_term") / 2.95e-4 - 1.0).abs() <= 0.02);
    let out = run(&["certify", "--k", "1000", "--d", "3"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert!(v["total"].is_null());
    assert_eq!(v["conditions"][0]["name"], "sample_size");
    assert_eq!(v["conditions"][0]["ok"], false);

    assert_eq!(
        code(&run(&[
            "certify",
            "--k",
            "1e12",
            "--d",
            "3",
            "--epsilon",
            "-1"
        ])),
        1
    );
    assert_eq!(
        code(&run(&[
            "certify", "--k", "1e12", "--d", "3", "--delta", "2"
        ])),
        1
    );
    assert_eq!(code(&run(&["certify", "--d", "3"])), 1);
    assert_eq!(
        code(&run(&[
            "certify",
            "--k",
            "1e12",
            "--d",
            "3",
            "--constants",
            "improved"
        ])),
        1
    );
    let out = run(&[
        "certify",
        "--k",
        "6.3e9",
        "--d",
        "6",
        "--n-dims",
        "5",
        "--constants",
        "improved",
        "--c-inf",
        "5",
        "--c-r",
        "10",
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout_json(&out)["total"].is_number());
}

#[test]
fn distance_metrics() {
    let a = r#"{"type":"truncnorm","mean":0.4,"sigma":0.1}"#;
    let b = r#"{"type":"truncnorm","mean":0.6,"sigma":0.1}"#;
    for metric in ["l1", "kl", "moment-l1", "levy"] {
        let out = run(&["distance", "--p", a, "--q", a, "--metric", metric]);
        assert_eq!(code(&out), 0, "{metric}");
        assert!(
            stdout_json(&out)["value"].as_f64().unwrap().abs() < 1e-12,
            "{metric}"
        );
    }
    let out = run(&[
        "--seed", "1", "distance", "--p", a, "--q", a, "--metric", "cmd",
    ]);
    assert_eq!(stdout_json(&out)["value"].as_f64().unwrap(), 0.0);
    assert_eq!(
        code(&run(&["distance", "--p", a, "--q", a, "--metric", "cmd"])),
        1
    );

    let out = run(&["distance", "--p", a, "--q", b, "--metric", "l1"]);
    let want = momentda::metrics::l1_distance(
        &momentda::density::GridDensity::truncated_normal(0.4, 0.1).unwrap(),
        &momentda::density::GridDensity::truncated_normal(0.6, 0.1).unwrap(),
    )
    .unwrap();
    assert_eq!(stdout_json(&out)["value"].as_f64().unwrap(), want);

    let out = run(&["distance", "--p", a, "--q", b, "--metric", "wasserstein"]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8(out.stderr).unwrap();
    for m in ["l1", "kl", "moment-l1", "cmd", "levy"] {
        assert!(err.contains(m), "{err}");
    }
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("p.json");
    std::fs::write(&spec, r#"{"type":"uniform","N":2}"#).unwrap();
    let out = run(&[
        "distance",
        "--p",
        spec.to_str().unwrap(),
        "--q",
        spec.to_str().unwrap(),
        "--metric",
        "l1",
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        code(&run(&[
            "distance",
            "--p",
            r#"{"type":"uniform","bad":1}"#,
            "--q",
            a,
            "--metric",
            "l1"
        ])),
        1
    );
}

#[test]
fn experiments_are_reproducible_and_named() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = run(&[
            "experiment",
            "truncated-normal",
            "--seed",
            "7",
            "--out",
            d.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
    }
    for ext in ["csv", "json"] {
        let name = format!("truncated-normal-7.{ext}");
        assert_eq!(
            std::fs::read(a.join(&name)).unwrap(),
            std::fs::read(b.join(&name)).unwrap()
        );
    }
    let out = run(&["experiment", "worked-example", "--out", a.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(a.join("worked-example-0.json").exists());

    let out = run(&[
        "experiment",
        "l1-bound-check",
        "--trials",
        "100",
        "--seed",
        "1",
        "--out",
        a.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("l1-bound-check-1.json")).unwrap()).unwrap();
    assert_eq!(v["summary"]["violations"], 0);
    assert_eq!(v["summary"]["pairs"], 100);
}

#[test]
fn experiment_argument_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    assert_eq!(code(&run(&["experiment", "nope", "--out", out_dir])), 1);
    assert_eq!(
        code(&run(&["experiment", "l1-bound-check", "--out", out_dir])),
        1
    );
    assert_eq!(
        code(&run(&[
            "experiment",
            "levy-probe",
            "--params",
            r#"{"unknown":1}"#,
            "--out",
            out_dir
        ])),
        1
    );
    assert_eq!(
        code(&run(&[
            "experiment",
            "levy-probe",
            "--trials",
            "3",
            "--out",
            out_dir
        ])),
        1
    );
    // Nearly coincident narrow normals cannot be nearly disjoint.
    let out = run(&[
        "experiment",
        "truncated-normal",
        "--params",
        r#"{"sigmas":[0.01],"mean_gap":0.001}"#,
        "--out",
        out_dir,
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn basis_dump() {
    let out = run(&["basis", "--m", "5"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(
        v["polynomials"][5]["integer_coefficients"],
        serde_json::json!(["-1", "30", "-210", "560", "-630", "252"])
    );
    assert_eq!(code(&run(&["basis", "--m", "0"])), 1);
    let out = run(&["basis", "--m", "1", "--format", "csv"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 4);
}

#[test]
fn out_flag_writes_file_and_logs_to_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("basis.json");
    let out = run(&["basis", "--m", "2", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8(out.stderr).unwrap().contains("wrote"));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(v["m"], 2);
}
