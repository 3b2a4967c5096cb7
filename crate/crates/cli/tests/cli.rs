use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ktangent(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ktangent"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A failure prints exactly one `ERROR <CODE>: ...` line and exits nonzero.
fn assert_fails_with(o: &Output, code: &str) {
    assert!(!o.status.success());
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("ERROR")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with(&format!("ERROR {code}: ")), "{err}");
}

fn synth(dir: &Path) {
    let o = ktangent(
        dir,
        &[
            "synth",
            "--out",
            "data",
            "--positives",
            "24",
            "--negative-images",
            "4",
            "--seed",
            "5",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

const SMALL: &[&str] = &[
    "--stages",
    "1",
    "--rounds",
    "2",
    "--regions",
    "4",
    "--k",
    "2",
];

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let mut args = vec![
        "train",
        "--manifest",
        "data/manifest.txt",
        "--model",
        "out/m.json",
    ];
    args.extend_from_slice(SMALL);
    let o = ktangent(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("out/m.json").is_file());

    let o = ktangent(
        dir.path(),
        &[
            "eval",
            "--manifest",
            "data/manifest.txt",
            "--model",
            "out/m.json",
            "--out",
            "det.csv",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("det.csv")).unwrap();
    assert!(csv.starts_with("threshold,miss_rate,false_positive_rate\n"));
    assert!(!csv.contains('\r'));
    assert!(stderr(&o).contains("area under DET"));

    // the same curve again, this time on stdout
    let o = ktangent(
        dir.path(),
        &[
            "eval",
            "--manifest",
            "data/manifest.txt",
            "--model",
            "out/m.json",
        ],
    );
    assert_eq!(String::from_utf8(o.stdout).unwrap(), csv);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    fs::write(
        dir.path().join("run.cfg"),
        "manifest = data/manifest.txt\nstages = 1\nrounds = 2\nregions = 4\nk = 3\nmapping = karcher\n",
    )
    .unwrap();
    let o = ktangent(
        dir.path(),
        &[
            "exp-k-sweep",
            "--config",
            "run.cfg",
            "--k",
            "2",
            "--out",
            "sweep",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let mut names: Vec<String> = fs::read_dir(dir.path().join("sweep"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["det_k1.csv", "det_k2.csv"]);

    let o = ktangent(
        dir.path(),
        &["exp-mappings", "--config", "run.cfg", "--out", "maps"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for mode in ["raw", "identity", "karcher", "ktangent"] {
        assert!(dir.path().join(format!("maps/det_{mode}.csv")).is_file());
    }
    // identical inputs give identical bytes
    let o = ktangent(
        dir.path(),
        &["exp-mappings", "--config", "run.cfg", "--out", "maps2"],
    );
    assert!(o.status.success());
    for mode in ["raw", "identity", "karcher", "ktangent"] {
        let f = format!("det_{mode}.csv");
        assert_eq!(
            fs::read(dir.path().join("maps").join(&f)).unwrap(),
            fs::read(dir.path().join("maps2").join(&f)).unwrap()
        );
    }
}

#[test]
fn det_csv_from_scores() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("s.txt"),
        "# label score\n1 2\n1 1\n-1 0\n-1 -1\n",
    )
    .unwrap();
    let o = ktangent(dir.path(), &["det-csv", "s.txt", "--out", "d.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(dir.path().join("d.csv")).unwrap(),
        "threshold,miss_rate,false_positive_rate\n-1,0,1\n0,0,0.5\n1,0,0\n2,0.5,0\n"
    );
}

#[test]
fn failures_are_single_coded_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_fails_with(
        &ktangent(d, &["train", "--model", "m.json"]),
        "E_INVALID_ARGUMENT",
    );
    assert_fails_with(
        &ktangent(
            d,
            &["train", "--manifest", "absent.txt", "--model", "m.json"],
        ),
        "E_MISSING_FILE",
    );
    assert_fails_with(&ktangent(d, &["det-csv", "absent.txt"]), "E_MISSING_FILE");
    fs::write(d.join("bad.txt"), "1 0.5\nmaybe 0.2\n").unwrap();
    assert_fails_with(&ktangent(d, &["det-csv", "bad.txt"]), "E_PARSE");
    fs::write(d.join("m.txt"), "WINDOW 18 36\n").unwrap();
    let o = ktangent(d, &["train", "--manifest", "m.txt", "--model", "m.json"]);
    assert_fails_with(&o, "E_PARSE");
    assert!(stderr(&o).contains("no positive samples"));
    fs::write(d.join("c.cfg"), "colour = blue\n").unwrap();
    assert_fails_with(&ktangent(d, &["train", "--config", "c.cfg"]), "E_PARSE");
    fs::write(d.join("m.json"), "{\"schema_version\": 9}").unwrap();
    synth(d);
    assert_fails_with(
        &ktangent(
            d,
            &[
                "eval",
                "--manifest",
                "data/manifest.txt",
                "--model",
                "m.json",
            ],
        ),
        "E_SCHEMA_VERSION",
    );
    let mut args = vec![
        "train",
        "--manifest",
        "data/manifest.txt",
        "--model",
        "x.json",
        "--mapping",
        "polar",
    ];
    args.extend_from_slice(SMALL);
    assert_fails_with(&ktangent(d, &args), "E_UNKNOWN_MAPPING");
    assert_fails_with(&ktangent(d, &["train", "--stages", "many"]), "E_USAGE");
    assert_fails_with(&ktangent(d, &["frobnicate"]), "E_USAGE");
}
