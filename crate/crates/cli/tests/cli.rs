use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dpkit::applier::Matrices;
use dpkit::labelmodels::CageParams;
use dpkit::subset::IndicesFile;
use tempfile::TempDir;

const SMALL: &str = r#"{"synth": {"n_u": 300, "n_v": 60, "n_t": 200}, "jl": {"epochs": 20}, "subset": {"k": 5}}"#;

fn dpkit(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dpkit"));
    for a in args {
        cmd.arg(a);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

/// A small demo run in a fresh directory.
fn demo() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "config.json", SMALL);
    let out_dir = dir.path().join("demo");
    let out = dpkit(&[&"--config", &cfg, &"demo", &"--out", &out_dir]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (dir, out_dir)
}

#[test]
fn version_reports_format() {
    let out = dpkit(&[&"--version"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("file format 1"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&dpkit(&[&"frobnicate"])), 2);
    assert_eq!(code(&dpkit(&[&"apply", &"--rules", &"r.json"])), 2);
}

#[test]
fn missing_rules_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.jsonl", "{\"id\":\"a\",\"text\":\"hi\"}\n");
    let out = dpkit(&[&"apply", &"--rules", &dir.path().join("nope.json"), &"--data", &data, &"--out", &dir.path().join("m.json")]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"cage": {"epochs": 0}}"#);
    let out = dpkit(&[&"--config", &cfg, &"demo", &"--out", &dir.path().join("x")]);
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("c.json") && stderr.contains("epochs"), "{stderr}");
}

#[test]
fn apply_orientations_round_trip_and_invalid_data_exits_3() {
    let (_tmp, d) = demo();
    let inst = d.join("inst.json");
    let lfs = d.join("lfs.json");
    for (path, o) in [(&inst, "instances"), (&lfs, "lfs")] {
        let out = dpkit(&[&"apply", &"--rules", &d.join("rules.json"), &"--data", &d.join("t.jsonl"), &"--out", path, &"--orientation", &o, &"--role", &"t"]);
        assert_eq!(code(&out), 0);
        assert!(stdout(&out).starts_with("n = 200, m = 6"));
    }
    let a = Matrices::load(&inst).unwrap();
    assert_eq!(a, Matrices::load(&lfs).unwrap());
    assert_eq!(a, Matrices::load(&d.join("t.matrix.json")).unwrap());

    let bad = write(&d, "bad.jsonl", "{\"id\":\"a\",\"text\":\"hi\",\"label\":9}\n");
    let out = dpkit(&[&"apply", &"--rules", &d.join("rules.json"), &"--data", &bad, &"--out", &d.join("x.json")]);
    assert_eq!(code(&out), 3);
    let out = dpkit(&[&"apply", &"--rules", &d.join("rules.json"), &"--data", &d.join("u.jsonl"), &"--out", &d.join("x.json"), &"--role", &"l"]);
    assert_eq!(code(&out), 3, "L without gold");
}

#[test]
fn analyze_prints_table_and_handles_missing_gold() {
    let (_tmp, d) = demo();
    let rec = d.join("rec.json");
    let out = dpkit(&[&"analyze", &"--matrix", &d.join("l.matrix.json"), &"--out", &rec]);
    assert_eq!(code(&out), 0);
    let table = stdout(&out);
    assert_eq!(table.lines().count(), 7);
    assert!(table.starts_with("lf "));
    assert_eq!(std::fs::read_to_string(&rec).unwrap(), std::fs::read_to_string(d.join("analysis.json")).unwrap());

    let out = dpkit(&[&"analyze", &"--matrix", &d.join("u.matrix.json")]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).lines().nth(1).unwrap().ends_with('—'));

    let out = dpkit(&[&"analyze", &"--matrix", &d.join("u.matrix.json"), &"--gold", &d.join("t.jsonl")]);
    assert_eq!(code(&out), 3, "ids do not match");

    let empty = write(&d, "empty.json", "");
    assert_eq!(code(&dpkit(&[&"analyze", &"--matrix", &empty])), 3);
}

#[test]
fn train_cage_writes_finite_params_and_diverges_with_huge_step() {
    let (_tmp, d) = demo();
    let params = d.join("c.json");
    let out = dpkit(&[&"train", &"cage", &"--matrix", &d.join("u.matrix.json"), &"--labeled", &d.join("l.matrix.json"), &"--test", &d.join("t.matrix.json"), &"--params-out", &params]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let p = CageParams::load(&params).unwrap();
    assert!(p.theta.iter().all(|t| t.is_finite()));
    assert!(d.join("c.log.json").exists());

    let out = dpkit(&[&"train", &"cage", &"--matrix", &d.join("u.matrix.json"), &"--params-out", &params, &"--learning-rate", &"1e6"]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("divergence; reduce learning_rate"));
}

fn train_jl(d: &Path, extra: &[&dyn AsRef<std::ffi::OsStr>], params: &Path) -> Output {
    let mut args: Vec<&dyn AsRef<std::ffi::OsStr>> = vec![];
    args.extend_from_slice(extra);
    let rules = d.join("rules.json");
    let l = d.join("l.jsonl");
    let u = d.join("u.jsonl");
    args.extend_from_slice(&[&"train", &"jl", &"--rules", &rules, &"--labeled", &l, &"--unlabeled", &u, &"--params-out", &params]);
    dpkit(&args)
}

#[test]
fn jl_with_zeroed_gm_weights_matches_only_l() {
    let (_tmp, d) = demo();
    let zeroed = write(
        &d,
        "zeroed.json",
        r#"{"jl": {"epochs": 20, "head": "fm", "weights": {"gm_sup": 0, "gm_unsup": 0, "agree": 0, "qg": 0}}}"#,
    );
    let plain = write(&d, "plain.json", r#"{"jl": {"epochs": 20}}"#);
    let (pa, pb) = (d.join("a.json"), d.join("b.json"));
    assert_eq!(code(&train_jl(&d, &[&"--config", &zeroed], &pa)), 0);
    let out = train_jl(&d, &[&"--config", &plain], &pb);
    assert_eq!(code(&out), 0);
    let out = dpkit(&[&"train", &"jl", &"--config", &plain, &"--only-l", &"--rules", &d.join("rules.json"), &"--labeled", &d.join("l.jsonl"), &"--unlabeled", &d.join("u.jsonl"), &"--params-out", &pb]);
    assert_eq!(code(&out), 0);
    let (oa, ob) = (d.join("a.jsonl"), d.join("b.jsonl"));
    for (p, o) in [(&pa, &oa), (&pb, &ob)] {
        assert_eq!(code(&dpkit(&[&"predict", &"--params", p, &"--data", &d.join("t.jsonl"), &"--out", o])), 0);
    }
    assert_eq!(std::fs::read(&oa).unwrap(), std::fs::read(&ob).unwrap());
}

#[test]
fn jl_huge_step_exits_4() {
    let (_tmp, d) = demo();
    let out = train_jl(&d, &[&"--seed", &"3"], &d.join("x.json"));
    assert_eq!(code(&out), 0);
    let (rules, l, u, p) = (d.join("rules.json"), d.join("l.jsonl"), d.join("u.jsonl"), d.join("y.json"));
    let out = dpkit(&[&"train", &"jl", &"--rules", &rules, &"--labeled", &l, &"--unlabeled", &u, &"--params-out", &p, &"--learning-rate", &"1e6"]);
    assert_eq!(code(&out), 4);
    assert!(!p.exists());
}

#[test]
fn predict_after_reload_matches_demo_output() {
    let (_tmp, d) = demo();
    let out_path = d.join("again.jsonl");
    let out = dpkit(&[&"predict", &"--params", &d.join("jl.params.json"), &"--data", &d.join("t.jsonl"), &"--rules", &d.join("rules.json"), &"--out", &out_path]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&out_path).unwrap(), std::fs::read(d.join("predictions.jsonl")).unwrap());

    let out = dpkit(&[&"predict", &"--params", &d.join("cage.params.json"), &"--matrix", &d.join("t.matrix.json"), &"--out", &out_path]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(&out_path).unwrap(), std::fs::read(d.join("cage.predictions.jsonl")).unwrap());

    let out = dpkit(&[&"predict", &"--params", &d.join("jl.params.json"), &"--data", &d.join("t.jsonl"), &"--out", &out_path]);
    assert_eq!(code(&out), 2, "mean head needs LF outputs");
    let corrupt = write(&d, "corrupt.json", "{\"model\": \"cage\", \"version\"");
    let out = dpkit(&[&"predict", &"--params", &corrupt, &"--matrix", &d.join("t.matrix.json"), &"--out", &out_path]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("corrupt params file"));
}

#[test]
fn subset_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let pts = write(
        d,
        "pts.jsonl",
        &format!(
            "{{\"id\":\"a\",\"text\":\"\",\"features\":[1.0,0.0],\"label\":1}}\n\
             {{\"id\":\"b\",\"text\":\"\",\"features\":[0.0,1.0],\"label\":2}}\n\
             {{\"id\":\"c\",\"text\":\"\",\"features\":[{r},{r}],\"label\":2}}\n"
        ),
    );
    let out_path = d.join("idx.json");
    let out = dpkit(&[&"subset", &"--method", &"fl", &"--k", &"1", &"--data", &pts, &"--out", &out_path]);
    assert_eq!(code(&out), 0);
    assert_eq!(IndicesFile::load(&out_path).unwrap().indices, vec![2]);

    let again = d.join("idx2.json");
    for p in [&out_path, &again] {
        let out = dpkit(&[&"subset", &"--method", &"rand", &"--k", &"2", &"--seed", &"11", &"--data", &pts, &"--out", p]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(std::fs::read(&out_path).unwrap(), std::fs::read(&again).unwrap());
    assert_eq!(IndicesFile::load(&out_path).unwrap().seed, Some(11));

    let prefix = d.join("split");
    let out = dpkit(&[&"subset", &"--method", &"sup", &"--k", &"2", &"--data", &pts, &"--out", &out_path, &"--save-prefix", &prefix]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let l = std::fs::read_to_string(d.join("split.L")).unwrap();
    let u = std::fs::read_to_string(d.join("split.U")).unwrap();
    assert_eq!((l.lines().count(), u.lines().count()), (2, 1));

    let out = dpkit(&[&"subset", &"--method", &"sup", &"--k", &"1", &"--data", &pts, &"--out", &out_path]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget below class count"));
    let out = dpkit(&[&"subset", &"--method", &"fl", &"--k", &"4", &"--data", &pts, &"--out", &out_path]);
    assert_eq!(code(&out), 2);
}

#[test]
fn demo_is_byte_reproducible() {
    let (_a, da) = demo();
    let (_b, db) = demo();
    let mut names: Vec<_> = std::fs::read_dir(&da).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 19);
    for name in names {
        assert_eq!(
            std::fs::read(da.join(&name)).unwrap(),
            std::fs::read(db.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}
