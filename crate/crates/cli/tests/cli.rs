use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hrom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hrom"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("hrom runs")
}

fn ok(args: &[&str]) -> String {
    let out = hrom(args);
    assert!(
        out.status.success(),
        "hrom {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Demo case with `cycles` online cycles; returns the config path.
fn case(dir: &Path, cycles: usize, edit: impl Fn(String) -> String) -> PathBuf {
    let d = dir.to_str().unwrap();
    ok(&["demo", "--out", d]);
    let cfg = dir.join("pipeline.toml");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("cycles = 10", &format!("cycles = {cycles}"));
    std::fs::write(&cfg, edit(text)).unwrap();
    cfg
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn staged_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = case(dir.path(), 2, |t| t);
    let c = cfg.to_str().unwrap();
    let work = dir.path().join("work");

    ok(&["hfm-run", "--config", c]);
    let training = work.join("hfm/snapshots.hrsnap");
    ok(&["ingest", "--config", c, "--snapshots", training.to_str().unwrap()]);
    assert!(ok(&["compress", "--config", c]).contains("modes from 20 snapshots"));
    let hr = ok(&["hyperreduce", "--config", c, "--random-trials", "3"]);
    assert!(hr.contains("random"), "{hr}");
    let gappy = std::fs::read_to_string(work.join("gappy/p.hrgappy")).unwrap();
    let mask_point = gappy.lines().find(|l| l.starts_with("mask")).unwrap().split_whitespace().nth(2).unwrap().to_string();
    ok(&["rom-run", "--config", c, "--point", &mask_point]);
    let history = std::fs::read_to_string(work.join(format!("rom/point_{mask_point}.csv"))).unwrap();
    assert_eq!(history.lines().count(), 1 + 2 * 20);

    // non-mask points have no online history
    let out = hrom(&["rom-run", "--config", c, "--point", "0"]);
    if !gappy.contains(" 0 ") {
        assert_eq!(out.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&out.stderr).contains("not a mask point"));
    }

    ok(&["reconstruct", "--config", c, "--field", "p", "--cycle", "1"]);
    assert!(work.join("fields/p_step20.bin").exists());
    let cloud = std::fs::read_to_string(work.join("fields/p_step20.csv")).unwrap();
    assert_eq!(cloud.lines().count(), 1 + 2400);
    ok(&["reconstruct", "--config", c, "--field", "u"]);

    // the report needs the reference timing
    assert_eq!(hrom(&["report", "--config", c]).status.code(), Some(2));
    ok(&["hfm-run", "--config", c, "--reference"]);
    let reference = work.join("reference/snapshots.hrsnap");
    let u_ref = dir.path().join("u_ref.bin");
    ok(&["extract", "--config", c, "--snapshots", reference.to_str().unwrap(), "--field", "u", "--step", "40", "--out", u_ref.to_str().unwrap()]);
    let diff = dir.path().join("diff.bin");
    let cmp = ok(&[
        "compare",
        "--config",
        c,
        "--metric",
        "gram",
        "--reference",
        u_ref.to_str().unwrap(),
        "--candidate",
        work.join("fields/u_step40.bin").to_str().unwrap(),
        "--diff",
        diff.to_str().unwrap(),
    ]);
    let rel: f64 = cmp.lines().next().unwrap().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(rel < 1e-2, "{cmp}");
    assert!(diff.exists());

    let hist = dir.path().join("h.csv");
    ok(&["history", "--config", c, "--snapshots", reference.to_str().unwrap(), "--point", "7", "--out", hist.to_str().unwrap()]);
    assert!(std::fs::read_to_string(&hist).unwrap().starts_with("cycle,step,time,eps33,sig33,p"));

    // report total equals the sum of the manifest rows
    let report_path = dir.path().join("report.txt");
    ok(&["report", "--config", c, "--out", report_path.to_str().unwrap()]);
    let table = std::fs::read_to_string(&report_path).unwrap();
    let manifest = std::fs::read_to_string(work.join("stages.csv")).unwrap();
    let rows: Vec<f64> = manifest.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(rows.len(), 8, "{manifest}");
    let total: f64 = table
        .lines()
        .find(|l| l.starts_with("total"))
        .and_then(|l| l.split_whitespace().last())
        .unwrap()
        .parse()
        .unwrap();
    assert!((total - rows.iter().sum::<f64>()).abs() <= 1e-3, "{table}");

    // rerunning a stage replaces its manifest row
    ok(&["compress", "--config", c]);
    let again = std::fs::read_to_string(work.join("stages.csv")).unwrap();
    assert_eq!(again.lines().count(), manifest.lines().count());
}

#[test]
fn reruns_are_deterministic_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = case(a.path(), 2, |t| t);
    let cb = case(b.path(), 2, |t| t);
    ok(&["pipeline", "--config", ca.to_str().unwrap()]);
    ok(&["--threads", "1", "pipeline", "--config", cb.to_str().unwrap()]);
    let (wa, wb) = (a.path().join("work"), b.path().join("work"));
    let names = files(&wa);
    assert_eq!(names, files(&wb));
    let mut compared = 0;
    for n in names {
        // only timings may differ
        if n == Path::new("stages.csv") {
            continue;
        }
        let (x, y) = (std::fs::read(wa.join(&n)).unwrap(), std::fs::read(wb.join(&n)).unwrap());
        if n.extension().is_some_and(|e| e == "hrsnap") {
            // the manifest names absolute mesh/law/schedule paths
            let strip = |v: &[u8]| String::from_utf8_lossy(v).lines().skip(4).collect::<Vec<_>>().join("\n");
            assert_eq!(strip(&x), strip(&y), "{}", n.display());
        } else {
            assert!(x == y, "{} differs", n.display());
        }
        compared += 1;
    }
    assert!(compared > 50);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    // validation: bad tolerance, missing files, missing inputs
    let cfg = case(&dir.path().join("bad"), 1, |t| t.replace("pod = 0.0000001", "pod = 1.5"));
    let out = hrom(&["compress", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("setup"));
    assert_eq!(hrom(&["compress", "--config", "/nonexistent/pipeline.toml"]).status.code(), Some(2));
    let cfg = case(&dir.path().join("fresh"), 1, |t| t);
    let out = hrom(&["rom-run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(hrom(&["frobnicate"]).status.code(), Some(2));

    // numerical: an unreachable Newton tolerance
    let cfg = case(&dir.path().join("tight"), 1, |t| t.replace("hfm_newton = 0.000001", "hfm_newton = 1e-30"));
    let out = hrom(&["hfm-run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("high-fidelity solve") && err.contains("cycle 1 step 1"), "{err}");
}
