use std::fs;
use std::path::Path;
use std::process::Command;

use chstab::cli::{run_experiment, sweep, ExperimentConfig, SweepEntry, STEPS_HEADER};
use chstab::driver::Scheme;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chstab"))
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn tiny(scheme: Scheme, adaptive: bool) -> ExperimentConfig {
    ExperimentConfig {
        nx: 8,
        ny: 8,
        lx: 8.0,
        ly: 8.0,
        t_final: 1.0,
        scheme,
        adaptive,
        tau0: 0.3,
        seed: 3,
        ..ExperimentConfig::default()
    }
}

#[test]
fn tiny_run_writes_well_formed_csv() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["--nx", "8", "--ny", "8", "--lx", "8", "--ly", "8", "--T", "1", "--tau0", "0.3"])
        .args(["--scheme", "ee2", "--adaptive", "--eyre", "--reference", "classical", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let (header, rows) = read_rows(&dir.path().join("steps.csv"));
    assert_eq!(header, STEPS_HEADER);
    assert!(!rows.is_empty());
    for row in &rows {
        assert_eq!(row.len(), 8);
        for field in &row[1..3] {
            let mantissa = field.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17, "{field}");
        }
    }
    let last = rows.last().unwrap();
    assert_eq!(last[1].parse::<f64>().unwrap(), 1.0);

    let (header, rows) = read_rows(&dir.path().join("summary.csv"));
    assert_eq!(rows.len(), 1);
    let col = |name: &str| &rows[0][header.iter().position(|h| h == name).unwrap()];
    assert!(col("error").parse::<f64>().unwrap() > 0.0);
    assert_eq!(col("final_t").parse::<f64>().unwrap(), 1.0);

    let config: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(config["nx"], 8);
    assert!(config["epsilon"].as_f64().unwrap() > 0.0);
}

#[test]
fn identical_invocations_are_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let status = bin()
            .args(["--nx", "12", "--ny", "10", "--T", "3", "--scheme", "lim", "--adaptive"])
            .args(["--tau0", "0.05", "--seed", "99", "--out"])
            .arg(dir.path())
            .status()
            .unwrap();
        assert!(status.success());
    }
    let sa = fs::read(a.path().join("steps.csv")).unwrap();
    let sb = fs::read(b.path().join("steps.csv")).unwrap();
    assert_eq!(sa, sb);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| bin().args(args).arg("--out").arg(dir.path()).status().unwrap().code();
    assert_eq!(code(&["--nx", "0"]), Some(2));
    assert_eq!(code(&["--tau0", "-1"]), Some(2));
    assert_eq!(code(&["--eps-value", "0"]), Some(2));
    assert_eq!(code(&["--scheme", "rk4"]), Some(2));
    let small = ["--nx", "8", "--ny", "8", "--lx", "8", "--ly", "8", "--scheme", "lim"];
    // without splitting, a huge LIM step amplifies the unstable modes until they overflow
    let blowup = [&small[..], &["--T", "1e4", "--tau0", "1e4"]].concat();
    assert_eq!(code(&blowup), Some(3));
    let absurd = [&small[..], &["--T", "1e300", "--tau0", "1e300"]].concat();
    assert_eq!(code(&absurd), Some(2));
}

#[test]
fn sweep_file_emits_one_summary_per_entry() {
    let dir = tempfile::tempdir().unwrap();
    let sweep_file = dir.path().join("sweep.json");
    fs::write(&sweep_file, r#"[{"tau0": 1.0}, {"tau0": 0.5}, {"tau0": 0.25}]"#).unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["--nx", "8", "--ny", "8", "--lx", "8", "--ly", "8", "--T", "2", "--scheme", "ee2"])
        .arg("--sweep-file")
        .arg(&sweep_file)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let (header, rows) = read_rows(&out.join("sweep.csv"));
    assert_eq!(header, ["run", "scheme", "adaptive", "eyre", "tau0", "tol", "m_max", "matvecs", "error"]);
    assert_eq!(rows.len(), 3);
    let taus: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert_eq!(taus, [1.0, 0.5, 0.25]);
    for k in 0..3 {
        assert!(out.join(format!("run_{k:03}/summary.csv")).exists());
    }
    let errors: Vec<f64> = rows.iter().map(|r| r[8].parse().unwrap()).collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

#[test]
fn bad_sweep_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let sweep_file = dir.path().join("sweep.json");
    fs::write(&sweep_file, r#"[{"tau": 1.0}]"#).unwrap();
    let status = bin()
        .arg("--sweep-file")
        .arg(&sweep_file)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn constant_lim_matvecs_are_sum_of_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(Scheme::Lim, false);
    config.t_final = 5.0;
    config.tau0 = 0.7;
    let e = run_experiment(&config, None, Some(dir.path())).unwrap();
    let expected: u64 = e.output.records.iter().map(|r| 2 * r.p.unwrap() as u64 - 1).sum();
    assert!(e.output.records.iter().any(|r| r.p.unwrap() > 1));
    assert_eq!(e.summary.scheme_matvecs, expected);
    assert_eq!(e.summary.total_matvecs, expected);
    let (_, rows) = read_rows(&dir.path().join("steps.csv"));
    let column: u64 = rows.iter().map(|r| r[3].parse::<u64>().unwrap()).sum();
    assert_eq!(column, expected);
}

#[test]
fn summary_totals_match_step_rows() {
    for (scheme, adaptive) in [(Scheme::Lim, true), (Scheme::Ee2, true), (Scheme::Ee2, false)] {
        let dir = tempfile::tempdir().unwrap();
        let e = run_experiment(&tiny(scheme, adaptive), None, Some(dir.path())).unwrap();
        let (_, rows) = read_rows(&dir.path().join("steps.csv"));
        let column: u64 = rows.iter().map(|r| r[3].parse::<u64>().unwrap()).sum();
        assert_eq!(column, e.summary.total_matvecs);
        assert_eq!(e.summary.steps, rows.len());
    }
}

#[test]
fn library_sweep_shares_reference() {
    let base = tiny(Scheme::Lim, false);
    let entries = vec![
        SweepEntry {
            tau0: Some(0.5),
            ..SweepEntry::default()
        },
        SweepEntry {
            tau0: Some(0.5),
            scheme: Some(Scheme::Ee2),
            ..SweepEntry::default()
        },
    ];
    let s = sweep(&base, &entries, None).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s[0].scheme, Scheme::Lim);
    assert_eq!(s[1].scheme, Scheme::Ee2);
    assert!(s[1].error.unwrap() < s[0].error.unwrap());
}
