use std::path::Path;
use std::process::{Command, Output};

use coldcount_core::csvio::event_log_from_csv;
use coldcount_core::fit::tabulate;

fn coldcount(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coldcount"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// (parameter, value, sigma, injected, pull) from a report CSV.
type Row = (String, f64, f64, Option<f64>, Option<f64>);

fn report(path: &Path) -> Vec<Row> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            let num = |i: usize| rec[i].parse::<f64>().ok();
            (rec[0].to_string(), num(1).unwrap(), num(2).unwrap(), num(4), num(5))
        })
        .collect()
}

fn row(rows: &[Row], name: &str) -> (f64, f64) {
    let r = rows.iter().find(|r| r.0 == name).unwrap_or_else(|| panic!("no row {name}"));
    (r.1, r.2)
}

#[test]
fn fig2_preset_mean_atom_number() {
    let dir = tempfile::tempdir().unwrap();
    ok(&coldcount(dir.path(), &["--preset", "fig2", "simulate"]));
    let log = event_log_from_csv(&std::fs::read_to_string(dir.path().join("events.csv")).unwrap()).unwrap();
    let mean = tabulate(&log).unwrap().mean_n();
    assert!((2.3..=2.9).contains(&mean), "<N> = {mean}");
}

#[test]
fn zero_duration_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "sim.duration_s = 0\n").unwrap();
    let out = coldcount(dir.path(), &["--config", cfg.to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("events.csv").exists());
}

#[test]
fn unknown_key_and_bad_usage_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = coldcount(dir.path(), &["--set", "trap.size = 3", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
    assert_eq!(coldcount(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(coldcount(dir.path(), &["--preset", "fig9", "simulate"]).status.code(), Some(2));
    // missing input file
    assert_eq!(coldcount(dir.path(), &["synth"]).status.code(), Some(2));
}

#[test]
fn fixed_seed_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--preset", "fig2", "--seed", "7", "--set", "sim.duration_s = 20000", "simulate"];
    ok(&coldcount(a.path(), &args));
    ok(&coldcount(b.path(), &args));
    let read = |d: &Path| std::fs::read(d.join("events.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    ok(&coldcount(b.path(), &["--preset", "fig2", "--seed", "8", "--set", "sim.duration_s = 20000", "simulate"]));
    assert_ne!(read(a.path()), read(b.path()));
}

#[test]
fn staged_commands_match_pipeline() {
    let staged = tempfile::tempdir().unwrap();
    let whole = tempfile::tempdir().unwrap();
    let base = ["--preset", "fig2", "--seed", "3", "--set", "sim.duration_s = 20000"];
    for cmd in ["simulate", "synth", "detect", "fit"] {
        let mut args = base.to_vec();
        args.push(cmd);
        ok(&coldcount(staged.path(), &args));
    }
    let mut args = base.to_vec();
    args.push("pipeline");
    ok(&coldcount(whole.path(), &args));
    for f in ["events.csv", "trace.csv", "detected.csv", "rate_table.csv"] {
        assert_eq!(
            std::fs::read(staged.path().join(f)).unwrap(),
            std::fs::read(whole.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn default_pipeline_pulls_below_three() {
    let dir = tempfile::tempdir().unwrap();
    ok(&coldcount(dir.path(), &["pipeline"]));
    let rows = report(&dir.path().join("recovery.csv"));
    let mut checked = 0;
    for (name, _, sigma, truth, pull) in &rows {
        if let (Some(_), Some(p)) = (truth, pull) {
            if *sigma > 0.0 {
                assert!(*p < 3.0, "{name}: pull {p}");
                checked += 1;
            }
        }
    }
    assert!(checked >= 6);
}

#[test]
fn low_snr_is_a_detection_failure() {
    let dir = tempfile::tempdir().unwrap();
    let low = ["--set", "synth.per_atom_rate_hz = 1000", "--set", "synth.bin_width_s = 0.01"];
    let mut args = low.to_vec();
    args.push("pipeline");
    assert_eq!(coldcount(dir.path(), &args).status.code(), Some(4));
    // with the true scale supplied the SNR check itself trips
    let mut args = low.to_vec();
    args.extend(["--set", "detect.calibrate = false", "pipeline"]);
    let out = coldcount(dir.path(), &args);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("SNR"));
}

#[test]
fn zero_collision_rates_give_zero_betas() {
    let dir = tempfile::tempdir().unwrap();
    ok(&coldcount(
        dir.path(),
        &[
            "--set",
            "channels.beta_hcc_cm3_s = 0",
            "--set",
            "channels.beta_re_cm3_s = 0",
            "--set",
            "channels.beta_fcc_cm3_s = 0",
            "--set",
            "trap.bg_lifetime_s = 300",
            "--set",
            "trap.load_rate_hz = 0.01",
            "pipeline",
        ],
    ));
    let rows = report(&dir.path().join("recovery.csv"));
    for name in ["beta1_over_v", "beta2_over_v"] {
        let (v, s) = row(&rows, name);
        assert!(v.abs() < 3.0 * s.max(1e-12), "{name} = {v} ± {s}");
    }
}

#[test]
fn shield_table_columns() {
    let dir = tempfile::tempdir().unwrap();
    ok(&coldcount(dir.path(), &["--set", "shield.s0 = 0, 1, 2, 5, 10, 20, 50", "shield"]));
    let mut r = csv::Reader::from_path(dir.path().join("shield.csv")).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(header, ["temperature_uK", "s0", "p_hcc", "a_fit", "a_formula"]);
    let rows: Vec<Vec<f64>> = r
        .records()
        .map(|x| x.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3 * 7);
    for row in &rows {
        let t = row[0];
        assert!((row[4] - (1.0 + 0.5 * (t / 125.0).powi(2))).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&row[2]));
        if row[1] == 0.0 {
            assert_eq!(row[2], 1.0);
        }
    }
}

#[test]
fn scaling_law_shield_recovers_formula() {
    let dir = tempfile::tempdir().unwrap();
    ok(&coldcount(dir.path(), &["--set", "shielding.model = scaling_law", "shield"]));
    let mut r = csv::Reader::from_path(dir.path().join("shield.csv")).unwrap();
    for rec in r.records() {
        let rec = rec.unwrap();
        let (fit, formula): (f64, f64) = (rec[3].parse().unwrap(), rec[4].parse().unwrap());
        assert!((fit - formula).abs() < 1e-9 * formula);
    }
}

#[test]
fn oracle_table_matches_target_mean() {
    let dir = tempfile::tempdir().unwrap();
    ok(&coldcount(dir.path(), &["--preset", "fig2", "oracle"]));
    let mut r = csv::Reader::from_path(dir.path().join("oracle.csv")).unwrap();
    let mut mean = 0.0;
    let mut total = 0.0;
    for rec in r.records() {
        let rec = rec.unwrap();
        let (n, p): (f64, f64) = (rec[0].parse().unwrap(), rec[1].parse().unwrap());
        mean += n * p;
        total += p;
    }
    assert!((total - 1.0).abs() < 1e-9);
    assert!((mean - 2.6).abs() < 1e-6, "{mean}");
}

#[test]
fn fig4a_scan_recovers_decay_constant() {
    let dir = tempfile::tempdir().unwrap();
    ok(&coldcount(dir.path(), &["--preset", "fig4a", "pipeline"]));
    let rows = report(&dir.path().join("scan_fit.csv"));
    let a = rows.iter().find(|r| r.0 == "decay_constant").unwrap();
    assert!(a.4.unwrap() < 3.0, "A = {} ± {}", a.1, a.2);
    let b = rows.iter().find(|r| r.0 == "beta_hcc").unwrap();
    assert!(b.4.unwrap() < 3.0);
    let n = csv::Reader::from_path(dir.path().join("scan.csv")).unwrap().records().count();
    assert_eq!(n, 11);
}
