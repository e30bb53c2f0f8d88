use std::path::{Path, PathBuf};

use coldcount_core::channels::{fit_decay_constant, ln_suppression_ratio, scaling_constant, ShieldingModel};
use coldcount_core::csvio::{
    detection_report_rows, event_log_from_csv, event_log_to_csv, fit_report_rows, rate_table_to_csv, report_to_csv,
    table_to_csv, trace_from_csv, trace_to_csv, write_atomic, ReportRow,
};
use coldcount_core::detect::{calibrate, detect, Calibration, Comparison};
use coldcount_core::fit::{fit_loss2_with_linear, fit_rates, tabulate, FitResult};
use coldcount_core::pipeline::{closed_loop, repump_scan};
use coldcount_core::sim::{
    distribution_mean, expected_event_rates, master_stationary, simulate, simulate_ensemble, stationary_distribution,
    EventLog, RateModel,
};
use coldcount_core::trace::synthesize;

use crate::config::RunConfig;
use crate::error::CliError;

pub struct Context {
    pub config: RunConfig,
    pub out_dir: PathBuf,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.out(name);
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    fn input(&self, configured: &Option<PathBuf>, default: &str) -> PathBuf {
        configured.clone().unwrap_or_else(|| self.out(default))
    }

    fn model(&self) -> Result<RateModel, CliError> {
        Ok(self.config.scenario.rate_model(self.config.seed)?.0)
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn model_rows(m: &RateModel) -> Vec<ReportRow> {
    vec![
        ReportRow::new("load_rate", m.load_rate, 0.0, "1/s"),
        ReportRow::new("bg_rate", m.bg_rate, 0.0, "1/s"),
        ReportRow::new("beta1_over_v", m.b1, 0.0, "1/s"),
        ReportRow::new("b2_event", m.b2, 0.0, "1/s"),
        ReportRow::new("beta2_over_v", 2.0 * m.b2, 0.0, "1/s"),
    ]
}

pub fn simulate_cmd(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let model = ctx.model()?;
    let acq = &c.acquisition;
    let logs = if c.ensemble == 1 {
        vec![simulate(&model, acq.n0, acq.duration, c.seed)?]
    } else {
        simulate_ensemble(&model, acq.n0, acq.duration, c.seed, c.ensemble)?
    };
    ctx.write("model.csv", &report_to_csv(&model_rows(&model))?)?;
    for (k, log) in logs.iter().enumerate() {
        let name = if logs.len() == 1 {
            "events.csv".to_string()
        } else {
            format!("events_{k:04}.csv")
        };
        let path = ctx.write(&name, &event_log_to_csv(log)?)?;
        println!("{}: {} events, <N> = {:.3}", path.display(), log.events.len(), log.mean_n());
    }
    Ok(())
}

pub fn synth_cmd(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let src = ctx.input(&c.io.events, "events.csv");
    let log = event_log_from_csv(&read(&src)?)?;
    let acq = &c.acquisition;
    let trace = synthesize(&log, acq.per_atom_rate, acq.bg_rate, acq.bin_width, c.seed)?;
    let path = ctx.write("trace.csv", &trace_to_csv(&trace)?)?;
    println!("{}: {} bins of {} s", path.display(), trace.counts.len(), trace.bin_width);
    Ok(())
}

fn calibration_rows(cal: &Calibration) -> Vec<ReportRow> {
    vec![
        ReportRow::new("cal_per_atom_rate", cal.per_atom_rate, cal.per_atom_sigma, "counts/s"),
        ReportRow::new("cal_bg_rate", cal.bg_rate, cal.bg_sigma, "counts/s"),
        ReportRow::new("cal_levels", cal.levels as f64, 0.0, "1"),
    ]
}

pub fn detect_cmd(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let src = ctx.input(&c.io.trace, "trace.csv");
    let trace = trace_from_csv(&read(&src)?)?;
    let cal = if c.acquisition.self_calibrate {
        calibrate(&trace)?
    } else {
        Calibration::known(trace.per_atom_rate, trace.bg_rate)?
    };
    let det = detect(&trace, &cal, &c.acquisition.detect)?;
    let mut rows = calibration_rows(&cal);
    rows.extend(detection_report_rows(&det.report));
    ctx.write("detection.csv", &report_to_csv(&rows)?)?;
    let path = ctx.write("detected.csv", &event_log_to_csv(&det.log)?)?;
    println!(
        "{}: {} events, SNR {:.1}, ambiguity {:.4}",
        path.display(),
        det.log.events.len(),
        det.report.snr,
        det.report.ambiguity_rate()
    );
    Ok(())
}

/// Fit rows plus the loss2 linear-admixture check and β in cm³/s.
fn fit_rows(ctx: &Context, fit: &FitResult, log: &EventLog) -> Result<Vec<ReportRow>, CliError> {
    let mut rows = fit_report_rows(fit);
    let v = ctx.config.scenario.volume_cm3()?;
    let (b1, b2) = (fit.beta1(v), fit.beta2(v));
    rows.push(ReportRow::new("beta1", b1.value, b1.sigma, "cm3/s"));
    rows.push(ReportRow::new("beta2", b2.value, b2.sigma, "cm3/s"));
    match fit_loss2_with_linear(&tabulate(log)?) {
        Ok((lin, quad)) => {
            rows.push(ReportRow::new("loss2_linear_term", lin.value, lin.sigma, "1/s").with_truth(0.0));
            rows.push(ReportRow::new("loss2_quadratic_term", quad.value, quad.sigma, "1/s"));
        }
        Err(e) => eprintln!("note: loss2 linear-term check skipped: {e}"),
    }
    Ok(rows)
}

pub fn fit_cmd(ctx: &Context) -> Result<(), CliError> {
    let src = ctx.input(&ctx.config.io.detected, "detected.csv");
    let log = event_log_from_csv(&read(&src)?)?;
    let table = tabulate(&log)?;
    let fit = fit_rates(&table)?;
    ctx.write("rate_table.csv", &rate_table_to_csv(&table)?)?;
    let path = ctx.write("fit.csv", &report_to_csv(&fit_rows(ctx, &fit, &log)?)?)?;
    println!(
        "{}: R = {:.4}±{:.4}/s, tau = {:.1}±{:.1} s, b1/V = {:.2e}±{:.1e}/s, b2/V = {:.2e}±{:.1e}/s",
        path.display(),
        fit.load_rate.value,
        fit.load_rate.sigma,
        fit.bg_lifetime.value,
        fit.bg_lifetime.sigma,
        fit.b1.value,
        fit.b1.sigma,
        fit.beta2_over_v.value,
        fit.beta2_over_v.sigma
    );
    Ok(())
}

pub fn shield_cmd(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let consts = &c.scenario.consts;
    let model = c.scenario.shielding;
    let ln_p = |s0: f64, t: f64| -> Result<f64, CliError> {
        Ok(match model {
            ShieldingModel::LandauZener(p) => ln_suppression_ratio(s0, t, &p, consts)?,
            ShieldingModel::ScalingLaw => -s0 / scaling_constant(t, consts)?,
        })
    };
    let mut rows = Vec::new();
    for &t in &c.shield.temperatures {
        let curve: Vec<(f64, f64)> = c
            .shield
            .s0
            .iter()
            .map(|&s0| Ok((s0, ln_p(s0, t)?)))
            .collect::<Result<_, CliError>>()?;
        let mut window: Vec<(f64, f64)> = curve.iter().copied().filter(|p| (2.0..=50.0).contains(&p.0)).collect();
        if window.len() < 2 {
            window = curve.iter().copied().filter(|p| p.0 > 0.0).collect();
        }
        let a_fit = if window.len() >= 2 {
            fit_decay_constant(&window)?
        } else {
            f64::NAN
        };
        let a_formula = scaling_constant(t, consts)?;
        println!("T = {:.0} uK: fitted A = {a_fit:.3}, 1 + (T/T_D)^2/2 = {a_formula:.3}", t * 1e6);
        rows.extend(curve.iter().map(|&(s0, lp)| vec![t * 1e6, s0, lp.exp(), a_fit, a_formula]));
    }
    let path = ctx.write(
        "shield.csv",
        &table_to_csv(&["temperature_uK", "s0", "p_hcc", "a_fit", "a_formula"], &rows)?,
    )?;
    println!("{}", path.display());
    Ok(())
}

pub fn oracle_cmd(ctx: &Context) -> Result<(), CliError> {
    let model = ctx.model()?;
    let p = match ctx.config.oracle_n_max {
        Some(n) => master_stationary(&model, n)?,
        None => stationary_distribution(&model)?,
    };
    let rows: Vec<Vec<f64>> = expected_event_rates(&p, &model)
        .iter()
        .map(|r| vec![r.n as f64, r.probability, r.load, r.loss1, r.loss2])
        .collect();
    let path = ctx.write(
        "oracle.csv",
        &table_to_csv(&["n", "probability", "load_rate_hz", "loss1_rate_hz", "loss2_rate_hz"], &rows)?,
    )?;
    println!("{}: <N> = {:.4} over n <= {}", path.display(), distribution_mean(&p), p.len() - 1);
    Ok(())
}

fn comparison_rows(c: &Comparison) -> Vec<ReportRow> {
    vec![
        ReportRow::new("truth_events", c.truth_events as f64, 0.0, "1"),
        ReportRow::new("detected_events", c.detected_events as f64, 0.0, "1"),
        ReportRow::new("event_recovery", c.recovery(), 0.0, "1"),
        ReportRow::new("coincident_loss2", c.coincident_loss2 as f64, 0.0, "1"),
        ReportRow::new(
            "coincident_loss2_fraction",
            c.coincident_loss2 as f64 / c.detected_losses.max(1) as f64,
            0.0,
            "1",
        ),
    ]
}

pub fn pipeline_cmd(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let model = ctx.model()?;
    let run = closed_loop(&model, &c.acquisition, c.seed)?;
    ctx.write("events.csv", &event_log_to_csv(&run.truth)?)?;
    ctx.write("trace.csv", &trace_to_csv(&run.trace)?)?;
    ctx.write("detected.csv", &event_log_to_csv(&run.detected)?)?;
    ctx.write("rate_table.csv", &rate_table_to_csv(&run.table)?)?;

    let truth = |name: &str| -> Option<f64> {
        match name {
            "load_rate" => Some(model.load_rate),
            "bg_lifetime" => Some(1.0 / model.bg_rate),
            "beta1_over_v" => Some(model.b1),
            "b2_event" => Some(model.b2),
            "beta2_over_v" => Some(2.0 * model.b2),
            "beta_total_over_v" => Some(model.b1 + 2.0 * model.b2),
            "cal_per_atom_rate" => Some(c.acquisition.per_atom_rate),
            "cal_bg_rate" => Some(c.acquisition.bg_rate),
            _ => None,
        }
    };
    let mut rows = fit_rows(ctx, &run.fit, &run.detected)?;
    rows.extend(calibration_rows(&run.calibration));
    rows.extend(detection_report_rows(&run.detection));
    rows.extend(comparison_rows(&run.comparison));
    let rows: Vec<ReportRow> = rows
        .into_iter()
        .map(|r| match truth(&r.parameter) {
            Some(t) => r.with_truth(t),
            None => r,
        })
        .collect();
    let path = ctx.write("recovery.csv", &report_to_csv(&rows)?)?;
    println!("{}", path.display());
    println!("{:<20} {:>12} {:>12} {:>12} {:>8}", "parameter", "injected", "recovered", "sigma", "pull");
    for r in rows.iter().filter(|r| r.truth.is_some() && r.sigma > 0.0) {
        println!(
            "{:<20} {:>12.5e} {:>12.5e} {:>12.2e} {:>8.2}",
            r.parameter,
            r.truth.unwrap_or(f64::NAN),
            r.value,
            r.sigma,
            r.pull().unwrap_or(f64::NAN)
        );
    }
    println!(
        "event recovery {:.4}, coincident loss2 {}/{}",
        run.comparison.recovery(),
        run.comparison.coincident_loss2,
        run.comparison.detected_losses
    );

    if c.scan.enabled {
        let sc = &c.scenario;
        let scan = repump_scan(sc, &c.acquisition, &c.scan.s0, c.scan.dr0, c.seed)?;
        let points: Vec<Vec<f64>> = scan
            .points
            .iter()
            .map(|p| vec![p.s0, p.hcc_suppression, p.injected, p.recovered.value, p.recovered.sigma])
            .collect();
        ctx.write(
            "scan.csv",
            &table_to_csv(
                &["s0", "p_hcc", "injected_beta2_over_v_hz", "beta2_over_v_hz", "sigma_hz"],
                &points,
            )?,
        )?;
        let d = &scan.decay;
        let mut decay_row = ReportRow::new("decay_constant", d.decay.value, d.decay.sigma, "1");
        if sc.rates.is_none() {
            decay_row = decay_row.with_truth(scaling_constant(sc.trap.temperature, &sc.consts)?);
        }
        let mut rows = vec![
            ReportRow::new("offset", d.offset.value, d.offset.sigma, "1/s"),
            ReportRow::new("amplitude", d.amplitude.value, d.amplitude.sigma, "1/s"),
            decay_row,
            ReportRow::new("chi2", d.chi2, 0.0, "1"),
            ReportRow::new("dof", d.dof as f64, 0.0, "1"),
            ReportRow::new("temperature", scan.temperature.value * 1e6, scan.temperature.sigma * 1e6, "uK")
                .with_truth(sc.trap.temperature * 1e6),
        ];
        let mut beta = ReportRow::new("beta_hcc", scan.beta_hcc.value, scan.beta_hcc.sigma, "cm3/s");
        if let Some(t) = scan.injected_beta_hcc() {
            beta = beta.with_truth(t);
        }
        rows.push(beta);
        let path = ctx.write("scan_fit.csv", &report_to_csv(&rows)?)?;
        println!(
            "{}: A = {:.2}±{:.2}, T = {:.0}±{:.0} uK, beta_HCC = {:.2e}±{:.1e} cm3/s",
            path.display(),
            d.decay.value,
            d.decay.sigma,
            scan.temperature.value * 1e6,
            scan.temperature.sigma * 1e6,
            scan.beta_hcc.value,
            scan.beta_hcc.sigma
        );
    }
    Ok(())
}
