//! End-to-end experiments: simulate → synthesize → detect → tabulate → fit,
//! and repump-intensity scans built from them.

use crate::channels::{effective_betas, Channel, ChannelSet, EffectiveBetas, ShieldingModel};
use crate::constants::{PhysConstants, CM3};
use crate::detect::{calibrate, compare_logs, detect, Calibration, Comparison, DetectOptions, DetectionReport};
use crate::error::{ensure, invalid, Result};
use crate::fit::{
    extrapolate_beta_hcc, fit_rates, fit_repump_decay, tabulate, DecayPoint, Estimate, EventRateTable, FitResult,
    SuppressionFit,
};
use crate::sim::{distribution_mean, member_seed, simulate, stationary_distribution, EventLog, RateModel};
use crate::trace::{synthesize, FluorescenceTrace};
use crate::trap::{effective_volume, TrapConfig};

/// Physical operating point from which the chain rates are derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub trap: TrapConfig,
    pub channels: ChannelSet,
    pub shielding: ShieldingModel,
    pub consts: PhysConstants,
    /// Monte Carlo trials per channel for the outcome probabilities.
    pub outcome_trials: usize,
    /// Direct chain rates replacing the channel-derived ones.
    pub rates: Option<RateModel>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            trap: TrapConfig::default(),
            channels: ChannelSet::default(),
            shielding: ShieldingModel::default(),
            consts: PhysConstants::cesium(),
            outcome_trials: 200_000,
            rates: None,
        }
    }
}

impl Scenario {
    pub fn volume_cm3(&self) -> Result<f64> {
        Ok(effective_volume(self.trap.r0)? / CM3)
    }

    /// Chain rates, with the channel decomposition when they were derived.
    pub fn rate_model(&self, seed: u64) -> Result<(RateModel, Option<EffectiveBetas>)> {
        self.trap.validate()?;
        if let Some(m) = self.rates {
            m.validate()?;
            return Ok((m, None));
        }
        self.channels.validate()?;
        let betas = effective_betas(
            &self.trap,
            &self.channels,
            &self.shielding,
            &self.consts,
            self.outcome_trials,
            seed,
        )?;
        let model = RateModel::from_betas(
            self.trap.load_rate,
            self.trap.bg_lifetime,
            betas.beta1,
            betas.beta2,
            self.volume_cm3()?,
        )?;
        Ok((model, Some(betas)))
    }
}

/// How a run is recorded and analysed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acquisition {
    /// Observation time (s).
    pub duration: f64,
    pub n0: u32,
    /// Detected photons per atom (counts/s).
    pub per_atom_rate: f64,
    /// Stray light (counts/s).
    pub bg_rate: f64,
    pub bin_width: f64,
    pub detect: DetectOptions,
    /// Estimate the count scale from the histogram instead of using the true one.
    pub self_calibrate: bool,
}

impl Default for Acquisition {
    fn default() -> Self {
        Self {
            duration: 1e5,
            n0: 0,
            per_atom_rate: 1e4,
            bg_rate: 500.0,
            bin_width: 0.1,
            detect: DetectOptions::default(),
            self_calibrate: true,
        }
    }
}

impl Acquisition {
    pub fn validate(&self) -> Result<()> {
        ensure("sim.duration", self.duration, self.duration > 0.0, "must be positive")?;
        ensure("synth.per_atom_rate", self.per_atom_rate, self.per_atom_rate > 0.0, "must be positive")?;
        ensure("synth.bg_rate", self.bg_rate, self.bg_rate >= 0.0, "must be non-negative")?;
        ensure("synth.bin_width", self.bin_width, self.bin_width > 0.0, "must be positive")?;
        ensure(
            "synth.bin_width",
            self.bin_width,
            self.bin_width <= self.duration,
            "must not exceed the duration",
        )
    }
}

/// Every stage of one closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub model: RateModel,
    pub truth: EventLog,
    pub trace: FluorescenceTrace,
    pub calibration: Calibration,
    pub detection: DetectionReport,
    pub detected: EventLog,
    pub comparison: Comparison,
    pub table: EventRateTable,
    pub fit: FitResult,
}

impl ClosedLoop {
    /// (name, injected, recovered) for the four chain parameters.
    pub fn parameters(&self) -> [(&'static str, f64, Estimate); 4] {
        let m = &self.model;
        [
            ("load_rate", m.load_rate, self.fit.load_rate),
            ("bg_rate", m.bg_rate, self.fit.bg_rate),
            ("beta1_over_v", m.b1, self.fit.b1),
            ("beta2_over_v", 2.0 * m.b2, self.fit.beta2_over_v),
        ]
    }
}

/// Runs one simulated experiment through detection and fitting.
pub fn closed_loop(model: &RateModel, acq: &Acquisition, seed: u64) -> Result<ClosedLoop> {
    acq.validate()?;
    let truth = simulate(model, acq.n0, acq.duration, seed)?;
    let trace = synthesize(&truth, acq.per_atom_rate, acq.bg_rate, acq.bin_width, seed)?;
    let calibration = if acq.self_calibrate {
        calibrate(&trace)?
    } else {
        Calibration::known(acq.per_atom_rate, acq.bg_rate)?
    };
    let det = detect(&trace, &calibration, &acq.detect)?;
    let comparison = compare_logs(&truth, &det.log, 1.5 * acq.bin_width);
    let table = tabulate(&det.log)?;
    let fit = fit_rates(&table)?;
    Ok(ClosedLoop {
        model: *model,
        truth,
        trace,
        calibration,
        detection: det.report,
        detected: det.log,
        comparison,
        table,
        fit,
    })
}

/// One repump setting of a scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub s0: f64,
    pub hcc_suppression: f64,
    /// Unshielded HCC coefficient times its two-atom probability (cm³/s),
    /// the quantity the zero-intensity extrapolation measures.
    pub injected_hcc: Option<f64>,
    /// Injected β₂ₐₜₒₘₛ/V (1/s).
    pub injected: f64,
    /// Recovered β₂ₐₜₒₘₛ/V (1/s).
    pub recovered: Estimate,
    pub detection: DetectionReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepumpScan {
    pub points: Vec<ScanPoint>,
    pub decay: SuppressionFit,
    /// Extrapolated unshielded coefficient (cm³/s).
    pub beta_hcc: Estimate,
    pub temperature: Estimate,
}

impl RepumpScan {
    /// Mean injected HCC two-atom coefficient over the scan (cm³/s).
    pub fn injected_beta_hcc(&self) -> Option<f64> {
        let v: Option<Vec<f64>> = self.points.iter().map(|p| p.injected_hcc).collect();
        v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Closed-loop runs over repump saturation values, a decay fit of the
/// recovered two-atom coefficient and the zero-intensity extrapolation.
///
/// `dr0` is the trap-radius uncertainty (m) folded into β_HCC.
pub fn repump_scan(scenario: &Scenario, acq: &Acquisition, s0_grid: &[f64], dr0: f64, seed: u64) -> Result<RepumpScan> {
    ensure("scan points", s0_grid.len() as f64, s0_grid.len() >= 4, "need at least 4")?;
    let run = |k: usize, s0: f64| -> Result<ScanPoint> {
        let mut sc = *scenario;
        sc.trap.repump_sat = s0;
        let member = member_seed(seed, k as u64);
        let (model, betas) = sc.rate_model(member)?;
        let lp = closed_loop(&model, acq, member)?;
        Ok(ScanPoint {
            s0,
            hcc_suppression: betas.map_or(1.0, |b| b.hcc_suppression),
            injected_hcc: betas.map(|b| {
                let two = b.per_channel.iter().find(|(c, _)| *c == Channel::Hcc).map_or(1.0, |(_, p)| p.two);
                sc.channels.beta_hcc * two
            }),
            injected: 2.0 * model.b2,
            recovered: lp.fit.beta2_over_v,
            detection: lp.detection,
        })
    };
    let points: Vec<ScanPoint> = std::thread::scope(|s| {
        let handles: Vec<_> = s0_grid
            .iter()
            .enumerate()
            .map(|(k, &s0)| s.spawn(move || run(k, s0)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scan worker panicked"))
            .collect::<Result<_>>()
    })?;
    let decay = fit_repump_decay(
        &points
            .iter()
            .map(|p| DecayPoint {
                s0: p.s0,
                rate: p.recovered.value,
                sigma: p.recovered.sigma,
            })
            .collect::<Vec<_>>(),
    )?;
    let beta_hcc = extrapolate_beta_hcc(&decay, scenario.trap.r0, dr0)?;
    let temperature = decay.temperature(&scenario.consts)?;
    Ok(RepumpScan {
        points,
        decay,
        beta_hcc,
        temperature,
    })
}

/// Load rate giving stationary mean `target` with the loss terms of `model` kept.
pub fn load_rate_for_mean(model: &RateModel, target: f64) -> Result<f64> {
    ensure("target mean", target, target > 0.0 && target.is_finite(), "must be positive")?;
    let mean = |r: f64| -> Result<f64> {
        let m = RateModel { load_rate: r, ..*model };
        Ok(distribution_mean(&stationary_distribution(&m)?))
    };
    let mut hi = 1.0;
    while mean(hi)? < target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(invalid("target mean", "not reachable with a load rate below 1e6/s"));
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
