//! Flat `section.key = value` run configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use coldcount_core::channels::{ChannelSet, ShieldingModel, ShieldingParams};
use coldcount_core::constants::{c3_to_si, PhysConstants, GAUSS_PER_CM, MW_PER_CM2};
use coldcount_core::detect::DetectOptions;
use coldcount_core::pipeline::{Acquisition, Scenario};
use coldcount_core::sim::RateModel;
use coldcount_core::trap::{DeepAxis, TrapConfig};

use crate::error::CliError;

pub const PRESETS: [(&str, &str); 4] = [
    ("fig2", include_str!("../presets/fig2.conf")),
    ("fig4a", include_str!("../presets/fig4a.conf")),
    ("fig4b", include_str!("../presets/fig4b.conf")),
    ("fig4c", include_str!("../presets/fig4c.conf")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Ordered layers of raw key/value pairs; later layers win.
#[derive(Debug, Default, Clone)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        let mut seen = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(CliError::Config(format!("{origin}:{}: empty key or value", i + 1)));
            }
            if seen.insert(k.to_string(), ()).is_some() {
                return Err(CliError::Config(format!("{origin}:{}: duplicate key `{k}`", i + 1)));
            }
            self.values.insert(k.to_string(), v.to_string());
        }
        Ok(())
    }

    pub fn set(&mut self, assignment: &str) -> Result<(), CliError> {
        self.merge_text(assignment, "--set")
    }
}

/// Key reader that remembers what was consumed so leftovers can be rejected.
struct Reader {
    values: BTreeMap<String, String>,
}

impl Reader {
    fn raw(&mut self, key: &str) -> Option<String> {
        self.values.remove(key)
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64, CliError> {
        Ok(self.opt_f64(key)?.unwrap_or(default))
    }

    fn opt_f64(&mut self, key: &str) -> Result<Option<f64>, CliError> {
        self.raw(key)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| CliError::Config(format!("`{key}`: `{v}` is not a finite number")))
            })
            .transpose()
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("`{key}`: `{v}` is not a non-negative integer"))),
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.raw(key).as_deref() {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(CliError::Config(format!("`{key}`: `{v}` is not a boolean"))),
        }
    }

    fn list(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>, CliError> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| CliError::Config(format!("`{key}`: `{s}` is not a finite number")))
                })
                .collect(),
        }
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }
}

#[derive(Debug, Clone)]
pub struct ScanConfig {
    pub enabled: bool,
    pub s0: Vec<f64>,
    /// Trap-radius uncertainty (m).
    pub dr0: f64,
}

#[derive(Debug, Clone)]
pub struct ShieldConfig {
    /// Temperatures (K).
    pub temperatures: Vec<f64>,
    pub s0: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct IoConfig {
    pub events: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub detected: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub acquisition: Acquisition,
    pub seed: u64,
    pub ensemble: usize,
    pub scan: ScanConfig,
    pub shield: ShieldConfig,
    /// Fixed truncation for the master-equation table; `None` grows it automatically.
    pub oracle_n_max: Option<usize>,
    pub io: IoConfig,
}

impl RunConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self, CliError> {
        let mut r = Reader { values: raw.values };
        let consts = PhysConstants::cesium();
        let td = TrapConfig::default();
        let depth_min = match r.raw("trap.depth_min_k").as_deref() {
            None | Some("auto") => None,
            Some(v) => Some(
                v.parse::<f64>()
                    .map_err(|_| CliError::Config(format!("`trap.depth_min_k`: `{v}` is not a number or `auto`")))?,
            ),
        };
        let deep_axis = match r.raw("trap.deep_axis").as_deref() {
            None | Some("axial") => DeepAxis::Axial,
            Some("radial") => DeepAxis::Radial,
            Some(v) => return Err(CliError::Config(format!("`trap.deep_axis`: `{v}` is not axial or radial"))),
        };
        let trap = TrapConfig {
            detuning: r.f64("trap.detuning_gamma", td.detuning)?,
            intensity_total: r.f64("trap.intensity_mw_cm2", td.intensity_total / MW_PER_CM2)? * MW_PER_CM2,
            repump_sat: r.f64("trap.repump_s0", td.repump_sat)?,
            gradient: r.f64("trap.gradient_g_cm", td.gradient / GAUSS_PER_CM)? * GAUSS_PER_CM,
            r0: r.f64("trap.r0_um", td.r0 * 1e6)? * 1e-6,
            temperature: r.f64("trap.temperature_uk", td.temperature * 1e6)? * 1e-6,
            depth_min,
            depth_anisotropy: r.f64("trap.depth_anisotropy", td.depth_anisotropy)?,
            deep_axis,
            kappa_geom: r.f64("trap.kappa_geom", td.kappa_geom)?,
            moment: td.moment,
            load_rate: r.f64("trap.load_rate_hz", td.load_rate)?,
            bg_lifetime: r.f64("trap.bg_lifetime_s", td.bg_lifetime)?,
        };
        trap.validate()?;

        let cd = ChannelSet::default();
        let channels = ChannelSet {
            beta_hcc: r.f64("channels.beta_hcc_cm3_s", cd.beta_hcc)?,
            beta_re: r.f64("channels.beta_re_cm3_s", cd.beta_re)?,
            beta_fcc: r.f64("channels.beta_fcc_cm3_s", cd.beta_fcc)?,
            re_energy_scale: r.f64("channels.re_energy_scale_k", cd.re_energy_scale)?,
            depth_jitter: r.f64("channels.depth_jitter", cd.depth_jitter)?,
            angular_spread: r.f64("channels.angular_spread_rad", cd.angular_spread)?,
        };
        channels.validate()?;
        let outcome_trials = r.u64("channels.outcome_trials", 200_000)? as usize;
        if outcome_trials == 0 {
            return Err(CliError::Config("`channels.outcome_trials` must be positive".into()));
        }

        let sd = ShieldingParams::default();
        let params = ShieldingParams {
            repump_detuning: r.f64("shielding.repump_detuning_ghz", sd.repump_detuning * 1e-9)? * 1e9,
            c3: c3_to_si(r.f64("shielding.c3_au", 12.0)?)?,
            rabi_coeff: r.f64("shielding.rabi_coeff", sd.rabi_coeff)?,
        };
        params.validate()?;
        let shielding = match r.raw("shielding.model").as_deref() {
            None | Some("landau_zener") => ShieldingModel::LandauZener(params),
            Some("scaling_law") => ShieldingModel::ScalingLaw,
            Some(v) => {
                return Err(CliError::Config(format!(
                    "`shielding.model`: `{v}` is not landau_zener or scaling_law"
                )))
            }
        };

        let rates = read_rates(&mut r, &trap)?;

        let ad = Acquisition::default();
        let od = DetectOptions::default();
        let acquisition = Acquisition {
            duration: r.f64("sim.duration_s", ad.duration)?,
            n0: u32::try_from(r.u64("sim.n0", 0)?).map_err(|_| CliError::Config("`sim.n0` too large".into()))?,
            per_atom_rate: r.f64("synth.per_atom_rate_hz", ad.per_atom_rate)?,
            bg_rate: r.f64("synth.bg_rate_hz", ad.bg_rate)?,
            bin_width: r.f64("synth.bin_width_s", ad.bin_width)?,
            detect: DetectOptions {
                min_snr: r.f64("detect.min_snr", od.min_snr)?,
                max_ambiguity: r.f64("detect.max_ambiguity", od.max_ambiguity)?,
            },
            self_calibrate: r.bool("detect.calibrate", true)?,
        };
        acquisition.validate()?;
        let seed = r.u64("sim.seed", 1)?;
        let ensemble = r.u64("sim.ensemble", 1)? as usize;
        if ensemble == 0 {
            return Err(CliError::Config("`sim.ensemble` must be at least 1".into()));
        }

        let scan = ScanConfig {
            enabled: r.bool("scan.enabled", false)?,
            s0: r.list("scan.s0", &[0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 25.0])?,
            dr0: r.f64("scan.dr0_um", 2.0)? * 1e-6,
        };
        if scan.s0.iter().any(|&s| s < 0.0) {
            return Err(CliError::Config("`scan.s0` values must be non-negative".into()));
        }
        let default_grid: Vec<f64> = (0..=50).map(f64::from).collect();
        let shield = ShieldConfig {
            temperatures: r
                .list("shield.temperatures_uk", &[125.0, 316.0, 705.0])?
                .into_iter()
                .map(|t| t * 1e-6)
                .collect(),
            s0: r.list("shield.s0", &default_grid)?,
        };
        if shield.temperatures.iter().any(|&t| t <= 0.0) || shield.s0.iter().any(|&s| s < 0.0) {
            return Err(CliError::Config(
                "`shield.temperatures_uk` must be positive and `shield.s0` non-negative".into(),
            ));
        }
        let oracle_n_max = match r.u64("oracle.n_max", 0)? {
            0 => None,
            n => Some(n as usize),
        };
        let io = IoConfig {
            events: r.path("io.events"),
            trace: r.path("io.trace"),
            detected: r.path("io.detected"),
        };

        if let Some(k) = r.values.keys().next() {
            return Err(CliError::Config(format!("unknown key `{k}`")));
        }
        Ok(Self {
            scenario: Scenario {
                trap,
                channels,
                shielding,
                consts,
                outcome_trials,
                rates,
            },
            acquisition,
            seed,
            ensemble,
            scan,
            shield,
            oracle_n_max,
            io,
        })
    }
}

/// Direct chain rates; any `rates.*` key switches them on.
fn read_rates(r: &mut Reader, trap: &TrapConfig) -> Result<Option<RateModel>, CliError> {
    let load = r.opt_f64("rates.load_rate_hz")?;
    let bg = r.opt_f64("rates.bg_rate_hz")?;
    let b1 = r.opt_f64("rates.b1_hz")?;
    let b2 = r.opt_f64("rates.b2_hz")?;
    let target = r.opt_f64("rates.target_mean")?;
    if [load, bg, b1, b2, target].iter().all(Option::is_none) {
        return Ok(None);
    }
    if load.is_some() && target.is_some() {
        return Err(CliError::Config(
            "`rates.load_rate_hz` and `rates.target_mean` are mutually exclusive".into(),
        ));
    }
    let mut model = RateModel {
        load_rate: load.unwrap_or(trap.load_rate),
        bg_rate: bg.unwrap_or(1.0 / trap.bg_lifetime),
        b1: b1.unwrap_or(0.0),
        b2: b2.unwrap_or(0.0),
    };
    model.validate()?;
    if let Some(t) = target {
        model.load_rate = coldcount_core::pipeline::load_rate_for_mean(&model, t)?;
    }
    Ok(Some(model))
}
