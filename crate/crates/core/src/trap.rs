//! Trap operating point and the geometric/mechanical quantities derived from it.

use std::f64::consts::PI;

use crate::constants::{PhysConstants, BOHR_MAGNETON, GAUSS_PER_CM, MW_PER_CM2};
use crate::error::{ensure, Result};

/// Which trap axis is the deep one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeepAxis {
    /// Deepest along the coil (z) axis: ΔU ∝ 1 + (a−1)cos²θ.
    #[default]
    Axial,
    /// Deepest in the radial plane: ΔU ∝ 1 + (a−1)sin²θ.
    Radial,
}

/// One trap operating point. SI units except where noted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapConfig {
    /// Cooling laser detuning in units of Γ (negative = red).
    pub detuning: f64,
    /// Total cooling intensity summed over the six beams (W/m²).
    pub intensity_total: f64,
    /// Repump saturation parameter s₀.
    pub repump_sat: f64,
    /// Axial field gradient dB_z/dz (T/m).
    pub gradient: f64,
    /// 1/e² Gaussian cloud radius (m).
    pub r0: f64,
    /// Cloud temperature (K).
    pub temperature: f64,
    /// Fixed shallowest-direction depth (K). `None` derives it from the force model.
    pub depth_min: Option<f64>,
    /// Deepest / shallowest depth ratio.
    pub depth_anisotropy: f64,
    pub deep_axis: DeepAxis,
    /// Geometric calibration factor of the depth model.
    pub kappa_geom: f64,
    /// Effective magnetic moment of the depth model (J/T).
    pub moment: f64,
    /// Load rate R (atoms/s).
    pub load_rate: f64,
    /// Background-gas collision lifetime τ (s).
    pub bg_lifetime: f64,
}

impl Default for TrapConfig {
    fn default() -> Self {
        Self {
            detuning: -3.35,
            intensity_total: 42.0 * MW_PER_CM2,
            repump_sat: 4.0,
            gradient: 375.0 * GAUSS_PER_CM,
            r0: 10e-6,
            temperature: 316e-6,
            depth_min: None,
            depth_anisotropy: 4.0,
            deep_axis: DeepAxis::Axial,
            kappa_geom: 0.447,
            moment: BOHR_MAGNETON,
            load_rate: 0.05,
            bg_lifetime: 60.0,
        }
    }
}

impl TrapConfig {
    pub fn validate(&self) -> Result<()> {
        ensure("trap.r0", self.r0, self.r0 > 0.0, "must be positive")?;
        ensure("trap.gradient", self.gradient, self.gradient > 0.0, "must be positive")?;
        ensure(
            "trap.depth_anisotropy",
            self.depth_anisotropy,
            self.depth_anisotropy >= 1.0,
            "must be at least 1",
        )?;
        ensure("trap.repump_sat", self.repump_sat, self.repump_sat >= 0.0, "must be non-negative")?;
        ensure("trap.bg_lifetime", self.bg_lifetime, self.bg_lifetime > 0.0, "must be positive")?;
        ensure("trap.load_rate", self.load_rate, self.load_rate >= 0.0, "must be non-negative")?;
        ensure(
            "trap.intensity_total",
            self.intensity_total,
            self.intensity_total >= 0.0,
            "must be non-negative",
        )?;
        ensure("trap.temperature", self.temperature, self.temperature >= 0.0, "must be non-negative")?;
        ensure("trap.detuning", self.detuning, self.detuning.is_finite(), "must be finite")?;
        ensure("trap.kappa_geom", self.kappa_geom, self.kappa_geom > 0.0, "must be positive")?;
        ensure("trap.moment", self.moment, self.moment > 0.0, "must be positive")?;
        if let Some(d) = self.depth_min {
            ensure("trap.depth_min", d, d > 0.0, "must be positive")?;
        }
        Ok(())
    }
}

/// Cooling-laser saturation parameter (I/I_S)/(1+(2δ/Γ)²) from the total intensity.
pub fn saturation_parameter(config: &TrapConfig, i_sat: f64) -> Result<f64> {
    ensure("i_sat", i_sat, i_sat > 0.0, "must be positive")?;
    let det = 2.0 * config.detuning;
    Ok(config.intensity_total / i_sat / (1.0 + det * det))
}

/// Effective trapping volume (π/2)^{3/2} r0³ (m³).
pub fn effective_volume(r0: f64) -> Result<f64> {
    ensure("r0", r0, r0 > 0.0, "must be positive")?;
    Ok((PI / 2.0).powf(1.5) * r0.powi(3))
}

/// Two-body event-rate multiplier when the gradient goes from `g1` to `g2`.
pub fn pair_rate_gradient_scaling(g1: f64, g2: f64) -> Result<f64> {
    Ok(density_gradient_scaling(g1, g2)?.powi(2))
}

/// Peak-density multiplier, (g2/g1)^{3/2}.
pub fn density_gradient_scaling(g1: f64, g2: f64) -> Result<f64> {
    ensure("g1", g1, g1 > 0.0, "must be positive")?;
    ensure("g2", g2, g2 > 0.0, "must be positive")?;
    Ok((g2 / g1).powf(1.5))
}

/// Direction-dependent recapture depth, resolved once per operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthProfile {
    /// Shallowest-direction depth (K).
    pub min: f64,
    pub anisotropy: f64,
    pub axis: DeepAxis,
}

impl DepthProfile {
    pub fn new(config: &TrapConfig, consts: &PhysConstants) -> Result<Self> {
        config.validate()?;
        let min = match config.depth_min {
            Some(d) => d,
            None => force_model_min_depth(config, consts)?,
        };
        Ok(Self {
            min,
            anisotropy: config.depth_anisotropy,
            axis: config.deep_axis,
        })
    }

    pub fn max(&self) -> f64 {
        self.min * self.anisotropy
    }

    /// Depth for an escape direction with cos²(polar angle) = `cos2`.
    fn at_cos2(&self, cos2: f64) -> f64 {
        let weight = match self.axis {
            DeepAxis::Axial => cos2,
            DeepAxis::Radial => 1.0 - cos2,
        };
        self.min * (1.0 + (self.anisotropy - 1.0) * weight)
    }

    pub fn at_angle(&self, polar_angle: f64) -> f64 {
        let c = polar_angle.cos();
        self.at_cos2(c * c)
    }

    /// Depth along an arbitrary (not necessarily normalized) direction.
    pub fn along(&self, dir: [f64; 3]) -> f64 {
        let norm2 = dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2];
        self.at_cos2(dir[2] * dir[2] / norm2)
    }
}

// ΔU_min = κ · F_max · d_eff, with the deceleration length taken along the
// shallow direction where the field gradient is B'/2 (radial) or B' (axial).
fn force_model_min_depth(config: &TrapConfig, consts: &PhysConstants) -> Result<f64> {
    let s = saturation_parameter(config, consts.i_sat)?;
    let hbar_gamma = consts.hbar * consts.gamma;
    let f_max = 0.5 * consts.hbar * consts.wavenumber() * consts.gamma * s / (1.0 + s);
    let shallow_gradient = match config.deep_axis {
        DeepAxis::Axial => config.gradient / 2.0,
        DeepAxis::Radial => config.gradient,
    };
    let d_eff = hbar_gamma * (1.0 + s).sqrt() / (config.moment * shallow_gradient);
    Ok(consts.joule_to_kelvin(config.kappa_geom * f_max * d_eff))
}

/// Recapture depth (K) for an escape at `polar_angle` from the z axis.
pub fn trap_depth(config: &TrapConfig, consts: &PhysConstants, polar_angle: f64) -> Result<f64> {
    ensure(
        "polar_angle",
        polar_angle,
        (0.0..=PI).contains(&polar_angle),
        "must lie in [0, π]",
    )?;
    Ok(DepthProfile::new(config, consts)?.at_angle(polar_angle))
}

/// Number of resonant photons needed to stop an atom carrying `energy` (K).
pub fn photons_to_stop(consts: &PhysConstants, energy: f64) -> Result<f64> {
    ensure("energy", energy, energy >= 0.0, "must be non-negative")?;
    let v = (2.0 * consts.k_b * energy / consts.mass).sqrt();
    Ok(v / consts.recoil_speed())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cs() -> PhysConstants {
        PhysConstants::cesium()
    }

    #[test]
    fn saturation_fig2_operating_point() {
        let s = saturation_parameter(&TrapConfig::default(), cs().i_sat).unwrap();
        // (42/1.1)/(1+6.7^2)
        assert_relative_eq!(s, 0.83198, max_relative = 1e-4);
        assert!((s - 0.87).abs() < 0.05);
    }

    #[test]
    fn saturation_limits() {
        let i_sat = cs().i_sat;
        let unit = TrapConfig {
            intensity_total: i_sat,
            detuning: 0.0,
            ..TrapConfig::default()
        };
        assert_relative_eq!(saturation_parameter(&unit, i_sat).unwrap(), 1.0);
        let far = TrapConfig {
            detuning: -1e6,
            ..TrapConfig::default()
        };
        assert!(saturation_parameter(&far, i_sat).unwrap() < 1e-10);
        assert!(saturation_parameter(&unit, 0.0).is_err());
    }

    #[test]
    fn volume_values() {
        let v = effective_volume(10e-6).unwrap();
        assert_relative_eq!(v * 1e6, 1.9687e-9, max_relative = 1e-4);
        assert_relative_eq!(effective_volume(20e-6).unwrap(), 8.0 * v, max_relative = 1e-12);
        assert!(effective_volume(7e-6).unwrap() < effective_volume(24e-6).unwrap());
        assert!(effective_volume(0.0).is_err());
    }

    #[test]
    fn gradient_scalings() {
        assert_eq!(pair_rate_gradient_scaling(3.75, 3.75).unwrap(), 1.0);
        assert_relative_eq!(pair_rate_gradient_scaling(1.0, 2.0).unwrap(), 8.0, max_relative = 1e-12);
        assert_relative_eq!(
            pair_rate_gradient_scaling(375.0, 800.0).unwrap(),
            9.7090,
            max_relative = 1e-4
        );
        assert_relative_eq!(density_gradient_scaling(1.0, 4.0).unwrap(), 8.0, max_relative = 1e-12);
        assert!(pair_rate_gradient_scaling(0.0, 1.0).is_err());
    }

    #[test]
    fn default_depth_is_below_hcc_energy() {
        let cfg = TrapConfig::default();
        let profile = DepthProfile::new(&cfg, &cs()).unwrap();
        assert!((profile.min - 0.05).abs() < 0.005, "min depth {}", profile.min);
        assert!(profile.max() < cs().e_hcc_per_atom);
    }

    #[test]
    fn depth_anisotropy_and_gradient_scaling() {
        let cfg = TrapConfig::default();
        let c = cs();
        let axial = trap_depth(&cfg, &c, 0.0).unwrap();
        let radial = trap_depth(&cfg, &c, PI / 2.0).unwrap();
        assert_relative_eq!(axial / radial, 4.0, max_relative = 1e-12);

        let steep = TrapConfig {
            gradient: 2.0 * cfg.gradient,
            ..cfg
        };
        let a = DepthProfile::new(&cfg, &c).unwrap().min;
        let b = DepthProfile::new(&steep, &c).unwrap().min;
        assert_relative_eq!(b, a / 2.0, max_relative = 1e-12);

        assert!(trap_depth(&cfg, &c, -0.1).is_err());
        assert!(trap_depth(&cfg, &c, 4.0).is_err());
    }

    #[test]
    fn radial_deep_axis_flips_orientation() {
        let cfg = TrapConfig {
            deep_axis: DeepAxis::Radial,
            depth_min: Some(0.1),
            ..TrapConfig::default()
        };
        let c = cs();
        assert_relative_eq!(trap_depth(&cfg, &c, PI / 2.0).unwrap(), 0.4, max_relative = 1e-12);
        assert_relative_eq!(trap_depth(&cfg, &c, 0.0).unwrap(), 0.1, max_relative = 1e-12);
    }

    #[test]
    fn photon_budget() {
        let c = cs();
        let n = photons_to_stop(&c, 0.1).unwrap();
        assert!((n - 1004.2).abs() < 1.0, "n = {n}");
        assert_eq!(photons_to_stop(&c, 0.0).unwrap(), 0.0);
        assert_relative_eq!(photons_to_stop(&c, 0.4).unwrap(), 2.0 * n, max_relative = 1e-12);
        assert!(photons_to_stop(&c, -0.1).is_err());
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let bad = [
            TrapConfig { r0: 0.0, ..Default::default() },
            TrapConfig { gradient: -1.0, ..Default::default() },
            TrapConfig { depth_anisotropy: 0.5, ..Default::default() },
            TrapConfig { bg_lifetime: 0.0, ..Default::default() },
            TrapConfig { load_rate: -1.0, ..Default::default() },
            TrapConfig { repump_sat: -0.1, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert!(TrapConfig::default().validate().is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn depth_is_antipodally_symmetric(theta in 0.0..PI, aniso in 1.0f64..8.0) {
                let cfg = TrapConfig { depth_anisotropy: aniso, ..TrapConfig::default() };
                let c = PhysConstants::cesium();
                let a = trap_depth(&cfg, &c, theta).unwrap();
                let b = trap_depth(&cfg, &c, PI - theta).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * a);
            }

            #[test]
            fn depth_extremes_ratio_is_anisotropy(aniso in 1.0f64..8.0) {
                let cfg = TrapConfig { depth_anisotropy: aniso, ..TrapConfig::default() };
                let c = PhysConstants::cesium();
                let depths: Vec<f64> = (0..=180)
                    .map(|i| trap_depth(&cfg, &c, PI * i as f64 / 180.0).unwrap())
                    .collect();
                let max = depths.iter().cloned().fold(f64::MIN, f64::max);
                let min = depths.iter().cloned().fold(f64::MAX, f64::min);
                prop_assert!((max / min - aniso).abs() < 1e-9);
            }

            #[test]
            fn volume_monotone(a in 1e-6f64..1e-4, b in 1e-6f64..1e-4) {
                prop_assume!(a < b);
                prop_assert!(effective_volume(a).unwrap() < effective_volume(b).unwrap());
            }

            #[test]
            fn saturation_decreasing_in_detuning_and_linear_in_intensity(
                d1 in 0.0f64..20.0, dd in 1e-3f64..5.0, i in 1.0f64..1000.0
            ) {
                let i_sat = PhysConstants::cesium().i_sat;
                let near = TrapConfig { detuning: -d1, intensity_total: i, ..TrapConfig::default() };
                let far = TrapConfig { detuning: -(d1 + dd), ..near };
                prop_assert!(saturation_parameter(&far, i_sat).unwrap() < saturation_parameter(&near, i_sat).unwrap());
                let doubled = TrapConfig { intensity_total: 2.0 * i, ..near };
                let ratio = saturation_parameter(&doubled, i_sat).unwrap() / saturation_parameter(&near, i_sat).unwrap();
                prop_assert!((ratio - 2.0).abs() < 1e-12);
            }
        }
    }
}
