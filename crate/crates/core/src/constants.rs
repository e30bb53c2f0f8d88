//! Physical constants for cesium and the handful of unit conversions the
//! rest of the crate needs. Everything is SI internally; per-atom energies
//! are kept as temperatures (kelvin) and multiplied by `k_b` on use.

use std::f64::consts::PI;

use crate::error::{ensure, Result};

/// Boltzmann constant (J/K), exact SI value.
pub const K_B: f64 = 1.380649e-23;
/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054571817e-34;
/// Planck constant (J·s), exact SI value.
pub const H_PLANCK: f64 = 6.62607015e-34;
/// Hartree energy (J), CODATA 2018.
pub const HARTREE: f64 = 4.3597447222071e-18;
/// Bohr radius (m), CODATA 2018.
pub const BOHR_RADIUS: f64 = 5.29177210903e-11;
/// Bohr magneton (J/T).
pub const BOHR_MAGNETON: f64 = 9.2740100783e-24;
/// Atomic mass unit (kg).
pub const AMU: f64 = 1.66053906660e-27;

/// 1 G/cm in T/m.
pub const GAUSS_PER_CM: f64 = 1e-2;
/// 1 mW/cm² in W/m².
pub const MW_PER_CM2: f64 = 10.0;
/// 1 cm³ in m³.
pub const CM3: f64 = 1e-6;

/// Constant table for one atomic species. Immutable after construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysConstants {
    /// Natural linewidth Γ (rad/s).
    pub gamma: f64,
    /// Cooling transition wavelength (m).
    pub lambda: f64,
    /// Atomic mass (kg).
    pub mass: f64,
    pub k_b: f64,
    pub hbar: f64,
    /// Doppler temperature T_D (K), stored value.
    pub doppler_temp: f64,
    /// Kinetic energy released per atom by a hyperfine-changing collision (K).
    pub e_hcc_per_atom: f64,
    /// Kinetic energy released per atom by a fine-structure-changing collision (K).
    pub e_fcc_per_atom: f64,
    /// Resonant dipole coefficient of the repulsive S+P curve (J·m³).
    pub c3: f64,
    /// Saturation intensity (W/m²).
    pub i_sat: f64,
}

impl PhysConstants {
    /// Cesium D2 defaults.
    pub fn cesium() -> Self {
        Self {
            gamma: 2.0 * PI * 5.2e6,
            lambda: 852.35e-9,
            mass: 132.905451961 * AMU,
            k_b: K_B,
            hbar: HBAR,
            doppler_temp: 125e-6,
            e_hcc_per_atom: 0.22,
            e_fcc_per_atom: 400.0,
            c3: 12.0 * HARTREE * BOHR_RADIUS.powi(3),
            i_sat: 1.1 * MW_PER_CM2,
        }
    }

    /// ħΓ/(2k_B), which should agree with the stored `doppler_temp`.
    pub fn doppler_temp_from_gamma(&self) -> f64 {
        self.hbar * self.gamma / (2.0 * self.k_b)
    }

    /// Reduced mass of an identical pair.
    pub fn pair_reduced_mass(&self) -> f64 {
        self.mass / 2.0
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.lambda
    }

    pub fn kelvin_to_joule(&self, t: f64) -> f64 {
        t * self.k_b
    }

    pub fn joule_to_kelvin(&self, e: f64) -> f64 {
        e / self.k_b
    }

    /// Most probable relative speed scale √(2 k_B T / μ) of a pair at temperature `t`.
    pub fn thermal_speed(&self, t: f64) -> Result<f64> {
        ensure("temperature", t, t >= 0.0, "must be non-negative")?;
        Ok((2.0 * self.k_b * t / self.pair_reduced_mass()).sqrt())
    }

    /// Single-photon recoil speed ħk/m.
    pub fn recoil_speed(&self) -> f64 {
        self.hbar * self.wavenumber() / self.mass
    }
}

impl Default for PhysConstants {
    fn default() -> Self {
        Self::cesium()
    }
}

/// Converts a C₃ coefficient from atomic units (E_h·a₀³) to J·m³.
pub fn c3_to_si(c3_au: f64) -> Result<f64> {
    ensure("c3_au", c3_au, c3_au > 0.0, "must be positive")?;
    Ok(c3_au * HARTREE * BOHR_RADIUS.powi(3))
}

/// Inverse of [`c3_to_si`].
pub fn c3_to_au(c3_si: f64) -> f64 {
    c3_si / (HARTREE * BOHR_RADIUS.powi(3))
}
