//! Exoergic two-body loss channels, optical shielding of ground-state
//! collisions by the repump field, and the map from a collision to the
//! number of atoms it ejects.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::constants::{PhysConstants, HBAR, H_PLANCK};
use crate::error::{ensure, Result};
use crate::quad::adaptive_simpson;
use crate::rng::{self, SimRng};
use crate::trap::{DepthProfile, TrapConfig};

/// Intrinsic rate coefficients and energy models for the three channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSet {
    /// Unshielded hyperfine-changing rate coefficient (cm³/s).
    pub beta_hcc: f64,
    /// Radiative-escape rate coefficient (cm³/s).
    pub beta_re: f64,
    /// Fine-structure-changing rate coefficient (cm³/s).
    pub beta_fcc: f64,
    /// Mean per-atom energy E₀ of the radiative-escape distribution (K).
    pub re_energy_scale: f64,
    /// Relative per-atom fluctuation of the recapture depth.
    pub depth_jitter: f64,
    /// Deviation of the partner's escape direction from exact counterpropagation (rad).
    pub angular_spread: f64,
}

impl Default for ChannelSet {
    fn default() -> Self {
        Self {
            beta_hcc: 4.1e-11,
            beta_re: 1.5e-11,
            beta_fcc: 0.5e-11,
            re_energy_scale: 0.43,
            depth_jitter: 0.03,
            angular_spread: 0.6,
        }
    }
}

impl ChannelSet {
    pub fn validate(&self) -> Result<()> {
        ensure("channels.beta_hcc", self.beta_hcc, self.beta_hcc >= 0.0, "must be non-negative")?;
        ensure("channels.beta_re", self.beta_re, self.beta_re >= 0.0, "must be non-negative")?;
        ensure("channels.beta_fcc", self.beta_fcc, self.beta_fcc >= 0.0, "must be non-negative")?;
        ensure(
            "channels.re_energy_scale",
            self.re_energy_scale,
            self.re_energy_scale > 0.0,
            "must be positive",
        )?;
        ensure(
            "channels.depth_jitter",
            self.depth_jitter,
            (0.0..0.2).contains(&self.depth_jitter),
            "must lie in [0, 0.2)",
        )?;
        ensure(
            "channels.angular_spread",
            self.angular_spread,
            (0.0..PI / 2.0).contains(&self.angular_spread),
            "must lie in [0, π/2)",
        )
    }

    pub fn beta(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Hcc => self.beta_hcc,
            Channel::Re => self.beta_re,
            Channel::Fcc => self.beta_fcc,
        }
    }
}

/// Repump-field dressing of the ground-state collision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShieldingParams {
    /// Blue detuning of the repump from the S+P asymptote (Hz).
    pub repump_detuning: f64,
    /// C₃ of the repulsive curve V(R) = +C₃/R³ (J·m³).
    pub c3: f64,
    /// χ in Ω = χ·Γ·√s₀.
    pub rabi_coeff: f64,
}

impl Default for ShieldingParams {
    fn default() -> Self {
        Self {
            repump_detuning: 9e9,
            c3: PhysConstants::cesium().c3,
            rabi_coeff: std::f64::consts::FRAC_1_SQRT_2,
        }
    }
}

impl ShieldingParams {
    pub fn validate(&self) -> Result<()> {
        ensure(
            "shielding.repump_detuning",
            self.repump_detuning,
            self.repump_detuning > 0.0,
            "must be positive",
        )?;
        ensure("shielding.c3", self.c3, self.c3 > 0.0, "must be positive")?;
        ensure("shielding.rabi_coeff", self.rabi_coeff, self.rabi_coeff > 0.0, "must be positive")
    }
}

/// How the repump field suppresses hyperfine-changing collisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShieldingModel {
    /// Thermal average of single-crossing Landau–Zener passage behind the ħΩ/2 barrier.
    LandauZener(ShieldingParams),
    /// Closed form exp(−s₀/A(T)).
    ScalingLaw,
}

impl Default for ShieldingModel {
    fn default() -> Self {
        ShieldingModel::LandauZener(ShieldingParams::default())
    }
}

impl ShieldingModel {
    pub fn suppression(&self, s0: f64, temperature: f64, consts: &PhysConstants) -> Result<f64> {
        match self {
            ShieldingModel::LandauZener(p) => suppression_ratio(s0, temperature, p, consts),
            ShieldingModel::ScalingLaw => scaling_law_suppression(s0, temperature, consts),
        }
    }
}

/// Radius where the repulsive curve +C₃/R³ reaches the repump photon offset h·Δ.
pub fn condon_radius(p: &ShieldingParams) -> Result<f64> {
    p.validate()?;
    Ok((p.c3 / (H_PLANCK * p.repump_detuning)).cbrt())
}

/// |d(ΔV)/dR| = 3C₃/R_C⁴ at the Condon point.
fn crossing_slope(p: &ShieldingParams) -> Result<f64> {
    let rc = condon_radius(p)?;
    Ok(3.0 * p.c3 / rc.powi(4))
}

/// Rabi frequency Ω = χ·Γ·√s₀ (rad/s).
pub fn rabi_frequency(s0: f64, p: &ShieldingParams, consts: &PhysConstants) -> f64 {
    p.rabi_coeff * consts.gamma * s0.sqrt()
}

/// Probability that a pair approaching at `v_rel` crosses R_C diabatically
/// and stays on the ground-state curve.
pub fn lz_pass_probability(v_rel: f64, omega: f64, p: &ShieldingParams) -> Result<f64> {
    ensure("v_rel", v_rel, v_rel > 0.0, "must be positive")?;
    ensure("omega", omega, omega >= 0.0, "must be non-negative")?;
    let slope = crossing_slope(p)?;
    Ok(lz_from_slope(v_rel, omega, slope))
}

fn lz_from_slope(v_rel: f64, omega: f64, slope: f64) -> f64 {
    let coupling = 0.5 * HBAR * omega;
    (-2.0 * PI * coupling * coupling / (HBAR * v_rel * slope)).exp()
}

/// Thermally averaged probability P_HCC that a pair reaches short range
/// with the repump at saturation `s0` and cloud temperature `temperature`.
///
/// Relative speeds along the collision axis follow the 1D Maxwell–Boltzmann
/// weight exp(−μv²/2k_BT), v > 0. Pairs with μv²/2 < ħΩ/2 are turned back
/// by the avoided-crossing barrier and contribute nothing.
pub fn suppression_ratio(
    s0: f64,
    temperature: f64,
    p: &ShieldingParams,
    consts: &PhysConstants,
) -> Result<f64> {
    Ok(ln_suppression_ratio(s0, temperature, p, consts)?.exp())
}

/// Natural log of [`suppression_ratio`], accurate deep into the suppressed regime.
pub fn ln_suppression_ratio(
    s0: f64,
    temperature: f64,
    p: &ShieldingParams,
    consts: &PhysConstants,
) -> Result<f64> {
    ensure("s0", s0, s0 >= 0.0, "must be non-negative")?;
    ensure("temperature", temperature, temperature > 0.0, "must be positive")?;
    p.validate()?;
    if s0 == 0.0 {
        return Ok(0.0);
    }
    let omega = rabi_frequency(s0, p, consts);
    let slope = crossing_slope(p)?;
    let kt = consts.k_b * temperature;
    // x = v / (σ√2) with σ² = k_BT/μ; barrier at x_b² = ħΩ/(2k_BT).
    let speed_unit = (2.0 * kt / consts.pair_reduced_mass()).sqrt();
    let xb = (consts.hbar * omega / (2.0 * kt)).sqrt();
    let integrand = |x: f64| {
        let u = x - xb;
        (-u * (x + xb)).exp() * lz_from_slope(x * speed_unit, omega, slope)
    };
    let scaled = adaptive_simpson(integrand, xb, xb + 8.0, 1e-13);
    Ok(-xb * xb + (2.0 / PI.sqrt() * scaled).ln())
}

/// Decay constant A(T) = 1 + ½(T/T_D)².
pub fn scaling_constant(temperature: f64, consts: &PhysConstants) -> Result<f64> {
    ensure("temperature", temperature, temperature >= 0.0, "must be non-negative")?;
    let t = temperature / consts.doppler_temp;
    Ok(1.0 + 0.5 * t * t)
}

/// exp(−s₀/A(T)).
pub fn scaling_law_suppression(s0: f64, temperature: f64, consts: &PhysConstants) -> Result<f64> {
    ensure("s0", s0, s0 >= 0.0, "must be non-negative")?;
    Ok((-s0 / scaling_constant(temperature, consts)?).exp())
}

/// A from an ordinary least-squares line through (s₀, ln P) pairs: A = −1/slope.
pub fn fit_decay_constant(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(crate::error::invalid("points", "need at least two points"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(crate::error::invalid("points", "all s0 values coincide"));
    }
    Ok(-sxx / sxy)
}

/// Per-atom kinetic energy (K) left by a radiative-escape collision.
pub fn re_energy_sample<R: Rng + ?Sized>(rng: &mut R, e0: f64) -> Result<f64> {
    ensure("e0", e0, e0 > 0.0, "must be positive")?;
    let exp = Exp::new(1.0 / e0).map_err(|e| crate::error::invalid("e0", e.to_string()))?;
    Ok(exp.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Hcc,
    Re,
    Fcc,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Hcc, Channel::Re, Channel::Fcc];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    None,
    OneAtom,
    TwoAtoms,
}

impl Outcome {
    pub fn atoms_lost(self) -> u32 {
        match self {
            Outcome::None => 0,
            Outcome::OneAtom => 1,
            Outcome::TwoAtoms => 2,
        }
    }
}

/// Samples collision outcomes for a fixed trap and channel set.
#[derive(Debug, Clone)]
pub struct OutcomeSampler {
    depth: DepthProfile,
    set: ChannelSet,
    consts: PhysConstants,
}

impl OutcomeSampler {
    pub fn new(trap: &TrapConfig, set: &ChannelSet, consts: &PhysConstants) -> Result<Self> {
        set.validate()?;
        Ok(Self {
            depth: DepthProfile::new(trap, consts)?,
            set: *set,
            consts: *consts,
        })
    }

    pub fn from_profile(depth: DepthProfile, set: &ChannelSet, consts: &PhysConstants) -> Result<Self> {
        set.validate()?;
        Ok(Self {
            depth,
            set: *set,
            consts: *consts,
        })
    }

    pub fn depth(&self) -> &DepthProfile {
        &self.depth
    }

    pub fn sample<R: Rng + ?Sized>(&self, channel: Channel, rng: &mut R) -> Outcome {
        let d1 = unit_vector(rng);
        let mut d2 = [-d1[0], -d1[1], -d1[2]];
        if self.set.angular_spread > 0.0 {
            for c in d2.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *c += self.set.angular_spread * g;
            }
        }
        let energy = match channel {
            Channel::Hcc => self.consts.e_hcc_per_atom,
            Channel::Fcc => self.consts.e_fcc_per_atom,
            Channel::Re => {
                // e0 was validated with the set
                Exp::new(1.0 / self.set.re_energy_scale)
                    .expect("validated energy scale")
                    .sample(rng)
            }
        };
        let escapes = [d1, d2]
            .iter()
            .filter(|d| {
                let eps: f64 = rng.sample(StandardNormal);
                energy > self.depth.along(**d) * (1.0 + self.set.depth_jitter * eps)
            })
            .count();
        match escapes {
            0 => Outcome::None,
            1 => Outcome::OneAtom,
            _ => Outcome::TwoAtoms,
        }
    }

    /// Monte Carlo outcome frequencies over `trials` collisions.
    pub fn probabilities<R: Rng + ?Sized>(
        &self,
        channel: Channel,
        trials: usize,
        rng: &mut R,
    ) -> OutcomeProbabilities {
        let mut counts = [0usize; 3];
        for _ in 0..trials {
            counts[self.sample(channel, rng).atoms_lost() as usize] += 1;
        }
        let n = trials.max(1) as f64;
        OutcomeProbabilities {
            none: counts[0] as f64 / n,
            one: counts[1] as f64 / n,
            two: counts[2] as f64 / n,
            trials,
        }
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Outcome of one collision in `channel`.
pub fn classify_outcome<R: Rng + ?Sized>(
    channel: Channel,
    trap: &TrapConfig,
    set: &ChannelSet,
    consts: &PhysConstants,
    rng: &mut R,
) -> Result<Outcome> {
    Ok(OutcomeSampler::new(trap, set, consts)?.sample(channel, rng))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeProbabilities {
    pub none: f64,
    pub one: f64,
    pub two: f64,
    pub trials: usize,
}

impl OutcomeProbabilities {
    /// Share of one-atom outcomes among loss-producing outcomes.
    pub fn one_atom_fraction(&self) -> f64 {
        let loss = self.one + self.two;
        if loss > 0.0 {
            self.one / loss
        } else {
            0.0
        }
    }
}

/// Effective one- and two-atom loss coefficients (cm³/s).
///
/// With V the effective volume, one-atom events fire at (β₁/V)·N(N−1) and
/// two-atom events at (β₂/(2V))·N(N−1), so Ṅ = R − N/τ − (β₁+β₂)N(N−1)/V.
/// A channel with collision coefficient β_c therefore contributes β_c·P_two
/// to β₂ and β_c·P_one/2 to β₁.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveBetas {
    pub beta1: f64,
    pub beta2: f64,
    /// P_HCC applied to the hyperfine-changing channel.
    pub hcc_suppression: f64,
    pub per_channel: [(Channel, OutcomeProbabilities); 3],
}

impl EffectiveBetas {
    pub fn total(&self) -> f64 {
        self.beta1 + self.beta2
    }
}

/// Combines channel rates, outcome probabilities and repump shielding.
pub fn effective_betas(
    trap: &TrapConfig,
    set: &ChannelSet,
    shielding: &ShieldingModel,
    consts: &PhysConstants,
    trials: usize,
    seed: u64,
) -> Result<EffectiveBetas> {
    let sampler = OutcomeSampler::new(trap, set, consts)?;
    let hcc_suppression = if set.beta_hcc > 0.0 {
        shielding.suppression(trap.repump_sat, trap.temperature, consts)?
    } else {
        1.0
    };
    let mut beta1 = 0.0;
    let mut beta2 = 0.0;
    let empty = OutcomeProbabilities {
        none: 1.0,
        one: 0.0,
        two: 0.0,
        trials: 0,
    };
    let mut per_channel = [(Channel::Hcc, empty), (Channel::Re, empty), (Channel::Fcc, empty)];
    for (k, channel) in Channel::ALL.into_iter().enumerate() {
        let mut beta = set.beta(channel);
        if channel == Channel::Hcc {
            beta *= hcc_suppression;
        }
        if set.beta(channel) == 0.0 {
            continue;
        }
        let mut r: SimRng = rng::stream(seed, rng::stage::CHANNELS + 16 * k as u64);
        let probs = sampler.probabilities(channel, trials, &mut r);
        beta1 += beta * probs.one / 2.0;
        beta2 += beta * probs.two;
        per_channel[k] = (channel, probs);
    }
    Ok(EffectiveBetas {
        beta1,
        beta2,
        hcc_suppression,
        per_channel,
    })
}
