//! Binned photon-count fluorescence traces synthesized from an event log.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{ensure, Result};
use crate::rng;
use crate::sim::EventLog;

#[derive(Debug, Clone, PartialEq)]
pub struct FluorescenceTrace {
    /// Integration time per bin (s).
    pub bin_width: f64,
    pub counts: Vec<u64>,
    /// Detected photon rate per trapped atom (counts/s).
    pub per_atom_rate: f64,
    /// Stray-light rate with an empty trap (counts/s).
    pub bg_rate: f64,
    pub seed: u64,
}

impl FluorescenceTrace {
    pub fn t_start(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width
    }

    pub fn duration(&self) -> f64 {
        self.counts.len() as f64 * self.bin_width
    }

    /// Level spacing over shot noise at the mean count level.
    pub fn level_snr(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        let mean = self.counts.iter().sum::<u64>() as f64 / self.counts.len() as f64;
        self.per_atom_rate * self.bin_width / mean.max(1.0).sqrt()
    }
}

/// Time-averaged atom number within each bin of width `bin_width`.
pub fn bin_mean_atoms(log: &EventLog, bin_width: f64) -> Result<Vec<f64>> {
    ensure("bin_width", bin_width, bin_width > 0.0, "must be positive")?;
    let bins = (log.duration / bin_width).ceil() as usize;
    let mut acc = vec![0.0; bins];
    for (a, b, n) in log.segments() {
        if n == 0 || b <= a {
            continue;
        }
        let first = ((a / bin_width).floor() as usize).min(bins - 1);
        let last = ((b / bin_width).ceil() as usize).min(bins);
        for (i, slot) in acc.iter_mut().enumerate().take(last).skip(first) {
            let lo = (i as f64 * bin_width).max(a);
            let hi = ((i + 1) as f64 * bin_width).min(b);
            if hi > lo {
                *slot += n as f64 * (hi - lo);
            }
        }
    }
    let last_width = log.duration - (bins - 1) as f64 * bin_width;
    for (i, v) in acc.iter_mut().enumerate() {
        let width = if i + 1 == bins { last_width } else { bin_width };
        *v /= width;
    }
    Ok(acc)
}

/// Mean counts per bin, bin_width·(bg + per_atom·N̄).
pub fn expected_counts(log: &EventLog, per_atom_rate: f64, bg_rate: f64, bin_width: f64) -> Result<Vec<f64>> {
    ensure("per_atom_rate", per_atom_rate, per_atom_rate >= 0.0, "must be non-negative")?;
    ensure("bg_rate", bg_rate, bg_rate >= 0.0, "must be non-negative")?;
    Ok(bin_mean_atoms(log, bin_width)?
        .into_iter()
        .map(|n| bin_width * (bg_rate + per_atom_rate * n))
        .collect())
}

/// Poisson photon counts for the staircase in `log`.
pub fn synthesize(
    log: &EventLog,
    per_atom_rate: f64,
    bg_rate: f64,
    bin_width: f64,
    seed: u64,
) -> Result<FluorescenceTrace> {
    let means = expected_counts(log, per_atom_rate, bg_rate, bin_width)?;
    let mut rng = rng::stream(seed, rng::stage::SYNTHESIZE);
    let counts = means.iter().map(|&m| poisson(&mut rng, m)).collect();
    Ok(FluorescenceTrace {
        bin_width,
        counts,
        per_atom_rate,
        bg_rate,
        seed,
    })
}

/// Trace with every bin at its rounded mean, no shot noise.
pub fn synthesize_noiseless(
    log: &EventLog,
    per_atom_rate: f64,
    bg_rate: f64,
    bin_width: f64,
) -> Result<FluorescenceTrace> {
    let counts = expected_counts(log, per_atom_rate, bg_rate, bin_width)?
        .into_iter()
        .map(|m| m.round() as u64)
        .collect();
    Ok(FluorescenceTrace {
        bin_width,
        counts,
        per_atom_rate,
        bg_rate,
        seed: 0,
    })
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map_or(0, |d| d.sample(rng) as u64)
}
