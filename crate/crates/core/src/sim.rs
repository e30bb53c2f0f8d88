//! Atom-number dynamics as a continuous-time Markov chain: exact
//! next-event simulation and the stationary law of the master equation.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{ensure, Error, Result};
use crate::rng::{self, SimRng};

/// Transition rates of the atom-number chain.
///
/// At N atoms: load R (N→N+1), background N·bg_rate (N→N−1), one-atom
/// collisional b1·N(N−1) (N→N−1) and two-atom collisional b2·N(N−1) (N→N−2).
/// `b2` is the two-atom *event* coefficient; the atom flux is twice that, so
/// β₂ₐₜₒₘₛ/V = 2·b2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateModel {
    pub load_rate: f64,
    pub bg_rate: f64,
    pub b1: f64,
    pub b2: f64,
}

impl RateModel {
    pub fn validate(&self) -> Result<()> {
        ensure("load_rate", self.load_rate, self.load_rate >= 0.0, "must be non-negative")?;
        ensure("bg_rate", self.bg_rate, self.bg_rate >= 0.0, "must be non-negative")?;
        ensure("b1", self.b1, self.b1 >= 0.0, "must be non-negative")?;
        ensure("b2", self.b2, self.b2 >= 0.0, "must be non-negative")
    }

    /// Builds the chain from loss coefficients (cm³/s) and the effective volume (cm³).
    pub fn from_betas(load_rate: f64, bg_lifetime: f64, beta1: f64, beta2: f64, volume_cm3: f64) -> Result<Self> {
        ensure("bg_lifetime", bg_lifetime, bg_lifetime > 0.0, "must be positive")?;
        ensure("volume", volume_cm3, volume_cm3 > 0.0, "must be positive")?;
        let model = Self {
            load_rate,
            bg_rate: 1.0 / bg_lifetime,
            b1: beta1 / volume_cm3,
            b2: beta2 / (2.0 * volume_cm3),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn load(&self, _n: u32) -> f64 {
        self.load_rate
    }

    pub fn loss1(&self, n: u32) -> f64 {
        let n = n as f64;
        n * self.bg_rate + self.b1 * n * (n - 1.0).max(0.0)
    }

    pub fn loss2(&self, n: u32) -> f64 {
        let n = n as f64;
        self.b2 * n * (n - 1.0).max(0.0)
    }

    /// β/V = b1 + 2·b2, the coefficient of N(N−1) in the atom-number balance.
    pub fn beta_total_over_v(&self) -> f64 {
        self.b1 + 2.0 * self.b2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Load,
    Loss1,
    Loss2,
}

impl EventKind {
    pub fn delta(self) -> i64 {
        match self {
            EventKind::Load => 1,
            EventKind::Loss1 => -1,
            EventKind::Loss2 => -2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Load => "load",
            EventKind::Loss1 => "loss1",
            EventKind::Loss2 => "loss2",
        }
    }

    pub fn from_delta(delta: i64) -> Option<Self> {
        match delta {
            1 => Some(EventKind::Load),
            -1 => Some(EventKind::Loss1),
            -2 => Some(EventKind::Loss2),
            _ => None,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "load" => Ok(EventKind::Load),
            "loss1" => Ok(EventKind::Loss1),
            "loss2" => Ok(EventKind::Loss2),
            other => Err(Error::Format(format!("unknown event kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub n_before: u32,
}

impl Event {
    pub fn n_after(&self) -> u32 {
        (self.n_before as i64 + self.kind.delta()) as u32
    }
}

/// Time-ordered load/loss record together with the piecewise-constant N(t).
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub events: Vec<Event>,
    /// Atom number at t = 0.
    pub n0: u32,
    pub duration: f64,
    pub seed: u64,
}

impl EventLog {
    /// Checks ordering, bookkeeping and non-negativity.
    pub fn validate(&self) -> Result<()> {
        ensure("duration", self.duration, self.duration > 0.0, "must be positive")?;
        let mut n = self.n0 as i64;
        let mut last = f64::NEG_INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            if e.time <= last || e.time.is_nan() || e.time < 0.0 || e.time > self.duration {
                return Err(Error::Format(format!("event {i} at t={} out of order or range", e.time)));
            }
            if e.n_before as i64 != n {
                return Err(Error::Format(format!(
                    "event {i}: n_before={} but staircase is at {n}",
                    e.n_before
                )));
            }
            n += e.kind.delta();
            if n < 0 {
                return Err(Error::Format(format!("event {i} drives N negative")));
            }
            last = e.time;
        }
        Ok(())
    }

    pub fn n_final(&self) -> u32 {
        self.events.last().map_or(self.n0, Event::n_after)
    }

    /// Constant-N segments (start, end, N) covering [0, duration].
    pub fn segments(&self) -> Segments<'_> {
        Segments {
            log: self,
            index: 0,
            start: 0.0,
            n: self.n0,
            done: false,
        }
    }

    /// Atom number just after time `t`.
    pub fn n_at(&self, t: f64) -> u32 {
        match self.events.partition_point(|e| e.time <= t) {
            0 => self.n0,
            k => self.events[k - 1].n_after(),
        }
    }

    /// Time spent at each atom number, indexed by N.
    pub fn occupancy_times(&self) -> Vec<f64> {
        let mut occ = Vec::new();
        for (a, b, n) in self.segments() {
            let n = n as usize;
            if occ.len() <= n {
                occ.resize(n + 1, 0.0);
            }
            occ[n] += b - a;
        }
        occ
    }

    /// Time-weighted mean atom number.
    pub fn mean_n(&self) -> f64 {
        self.segments().map(|(a, b, n)| (b - a) * n as f64).sum::<f64>() / self.duration
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }
}

pub struct Segments<'a> {
    log: &'a EventLog,
    index: usize,
    start: f64,
    n: u32,
    done: bool,
}

impl Iterator for Segments<'_> {
    type Item = (f64, f64, u32);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.log.events.get(self.index) {
            Some(e) => {
                let seg = (self.start, e.time, self.n);
                self.start = e.time;
                self.n = e.n_after();
                self.index += 1;
                Some(seg)
            }
            None => {
                self.done = true;
                Some((self.start, self.log.duration, self.n))
            }
        }
    }
}

/// Exact next-event simulation of the chain over `[0, duration)`.
pub fn simulate(model: &RateModel, n0: u32, duration: f64, seed: u64) -> Result<EventLog> {
    let mut rng = rng::stream(seed, rng::stage::SIMULATE);
    simulate_with(model, n0, duration, seed, &mut rng)
}

fn simulate_with(model: &RateModel, n0: u32, duration: f64, seed: u64, rng: &mut SimRng) -> Result<EventLog> {
    model.validate()?;
    ensure("duration", duration, duration > 0.0 && duration.is_finite(), "must be positive and finite")?;
    let mut events = Vec::new();
    let mut n = n0;
    let mut t = 0.0;
    loop {
        let load = model.load(n);
        let bg = n as f64 * model.bg_rate;
        let coll1 = model.loss1(n) - bg;
        let coll2 = model.loss2(n);
        let total = load + bg + coll1 + coll2;
        if total <= 0.0 {
            break;
        }
        let wait: f64 = rng.sample(Exp1);
        let next = t + wait / total;
        if next >= duration {
            break;
        }
        if next <= t {
            // underflowed wait; no distinct event time is representable
            continue;
        }
        t = next;
        let pick = rng.random::<f64>() * total;
        let kind = if pick < load {
            EventKind::Load
        } else if pick < load + bg + coll1 {
            EventKind::Loss1
        } else {
            EventKind::Loss2
        };
        events.push(Event { time: t, kind, n_before: n });
        n = (n as i64 + kind.delta()) as u32;
    }
    Ok(EventLog {
        events,
        n0,
        duration,
        seed,
    })
}

/// Seed of ensemble member `index` under top-level `seed` (SplitMix64 finalizer).
pub fn member_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent trajectories run on scoped threads; member k uses [`member_seed`]`(seed, k)`.
pub fn simulate_ensemble(
    model: &RateModel,
    n0: u32,
    duration: f64,
    seed: u64,
    members: usize,
) -> Result<Vec<EventLog>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(members.max(1));
    let mut out: Vec<Option<Result<EventLog>>> = (0..members).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (w, chunk) in out.chunks_mut(members.div_ceil(workers).max(1)).enumerate() {
            let base = w * members.div_ceil(workers).max(1);
            scope.spawn(move || {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    let k = (base + i) as u64;
                    *slot = Some(simulate(model, n0, duration, member_seed(seed, k)));
                }
            });
        }
    });
    out.into_iter().map(|r| r.expect("every member simulated")).collect()
}

/// Stationary law of the chain truncated at `n_max` (loads from `n_max` blocked).
///
/// Every upward move is a single load, so global balance is equivalent to
/// flux balance across each cut k | k+1:
/// R·p_k = (loss1 + loss2)(k+1)·p_{k+1} + loss2(k+2)·p_{k+2},
/// solved downward from the top where the recursion is stable.
pub fn master_stationary(model: &RateModel, n_max: usize) -> Result<Vec<f64>> {
    model.validate()?;
    if n_max == 0 {
        return Err(crate::error::invalid("n_max", "must be at least 1"));
    }
    let mut p = vec![0.0; n_max + 1];
    if model.load_rate == 0.0 {
        p[0] = 1.0;
        return Ok(p);
    }
    p[n_max] = 1.0;
    for k in (0..n_max).rev() {
        let down1 = model.loss1(k as u32 + 1) + model.loss2(k as u32 + 1);
        let above2 = if k + 2 <= n_max {
            model.loss2(k as u32 + 2) * p[k + 2]
        } else {
            0.0
        };
        p[k] = (down1 * p[k + 1] + above2) / model.load_rate;
        if p[k] > 1e250 {
            for v in p[k..].iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let total: f64 = p.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::Singular("stationary vector does not normalize".into()));
    }
    for v in p.iter_mut() {
        *v /= total;
    }
    let boundary_mass = p[n_max];
    if boundary_mass >= 1e-12 {
        return Err(Error::Truncation { n_max, boundary_mass });
    }
    Ok(p)
}

/// [`master_stationary`] starting at `n_max = 64` and doubling until the
/// boundary mass drops below 1e-12 (gives up past 65536).
pub fn stationary_distribution(model: &RateModel) -> Result<Vec<f64>> {
    let mut n_max = 64;
    loop {
        match master_stationary(model, n_max) {
            Err(Error::Truncation { .. }) if n_max < 65_536 => n_max *= 2,
            other => return other,
        }
    }
}

/// Conditional event rates at atom number N.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedRates {
    pub n: u32,
    /// Stationary probability of N.
    pub probability: f64,
    pub load: f64,
    pub loss1: f64,
    pub loss2: f64,
}

pub fn expected_event_rates(p: &[f64], model: &RateModel) -> Vec<ExpectedRates> {
    p.iter()
        .enumerate()
        .map(|(n, &prob)| {
            let n = n as u32;
            ExpectedRates {
                n,
                probability: prob,
                load: model.load(n),
                loss1: model.loss1(n),
                loss2: model.loss2(n),
            }
        })
        .collect()
}

/// Mean of N under a probability vector.
pub fn distribution_mean(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(n, q)| n as f64 * q).sum()
}

/// Total-variation distance between two distributions on {0, 1, ...}.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    0.5 * (0..len)
        .map(|i| (p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// Time-weighted occupancy of a log as a probability vector.
pub fn empirical_occupancy(log: &EventLog) -> Vec<f64> {
    log.occupancy_times().into_iter().map(|t| t / log.duration).collect()
}
