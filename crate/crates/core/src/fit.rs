//! Per-N event-rate tables, rate-model fits, repump-decay fits and the
//! derived temperature and HCC coefficient.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::constants::{PhysConstants, CM3};
use crate::error::{ensure, Error, Result};
use crate::sim::{EventKind, EventLog, ExpectedRates};
use crate::trap::effective_volume;

/// A value with its one-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

impl Estimate {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }

    /// |value − truth| in units of sigma.
    pub fn pull(&self, truth: f64) -> f64 {
        if self.sigma > 0.0 {
            (self.value - truth).abs() / self.sigma
        } else if self.value == truth {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn relative_error(&self, truth: f64) -> f64 {
        ((self.value - truth) / truth).abs()
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(self.value * k, self.sigma * k.abs())
    }
}

/// Occupancy and event counts at one atom number.
///
/// Counts are stored as floats so that expected (non-integer) tables can be
/// fitted with the same code as tabulated ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub n: u32,
    pub occupancy: f64,
    pub n_load: f64,
    pub n_loss1: f64,
    pub n_loss2: f64,
}

impl RateRow {
    fn rate(&self, count: f64) -> Estimate {
        if self.occupancy <= 0.0 {
            return Estimate::new(0.0, f64::INFINITY);
        }
        // empty rows still carry an upper-bound error of one count
        Estimate::new(count / self.occupancy, count.max(1.0).sqrt() / self.occupancy)
    }

    pub fn load_rate(&self) -> Estimate {
        self.rate(self.n_load)
    }

    pub fn loss1_rate(&self) -> Estimate {
        self.rate(self.n_loss1)
    }

    pub fn loss2_rate(&self) -> Estimate {
        self.rate(self.n_loss2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRateTable {
    pub rows: Vec<RateRow>,
    pub duration: f64,
}

impl EventRateTable {
    pub fn mean_n(&self) -> f64 {
        self.rows.iter().map(|r| r.n as f64 * r.occupancy).sum::<f64>() / self.duration
    }

    pub fn total(&self, kind: EventKind) -> f64 {
        self.rows
            .iter()
            .map(|r| match kind {
                EventKind::Load => r.n_load,
                EventKind::Loss1 => r.n_loss1,
                EventKind::Loss2 => r.n_loss2,
            })
            .sum()
    }

    /// Noiseless table with the given occupancy probabilities and rates.
    pub fn expected(rates: &[ExpectedRates], duration: f64) -> Result<Self> {
        ensure("duration", duration, duration > 0.0, "must be positive")?;
        Ok(Self {
            rows: rates
                .iter()
                .map(|r| {
                    let occ = r.probability * duration;
                    RateRow {
                        n: r.n,
                        occupancy: occ,
                        n_load: r.load * occ,
                        n_loss1: r.loss1 * occ,
                        n_loss2: r.loss2 * occ,
                    }
                })
                .collect(),
            duration,
        })
    }
}

/// Per-N occupancy times and event counts of a log.
pub fn tabulate(log: &EventLog) -> Result<EventRateTable> {
    log.validate()?;
    let occ = log.occupancy_times();
    let mut rows: Vec<RateRow> = occ
        .iter()
        .enumerate()
        .map(|(n, &t)| RateRow {
            n: n as u32,
            occupancy: t,
            n_load: 0.0,
            n_loss1: 0.0,
            n_loss2: 0.0,
        })
        .collect();
    for e in &log.events {
        let row = &mut rows[e.n_before as usize];
        match e.kind {
            EventKind::Load => row.n_load += 1.0,
            EventKind::Loss1 => row.n_loss1 += 1.0,
            EventKind::Loss2 => row.n_loss2 += 1.0,
        }
    }
    Ok(EventRateTable {
        rows,
        duration: log.duration,
    })
}

#[derive(Debug, Clone, PartialEq)]
struct LinearFit {
    coef: Vec<f64>,
    sigma: Vec<f64>,
    chi2: f64,
    points: usize,
    clipped: bool,
}

/// Poisson-weighted linear fit of per-N rates on the given basis functions.
///
/// Weights are refreshed from the model-predicted counts until they settle,
/// which makes the estimate the Poisson maximum-likelihood one. The first
/// pass uses √count errors. Negative coefficients are clipped to zero and the
/// rest refitted.
fn poisson_linear_fit(
    rows: &[RateRow],
    count: impl Fn(&RateRow) -> f64,
    basis: &[fn(f64) -> f64],
) -> Result<LinearFit> {
    let used: Vec<&RateRow> = rows.iter().filter(|r| r.occupancy > 0.0).collect();
    let p = basis.len();
    let mut active: Vec<usize> = (0..p).collect();
    let mut clipped = false;
    loop {
        let design = |r: &RateRow| -> Vec<f64> { active.iter().map(|&j| basis[j](r.n as f64)).collect() };
        let informative = used.iter().filter(|r| design(r).iter().any(|&x| x != 0.0)).count();
        if informative < active.len() {
            return Err(Error::DegenerateDesign(format!(
                "{informative} informative rows for {} parameters",
                active.len()
            )));
        }
        let mut var: Vec<f64> = used
            .iter()
            .map(|r| count(r).max(1.0) / (r.occupancy * r.occupancy))
            .collect();
        let mut coef = DVector::zeros(active.len());
        let mut cov = DMatrix::zeros(active.len(), active.len());
        for iter in 0..100 {
            let x = DMatrix::from_fn(used.len(), active.len(), |i, j| basis[active[j]](used[i].n as f64));
            let y = DVector::from_iterator(used.len(), used.iter().map(|r| count(r) / r.occupancy));
            let w = DVector::from_iterator(used.len(), var.iter().map(|v| 1.0 / v));
            let xtw = DMatrix::from_fn(active.len(), used.len(), |j, i| x[(i, j)] * w[i]);
            let normal = &xtw * &x;
            let rhs = &xtw * &y;
            cov = normal
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::DegenerateDesign("singular normal equations".into()))?;
            let new = &cov * rhs;
            let settled = iter > 0
                && new
                    .iter()
                    .zip(coef.iter())
                    .all(|(a, b): (&f64, &f64)| (a - b).abs() <= 1e-12 * a.abs().max(1e-300));
            coef = new;
            if settled {
                break;
            }
            let pred = &x * &coef;
            var = used
                .iter()
                .zip(pred.iter())
                .map(|(r, &lam)| (lam * r.occupancy).max(1.0) / (r.occupancy * r.occupancy))
                .collect();
        }
        if let Some(k) = (0..active.len()).find(|&k| coef[k] < 0.0) {
            clipped = true;
            active.remove(k);
            if active.is_empty() {
                return Ok(LinearFit {
                    coef: vec![0.0; p],
                    sigma: vec![0.0; p],
                    chi2: 0.0,
                    points: used.len(),
                    clipped,
                });
            }
            continue;
        }
        let mut full = vec![0.0; p];
        let mut sigma = vec![0.0; p];
        for (k, &j) in active.iter().enumerate() {
            full[j] = coef[k];
            sigma[j] = cov[(k, k)].sqrt();
        }
        // clipped parameters keep the uncertainty of the unconstrained fit
        if clipped {
            let x = DMatrix::from_fn(used.len(), p, |i, j| basis[j](used[i].n as f64));
            let w: Vec<f64> = var.iter().map(|v| 1.0 / v).collect();
            let normal = DMatrix::from_fn(p, p, |a, b| (0..used.len()).map(|i| x[(i, a)] * w[i] * x[(i, b)]).sum::<f64>());
            if let Some(c) = normal.try_inverse() {
                for j in (0..p).filter(|j| !active.contains(j)) {
                    sigma[j] = c[(j, j)].sqrt();
                }
            }
        }
        let chi2 = used
            .iter()
            .zip(&var)
            .map(|(r, v)| {
                let pred: f64 = (0..p).map(|j| full[j] * basis[j](r.n as f64)).sum();
                (count(r) / r.occupancy - pred).powi(2) / v
            })
            .sum();
        return Ok(LinearFit {
            coef: full,
            sigma,
            chi2,
            points: used.len(),
            clipped,
        });
    }
}

fn one(_: f64) -> f64 {
    1.0
}

fn linear(n: f64) -> f64 {
    n
}

fn pair(n: f64) -> f64 {
    n * (n - 1.0).max(0.0)
}

/// Fitted rate model with uncertainties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub load_rate: Estimate,
    /// 1/τ
    pub bg_rate: Estimate,
    pub bg_lifetime: Estimate,
    /// β₁ₐₜₒₘ/V (1/s)
    pub b1: Estimate,
    /// Two-atom event coefficient.
    pub b2_event: Estimate,
    /// β₂ₐₜₒₘₛ/V = 2·b2_event
    pub beta2_over_v: Estimate,
    /// β/V = b1 + 2·b2_event
    pub beta_total_over_v: Estimate,
    pub chi2: f64,
    pub dof: usize,
    /// Some coefficient was negative and clipped to zero.
    pub clipped: bool,
}

impl FitResult {
    /// β₁ₐₜₒₘ in cm³/s given the volume in cm³.
    pub fn beta1(&self, volume_cm3: f64) -> Estimate {
        self.b1.scale(volume_cm3)
    }

    /// β₂ₐₜₒₘₛ in cm³/s given the volume in cm³.
    pub fn beta2(&self, volume_cm3: f64) -> Estimate {
        self.beta2_over_v.scale(volume_cm3)
    }
}

fn populated(table: &EventRateTable) -> Result<()> {
    let rows = table.rows.iter().filter(|r| r.occupancy > 0.0).count();
    if rows < 3 {
        return Err(Error::DegenerateDesign(format!("{rows} populated atom numbers, need at least 3")));
    }
    Ok(())
}

/// Fits R (constant), loss1 = N/τ + b1·N(N−1) and loss2 = b2·N(N−1).
pub fn fit_rates(table: &EventRateTable) -> Result<FitResult> {
    populated(table)?;
    let load = poisson_linear_fit(&table.rows, |r| r.n_load, &[one])?;
    let loss1 = poisson_linear_fit(&table.rows, |r| r.n_loss1, &[linear, pair])?;
    let loss2 = poisson_linear_fit(&table.rows, |r| r.n_loss2, &[pair])?;

    let g = Estimate::new(loss1.coef[0], loss1.sigma[0]);
    let bg_lifetime = if g.value > 0.0 {
        Estimate::new(1.0 / g.value, g.sigma / (g.value * g.value))
    } else {
        Estimate::new(f64::INFINITY, f64::INFINITY)
    };
    let b1 = Estimate::new(loss1.coef[1], loss1.sigma[1]);
    let b2 = Estimate::new(loss2.coef[0], loss2.sigma[0]);
    let chi2 = load.chi2 + loss1.chi2 + loss2.chi2;
    let dof = (load.points + loss1.points + loss2.points).saturating_sub(4);
    Ok(FitResult {
        load_rate: Estimate::new(load.coef[0], load.sigma[0]),
        bg_rate: g,
        bg_lifetime,
        b1,
        b2_event: b2,
        beta2_over_v: b2.scale(2.0),
        beta_total_over_v: Estimate::new(b1.value + 2.0 * b2.value, (b1.sigma.powi(2) + 4.0 * b2.sigma.powi(2)).sqrt()),
        chi2,
        dof,
        clipped: load.clipped || loss1.clipped || loss2.clipped,
    })
}

/// Two-atom loss rates fitted with both N and N(N−1) terms, without clipping,
/// to test for a linear admixture. Returns (linear, quadratic).
pub fn fit_loss2_with_linear(table: &EventRateTable) -> Result<(Estimate, Estimate)> {
    populated(table)?;
    let rows: Vec<RateRow> = table.rows.iter().filter(|r| r.occupancy > 0.0).copied().collect();
    let x = DMatrix::from_fn(rows.len(), 2, |i, j| {
        let n = rows[i].n as f64;
        if j == 0 {
            n
        } else {
            pair(n)
        }
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.loss2_rate().value));
    let w: Vec<f64> = rows.iter().map(|r| r.loss2_rate().sigma.powi(-2)).collect();
    // weights from the pure-quadratic model where available
    let quad = poisson_linear_fit(&rows, |r| r.n_loss2, &[pair]).ok();
    let w: Vec<f64> = match quad {
        Some(q) if q.coef[0] > 0.0 => rows
            .iter()
            .map(|r| {
                let lam = q.coef[0] * pair(r.n as f64) * r.occupancy;
                r.occupancy * r.occupancy / lam.max(1.0)
            })
            .collect(),
        _ => w,
    };
    let normal = DMatrix::from_fn(2, 2, |a, b| (0..rows.len()).map(|i| x[(i, a)] * w[i] * x[(i, b)]).sum::<f64>());
    let rhs = DVector::from_fn(2, |a, _| (0..rows.len()).map(|i| x[(i, a)] * w[i] * y[i]).sum::<f64>());
    let cov = normal
        .try_inverse()
        .ok_or_else(|| Error::DegenerateDesign("singular normal equations".into()))?;
    let c = &cov * rhs;
    Ok((Estimate::new(c[0], cov[(0, 0)].sqrt()), Estimate::new(c[1], cov[(1, 1)].sqrt())))
}

/// A loss rate measured at one repump saturation parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayPoint {
    pub s0: f64,
    pub rate: f64,
    pub sigma: f64,
}

/// rate(s0) = offset + amplitude·exp(−s0/decay)
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuppressionFit {
    pub offset: Estimate,
    pub amplitude: Estimate,
    pub decay: Estimate,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
}

impl SuppressionFit {
    pub fn eval(&self, s0: f64) -> f64 {
        self.offset.value + self.amplitude.value * (-s0 / self.decay.value).exp()
    }

    /// Temperature implied by the decay constant.
    pub fn temperature(&self, consts: &PhysConstants) -> Result<Estimate> {
        let t = infer_temperature(self.decay.value, consts)?;
        let sigma = if self.decay.value > 1.0 {
            consts.doppler_temp / (2.0 * (self.decay.value - 1.0)).sqrt() * self.decay.sigma
        } else {
            f64::INFINITY
        };
        Ok(Estimate::new(t, sigma))
    }
}

fn decay_model(p: &Vector3<f64>, s0: f64) -> (f64, Vector3<f64>) {
    let e = (-s0 / p[2]).exp();
    let f = p[0] + p[1] * e;
    (f, Vector3::new(1.0, e, p[1] * e * s0 / (p[2] * p[2])))
}

fn decay_chi2(points: &[DecayPoint], p: &Vector3<f64>) -> f64 {
    points
        .iter()
        .map(|q| ((q.rate - decay_model(p, q.s0).0) / q.sigma).powi(2))
        .sum()
}

fn decay_start(points: &[DecayPoint]) -> Vector3<f64> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.s0.total_cmp(&b.s0));
    let min = sorted.iter().map(|p| p.rate).fold(f64::INFINITY, f64::min);
    let max = sorted.iter().map(|p| p.rate).fold(f64::NEG_INFINITY, f64::max);
    // floor just below the smallest rate, then a log-linear fit of the excess
    let c0 = (min - 0.05 * (max - min)).max(0.0);
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in sorted.iter().filter(|p| p.rate - c0 > 0.02 * (max - min)) {
        let y = (p.rate - c0).ln();
        n += 1.0;
        sx += p.s0;
        sy += y;
        sxx += p.s0 * p.s0;
        sxy += p.s0 * y;
    }
    let span = sorted.last().unwrap().s0 - sorted[0].s0;
    let slope = if n >= 2.0 { (n * sxy - sx * sy) / (n * sxx - sx * sx) } else { f64::NAN };
    if slope.is_finite() && slope < 0.0 {
        let a0 = -1.0 / slope;
        let amp0 = ((sy - slope * sx) / n).exp();
        Vector3::new(c0, amp0, a0)
    } else {
        Vector3::new(c0, (max - min).max(1e-300), span / 3.0)
    }
}

/// Weighted Levenberg–Marquardt fit of an exponential decay to a floor.
///
/// Needs at least four points spanning a factor of five in s0. Offset is kept
/// non-negative and the decay constant positive.
pub fn fit_repump_decay(points: &[DecayPoint]) -> Result<SuppressionFit> {
    if points.len() < 4 {
        return Err(Error::DegenerateDesign(format!("{} points, need at least 4", points.len())));
    }
    for p in points {
        ensure("s0", p.s0, p.s0 >= 0.0, "must be non-negative")?;
        ensure("sigma", p.sigma, p.sigma > 0.0, "must be positive")?;
        ensure("rate", p.rate, p.rate.is_finite(), "must be finite")?;
    }
    let lo = points.iter().map(|p| p.s0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.s0).fold(f64::NEG_INFINITY, f64::max);
    if hi < 5.0 * lo || hi <= 0.0 {
        return Err(Error::DegenerateDesign(format!("s0 spans {lo}..{hi}, need a factor of 5")));
    }

    const MAX_ITER: usize = 500;
    let mut p = decay_start(points);
    let mut chi2 = decay_chi2(points, &p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITER {
        iterations += 1;
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for q in points {
            let (f, g) = decay_model(&p, q.s0);
            let w = q.sigma.powi(-2);
            jtj += g * g.transpose() * w;
            jtr += g * (q.rate - f) * w;
        }
        let mut damped = jtj;
        for i in 0..3 {
            damped[(i, i)] *= 1.0 + lambda;
            if damped[(i, i)] == 0.0 {
                damped[(i, i)] = lambda;
            }
        }
        let Some(step) = damped.lu().solve(&jtr) else {
            lambda *= 10.0;
            continue;
        };
        let mut trial = p + step;
        trial[0] = trial[0].max(0.0);
        trial[2] = trial[2].max(1e-6 * p[2]);
        let trial_chi2 = decay_chi2(points, &trial);
        if trial_chi2 <= chi2 {
            let small_step = (0..3).all(|i| (trial[i] - p[i]).abs() <= 1e-10 * (trial[i].abs() + 1e-300) + 1e-300);
            let small_gain = chi2 - trial_chi2 <= 1e-14 * chi2.max(1e-300);
            p = trial;
            chi2 = trial_chi2;
            lambda = (lambda / 10.0).max(1e-12);
            if small_step || small_gain {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence { iterations, chi2 });
    }

    let mut jtj = Matrix3::zeros();
    for q in points {
        let (_, g) = decay_model(&p, q.s0);
        jtj += g * g.transpose() * q.sigma.powi(-2);
    }
    let cov = jtj
        .try_inverse()
        .ok_or_else(|| Error::Singular("decay-fit curvature matrix".into()))?;
    let err = |i: usize| cov[(i, i)].max(0.0).sqrt();
    Ok(SuppressionFit {
        offset: Estimate::new(p[0], err(0)),
        amplitude: Estimate::new(p[1], err(1)),
        decay: Estimate::new(p[2], err(2)),
        chi2,
        dof: points.len() - 3,
        iterations,
    })
}

/// T = T_D·√(2(A − 1)), the inverse of A(T) = 1 + (T/T_D)²/2.
pub fn infer_temperature(decay: f64, consts: &PhysConstants) -> Result<f64> {
    ensure("decay constant", decay, decay >= 1.0, "must be at least 1")?;
    Ok(consts.doppler_temp * (2.0 * (decay - 1.0)).sqrt())
}

/// β_HCC (cm³/s) from the zero-intensity amplitude and the trap size.
///
/// The volume error follows from δV/V = 3·δr0/r0 and is added in quadrature.
pub fn extrapolate_beta_hcc(fit: &SuppressionFit, r0: f64, dr0: f64) -> Result<Estimate> {
    ensure("dr0", dr0, dr0 >= 0.0, "must be non-negative")?;
    let v = effective_volume(r0)? / CM3;
    let sv = v * 3.0 * dr0 / r0;
    let amp = fit.amplitude;
    Ok(Estimate::new(
        amp.value * v,
        ((amp.sigma * v).powi(2) + (amp.value * sv).powi(2)).sqrt(),
    ))
}

/// Inverse-variance weighted mean.
pub fn combine_estimates(values: &[Estimate]) -> Result<Estimate> {
    if values.is_empty() {
        return Err(Error::DegenerateDesign("nothing to combine".into()));
    }
    let mut sw = 0.0;
    let mut swx = 0.0;
    for e in values {
        ensure("sigma", e.sigma, e.sigma > 0.0, "must be positive")?;
        let w = e.sigma.powi(-2);
        sw += w;
        swx += w * e.value;
    }
    Ok(Estimate::new(swx / sw, sw.recip().sqrt()))
}
