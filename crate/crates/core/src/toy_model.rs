//! Continuous-time optimal trading toy model with instantaneous (delta) impact.
//!
//! An investor holds a position `π(t)` driven by an Ornstein-Uhlenbeck signal
//! `s(t)` with `⟨s(τ)s(0)⟩ = exp(-Γ|τ|)`. The signal predicts a price drift
//! `𝒢 s(t) dt`, trading at speed `π̇` displaces the price by `γ π̇` for an instant,
//! and the position is chosen to maximise gains net of quadratic costs at fixed
//! risk `R²`. The optimum is an exponential moving average of the signal,
//!
//! ```text
//! π(t) = φ₀ ∫ e^{-ω(t-t')} s(t') dt',   φ₀ = 𝒢 / (γ (ω + Γ)),   ω = z Γ,
//! z (1 + z)³ = κ = σ² 𝒢² / (γ² R² Γ⁴).
//! ```
//!
//! Although the true impact is a delta function, averaging price moves over the
//! investor's own (autocorrelated) trades yields the raw impact
//! `I_raw(τ) = (1 + z)(1 - e^{-Γτ})`, which rises to a non-universal plateau.
//! This module provides the closed forms and a discrete Monte Carlo that
//! measures the same quantity from simulated paths.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const SIGNAL_STREAM: u64 = 1;
const PRICE_STREAM: u64 = 2;

/// Number of contiguous batches used for batch-means standard errors.
pub const MC_BATCHES: usize = 40;

/// Burn-in length, in units of the slowest relaxation time.
const BURN_IN_RELAXATIONS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelParams {
    /// Signal mean-reversion rate Γ (1/day).
    pub gamma_signal: f64,
    /// Impact coefficient γ: trading at speed π̇ displaces the price by γπ̇.
    pub gamma_impact: f64,
    /// Prediction gain 𝒢 (price drift per unit signal per day).
    pub gain: f64,
    /// Risk budget R².
    pub risk_sq: f64,
    /// Volatility σ (price units per √day).
    pub sigma: f64,
    /// Simulation step (days).
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    /// Multiplier on the additive price noise σ√Δt·η. Zero switches the noise off.
    #[serde(default)]
    pub price_noise: f64,
}

impl ToyModelParams {
    /// Default step: a whole fraction of a day, at most 0.02 relaxation
    /// times of the signal, so that integer-day lags fall on the grid.
    pub fn default_dt(gamma_signal: f64) -> f64 {
        1.0 / (50.0 * gamma_signal).ceil().max(1.0)
    }

    /// Parameters with σ = 𝒢 = R² = 1 and γ chosen so that the frequency
    /// equation has right-hand side `kappa`.
    pub fn from_kappa(gamma_signal: f64, kappa: f64, n_steps: usize, seed: u64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::Domain(format!("kappa must be positive and finite, got {kappa}")));
        }
        if !(gamma_signal.is_finite() && gamma_signal > 0.0) {
            return Err(Error::Domain(format!("gamma_signal must be positive, got {gamma_signal}")));
        }
        let params = ToyModelParams {
            gamma_signal,
            gamma_impact: 1.0 / (gamma_signal * gamma_signal * kappa.sqrt()),
            gain: 1.0,
            risk_sq: 1.0,
            sigma: 1.0,
            dt: Self::default_dt(gamma_signal),
            n_steps,
            seed,
            price_noise: 0.0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma_signal", self.gamma_signal),
            ("gamma_impact", self.gamma_impact),
            ("risk_sq", self.risk_sq),
            ("sigma", self.sigma),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !self.gain.is_finite() {
            return Err(Error::Domain(format!("gain must be finite, got {}", self.gain)));
        }
        if !(self.price_noise.is_finite() && self.price_noise >= 0.0) {
            return Err(Error::Domain(format!("price_noise must be >= 0, got {}", self.price_noise)));
        }
        if self.n_steps < 2 {
            return Err(Error::Domain(format!("n_steps must be >= 2, got {}", self.n_steps)));
        }
        Ok(())
    }

    /// κ = σ²𝒢²/(γ²R²Γ⁴).
    pub fn kappa(&self) -> f64 {
        let g2 = self.gamma_signal * self.gamma_signal;
        (self.sigma * self.gain).powi(2) / (self.gamma_impact.powi(2) * self.risk_sq * g2 * g2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToySolution {
    pub kappa: f64,
    pub z: f64,
    /// Averaging frequency ω = zΓ (1/day).
    pub omega: f64,
    /// Position scale φ₀ = 𝒢/(γ(ω+Γ)).
    pub phi0: f64,
}

impl ToySolution {
    /// Plateau of the raw impact, 1 + z.
    pub fn plateau(&self) -> f64 {
        1.0 + self.z
    }

    /// Stationary variance of the optimal position, φ₀²/(ω(ω+Γ)).
    pub fn position_variance(&self, gamma_signal: f64) -> f64 {
        self.phi0 * self.phi0 / (self.omega * (self.omega + gamma_signal))
    }

    /// Stationary mean square trading speed, φ₀²/(1+z).
    pub fn trade_rate_power(&self) -> f64 {
        self.phi0 * self.phi0 / (1.0 + self.z)
    }
}

fn z_equation(z: f64) -> f64 {
    z * (1.0 + z).powi(3)
}

/// Unique non-negative root of `z (1 + z)³ = kappa`.
///
/// Bracketing bisection run until the bracket cannot be split any further in
/// floating point; the endpoint with the smaller residual is returned.
pub fn solve_z(kappa: f64) -> Result<f64> {
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(Error::Domain(format!("kappa must be finite and >= 0, got {kappa}")));
    }
    if kappa == 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0_f64;
    let mut hi = kappa.max(1.0);
    while z_equation(hi) < kappa {
        lo = hi;
        hi *= 2.0;
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if z_equation(mid) < kappa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (r_lo, r_hi) = ((z_equation(lo) - kappa).abs(), (z_equation(hi) - kappa).abs());
    Ok(if r_lo < r_hi { lo } else { hi })
}

pub fn toy_solution(params: &ToyModelParams) -> Result<ToySolution> {
    params.validate()?;
    let kappa = params.kappa();
    let z = solve_z(kappa)?;
    let omega = z * params.gamma_signal;
    let phi0 = params.gain / (params.gamma_impact * (omega + params.gamma_signal));
    Ok(ToySolution { kappa, z, omega, phi0 })
}

/// Closed-form raw impact `(1 + z)(1 - e^{-Γτ})`.
pub fn raw_impact_analytic(z: f64, gamma_signal: f64, tau: f64) -> f64 {
    (1.0 + z) * (1.0 - (-gamma_signal * tau).exp())
}

/// Stationary OU signal with unit variance, sampled with the exact transition.
pub fn simulate_ou(gamma_signal: f64, dt: f64, n_steps: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, SIGNAL_STREAM);
    let decay = (-gamma_signal * dt).exp();
    let innovation = (1.0 - decay * decay).sqrt();
    let mut out = Vec::with_capacity(n_steps);
    if n_steps == 0 {
        return out;
    }
    let mut s: f64 = rng.sample(StandardNormal);
    out.push(s);
    for _ in 1..n_steps {
        let xi: f64 = rng.sample(StandardNormal);
        s = s * decay + innovation * xi;
        out.push(s);
    }
    out
}

/// Discrete exponential moving average of the signal, started from π₀ = 0.
///
/// `π_{k+1} = π_k e^{-ωΔt} + φ₀ (1 - e^{-ωΔt})/ω · s_k`, reducing to
/// `π_{k+1} = π_k + φ₀ s_k Δt` when ω = 0. The output has the signal's length,
/// so `π_k` depends on `s_0..s_{k-1}` only.
pub fn optimal_position(signal: &[f64], omega: f64, phi0: f64, dt: f64) -> Vec<f64> {
    let (decay, weight) = if omega > 0.0 {
        let d = (-omega * dt).exp();
        (d, phi0 * (1.0 - d) / omega)
    } else {
        (1.0, phi0 * dt)
    };
    let mut out = Vec::with_capacity(signal.len());
    let mut pi = 0.0;
    for &s in signal {
        out.push(pi);
        pi = pi * decay + weight * s;
    }
    out
}

/// Forward-difference trading speed `(π_{k+1} - π_k)/Δt`; one element shorter than `position`.
pub fn trade_rate(position: &[f64], dt: f64) -> Vec<f64> {
    position.windows(2).map(|w| (w[1] - w[0]) / dt).collect()
}

/// Decision prices: `p_{k+1} = p_k + 𝒢 s_k Δt + noise·√Δt·η_k`, starting at 0.
///
/// The delta impact has fully decayed by the next decision time, so it does
/// not enter these prices; see [`traded_prices`].
pub fn simulate_toy_prices(signal: &[f64], gain: f64, noise: f64, dt: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, PRICE_STREAM);
    let sqrt_dt = dt.sqrt();
    let mut out = Vec::with_capacity(signal.len());
    let mut p = 0.0;
    for &s in signal {
        out.push(p);
        let mut step = gain * s * dt;
        if noise > 0.0 {
            let eta: f64 = rng.sample(StandardNormal);
            step += noise * sqrt_dt * eta;
        }
        p += step;
    }
    out
}

/// Prices prevailing while trading during each step: the decision price plus
/// the instantaneous displacement `γ π̇_k`, which is gone by step k + 1.
pub fn traded_prices(decision: &[f64], trade_rate: &[f64], gamma_impact: f64) -> Vec<f64> {
    decision
        .iter()
        .zip(trade_rate)
        .map(|(p, v)| p + gamma_impact * v)
        .collect()
}

/// One simulated stationary toy path; all sequences have the same length.
#[derive(Debug, Clone)]
pub struct ToyPath {
    pub dt: f64,
    pub signal: Vec<f64>,
    pub position: Vec<f64>,
    pub trade_rate: Vec<f64>,
    /// Decision prices p_d.
    pub price: Vec<f64>,
}

impl ToyPath {
    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }
}

/// Number of steps discarded before a path is considered stationary.
pub fn burn_in_steps(gamma_signal: f64, omega: f64, dt: f64) -> usize {
    let slowest = if omega > 0.0 { gamma_signal.min(omega) } else { gamma_signal };
    (BURN_IN_RELAXATIONS / slowest / dt).ceil() as usize
}

/// Simulates signal, optimal position, trading speed and decision price for
/// `params.n_steps` steps after a burn-in.
pub fn simulate_toy_path(params: &ToyModelParams, solution: &ToySolution) -> Result<ToyPath> {
    params.validate()?;
    let burn = burn_in_steps(params.gamma_signal, solution.omega, params.dt);
    let total = burn + params.n_steps + 1;
    let signal = simulate_ou(params.gamma_signal, params.dt, total, params.seed);
    let position = optimal_position(&signal, solution.omega, solution.phi0, params.dt);
    let rate = trade_rate(&position, params.dt);
    let price = simulate_toy_prices(
        &signal,
        params.gain,
        params.sigma * params.price_noise,
        params.dt,
        params.seed,
    );
    let window = burn..burn + params.n_steps;
    Ok(ToyPath {
        dt: params.dt,
        signal: signal[window.clone()].to_vec(),
        position: position[window.clone()].to_vec(),
        trade_rate: rate[window.clone()].to_vec(),
        price: price[window].to_vec(),
    })
}

/// Monte Carlo raw impact curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawImpactCurve {
    /// Lags in days, as realised on the step grid (nearest whole step).
    pub tau: Vec<f64>,
    pub value: Vec<f64>,
    /// Batch-means standard errors.
    pub std_err: Vec<f64>,
}

/// Lags 0, 1, ..., `max_lag` days.
pub fn lag_grid(max_lag: usize) -> Vec<f64> {
    (0..=max_lag).map(|t| t as f64).collect()
}

fn lag_steps(tau: f64, dt: f64, len: usize) -> Result<usize> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::Domain(format!("lag must be >= 0, got {tau}")));
    }
    let n = (tau / dt).round() as usize;
    if (n + 2) * 10 > len {
        return Err(Error::Domain(format!(
            "path of {len} steps is too short for a lag of {tau} days ({n} steps); need at least 10x the lag"
        )));
    }
    Ok(n)
}

/// Ratio of batch sums and its batch-means standard error.
fn ratio_with_batches(num: &[f64], den: &[f64]) -> (f64, f64) {
    let total = num.iter().sum::<f64>() / den.iter().sum::<f64>();
    let b = num.len() as f64;
    let ratios: Vec<f64> = num.iter().zip(den).map(|(n, d)| n / d).collect();
    let mean = ratios.iter().sum::<f64>() / b;
    let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (b - 1.0);
    (total, (var / b).sqrt())
}

/// Measures `⟨Δp(t, t+τ) π̇(t)⟩ / (γ ⟨π̇²⟩)` on a path.
///
/// The trade over step k is paired with the price change between the step
/// midpoints k + ½ and k + ½ + τ/Δt, the midpoint price being the average of
/// the two neighbouring decision prices. Standard errors come from
/// [`MC_BATCHES`] contiguous batches.
pub fn measure_raw_impact_toy(path: &ToyPath, gamma_impact: f64, lags: &[f64]) -> Result<RawImpactCurve> {
    let len = path.len();
    let steps = lags
        .iter()
        .map(|&tau| lag_steps(tau, path.dt, len))
        .collect::<Result<Vec<_>>>()?;
    let p = &path.price;
    let v = &path.trade_rate;
    let mut curve = RawImpactCurve {
        tau: steps.iter().map(|&n| n as f64 * path.dt).collect(),
        value: Vec::with_capacity(lags.len()),
        std_err: Vec::with_capacity(lags.len()),
    };
    for &n in &steps {
        let count = len - n - 1;
        let batch = count / MC_BATCHES;
        let mut num = vec![0.0; MC_BATCHES];
        let mut den = vec![0.0; MC_BATCHES];
        for b in 0..MC_BATCHES {
            let (mut sn, mut sd) = (0.0, 0.0);
            for k in b * batch..(b + 1) * batch {
                let dp = 0.5 * ((p[k + n + 1] - p[k + 1]) + (p[k + n] - p[k]));
                sn += dp * v[k];
                sd += gamma_impact * v[k] * v[k];
            }
            num[b] = sn;
            den[b] = sd;
        }
        if den.iter().any(|&d| d <= 0.0) {
            return Err(Error::Estimation("trading speed is identically zero on the path".into()));
        }
        let (value, se) = ratio_with_batches(&num, &den);
        curve.value.push(value);
        curve.std_err.push(se);
    }
    Ok(curve)
}

/// Sample `γ⟨π̇²⟩` with its batch-means standard error.
pub fn trade_rate_power(path: &ToyPath, gamma_impact: f64) -> (f64, f64) {
    let batch = path.trade_rate.len() / MC_BATCHES;
    let means: Vec<f64> = path
        .trade_rate
        .chunks_exact(batch)
        .take(MC_BATCHES)
        .map(|c| gamma_impact * c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64)
        .collect();
    let b = means.len() as f64;
    let mean = means.iter().sum::<f64>() / b;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (b - 1.0);
    (mean, (var / b).sqrt())
}

/// Averages independent replicas (seeds `seed, seed+1, ...`) run in parallel.
pub fn replicate_raw_impact(params: &ToyModelParams, replicas: usize, lags: &[f64]) -> Result<RawImpactCurve> {
    use rayon::prelude::*;
    if replicas == 0 {
        return Err(Error::Domain("need at least one replica".into()));
    }
    let solution = toy_solution(params)?;
    let curves = (0..replicas as u64)
        .into_par_iter()
        .map(|i| {
            let p = ToyModelParams { seed: params.seed.wrapping_add(i), ..params.clone() };
            let path = simulate_toy_path(&p, &solution)?;
            measure_raw_impact_toy(&path, p.gamma_impact, lags)
        })
        .collect::<Result<Vec<_>>>()?;
    let r = replicas as f64;
    let mut out = RawImpactCurve {
        tau: curves[0].tau.clone(),
        value: vec![0.0; lags.len()],
        std_err: vec![0.0; lags.len()],
    };
    for c in &curves {
        for i in 0..lags.len() {
            out.value[i] += c.value[i] / r;
            out.std_err[i] += c.std_err[i] * c.std_err[i];
        }
    }
    for se in &mut out.std_err {
        *se = se.sqrt() / r;
    }
    Ok(out)
}
