//! Synthetic daily meta-order data from a quasi-linear propagator model.
//!
//! Per asset and day `t`:
//!
//! ```text
//! r_d(t) = Σ_{l=0..M} G(l) θ(t−l) + g_π π(t) + ξ(t)
//! r_x(t) = I_x θ(t) + η(t)
//! θ(t)   = Y₀ sign(q) σ (|q|/V)^δ
//! ```
//!
//! where `G` are the increments of the impact kernel, `π` is a unit-variance
//! daily OU predictor and the signed volume `q` comes from a [`FlowModel`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    Delta,
    Exponential { rate: f64 },
    PowerLaw { beta: f64, tau0: f64 },
    Custom { values: Vec<f64> },
}

/// Discrete propagator `I(0..=M)` with `I(0) = 1` and its increments `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactKernel {
    pub family: KernelFamily,
    pub values: Vec<f64>,
    pub increments: Vec<f64>,
}

impl ImpactKernel {
    pub fn custom(values: Vec<f64>) -> Result<Self> {
        let m = values.len().saturating_sub(1);
        make_kernel(&KernelFamily::Custom { values }, m)
    }

    pub fn max_lag(&self) -> usize {
        self.values.len() - 1
    }
}

/// Builds the kernel on lags `0..=max_lag`.
///
/// Values are stored as the running sum of the increments, so the two
/// representations agree exactly.
pub fn make_kernel(family: &KernelFamily, max_lag: usize) -> Result<ImpactKernel> {
    if max_lag < 1 {
        return Err(Error::Domain("kernel needs at least one lag beyond 0".into()));
    }
    let raw: Vec<f64> = match family {
        KernelFamily::Delta => (0..=max_lag).map(|l| if l == 0 { 1.0 } else { 0.0 }).collect(),
        KernelFamily::Exponential { rate } => {
            if !(rate.is_finite() && *rate > 0.0) {
                return Err(Error::Domain(format!("exponential kernel rate must be positive, got {rate}")));
            }
            (0..=max_lag).map(|l| (-rate * l as f64).exp()).collect()
        }
        KernelFamily::PowerLaw { beta, tau0 } => {
            if !(beta.is_finite() && *beta > 0.0 && tau0.is_finite() && *tau0 > 0.0) {
                return Err(Error::Domain(format!(
                    "power-law kernel needs beta > 0 and tau0 > 0, got beta={beta}, tau0={tau0}"
                )));
            }
            (0..=max_lag).map(|l| (1.0 + l as f64 / tau0).powf(-beta)).collect()
        }
        KernelFamily::Custom { values } => {
            if values.len() != max_lag + 1 {
                return Err(Error::Domain(format!(
                    "custom kernel has {} values, expected {}",
                    values.len(),
                    max_lag + 1
                )));
            }
            if values[0] != 1.0 || values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("custom kernel must be finite with I(0) = 1".into()));
            }
            values.clone()
        }
    };
    let mut increments = Vec::with_capacity(raw.len());
    increments.push(raw[0]);
    increments.extend(raw.windows(2).map(|w| w[1] - w[0]));
    let values = increments
        .iter()
        .scan(0.0, |acc, g| {
            *acc += g;
            Some(*acc)
        })
        .collect();
    Ok(ImpactKernel { family: family.clone(), values, increments })
}

/// Predictor dynamics: π is a unit-variance OU with rate Γ and moves the next
/// daily return by `gain · π`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub gamma_signal: f64,
    pub gain: f64,
}

impl PredictorModel {
    /// Expected cumulative return per unit of predictor, `gain / (1 − e^{−Γ})`.
    pub fn alpha(&self) -> f64 {
        self.gain / (1.0 - (-self.gamma_signal).exp())
    }

    /// Fraction of `alpha` realised after `t` days.
    pub fn horizon(&self, t: f64) -> f64 {
        1.0 - (-self.gamma_signal * t).exp()
    }
}

/// How the signed daily volume is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FlowModel {
    /// Trade the daily change of an EMA (rate ω per day) of the predictor.
    /// Signs are positively autocorrelated over roughly 1/ω days.
    Ema { omega: f64 },
    /// Independent standard normal trade intentions.
    Iid,
    /// The same signed participation |q|/V for every asset, day by day.
    /// Zero means no order; days past the end of the script are idle.
    Scripted { signed_participation: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub zones: Vec<String>,
    pub assets_per_zone: usize,
    pub days: usize,
    pub kernel: KernelFamily,
    pub kernel_lags: usize,
    pub y0: f64,
    pub delta: f64,
    pub gamma_signal: f64,
    pub g_pi: f64,
    pub flow: FlowModel,
    pub i_x: f64,
    pub noise: f64,
    pub exec_noise: f64,
    pub participation_min: f64,
    pub participation_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub volume_min: f64,
    pub volume_max: f64,
    pub initial_price: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            zones: ["EU", "US", "JP", "AU"].iter().map(|z| z.to_string()).collect(),
            assets_per_zone: 50,
            days: 750,
            kernel: KernelFamily::PowerLaw { beta: 0.8, tau0: 1.0 },
            kernel_lags: 10,
            y0: 1.0,
            delta: 0.6,
            gamma_signal: 0.05,
            g_pi: 5e-4,
            flow: FlowModel::Ema { omega: 0.1 },
            i_x: 0.6,
            noise: 0.01,
            exec_noise: 0.002,
            participation_min: 1e-3,
            participation_max: 5e-2,
            sigma_min: 0.01,
            sigma_max: 0.03,
            volume_min: 1e5,
            volume_max: 1e7,
            initial_price: 100.0,
            seed: 0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive and finite, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be non-negative and finite, got {v}")))
    }
}

fn ordered_range(name: &str, lo: f64, hi: f64) -> Result<()> {
    positive(name, lo)?;
    positive(name, hi)?;
    if lo > hi {
        return Err(Error::Domain(format!("{name} range is empty: [{lo}, {hi}]")));
    }
    Ok(())
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.zones.is_empty() {
            return Err(Error::Domain("at least one zone is required".into()));
        }
        if self.assets_per_zone == 0 {
            return Err(Error::Domain("assets_per_zone must be at least 1".into()));
        }
        if self.days < 2 {
            return Err(Error::Domain("at least two days are required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for z in &self.zones {
            if z.is_empty() || !seen.insert(z) {
                return Err(Error::Domain(format!("zone names must be non-empty and unique, got {:?}", self.zones)));
            }
        }
        positive("y0", self.y0)?;
        positive("delta", self.delta)?;
        if self.delta > 1.5 {
            return Err(Error::Domain(format!("delta must not exceed 1.5, got {}", self.delta)));
        }
        positive("gamma_signal", self.gamma_signal)?;
        if !self.g_pi.is_finite() || !self.i_x.is_finite() {
            return Err(Error::Domain("g_pi and i_x must be finite".into()));
        }
        non_negative("noise", self.noise)?;
        non_negative("exec_noise", self.exec_noise)?;
        ordered_range("participation", self.participation_min, self.participation_max)?;
        if self.participation_max > 1.0 {
            return Err(Error::Domain("participation_max cannot exceed 1".into()));
        }
        ordered_range("sigma", self.sigma_min, self.sigma_max)?;
        ordered_range("volume", self.volume_min, self.volume_max)?;
        positive("initial_price", self.initial_price)?;
        match &self.flow {
            FlowModel::Ema { omega } => positive("omega", *omega)?,
            FlowModel::Iid => {}
            FlowModel::Scripted { signed_participation } => {
                for p in signed_participation {
                    let a = p.abs();
                    if !(a == 0.0 || (a >= self.participation_min && a <= self.participation_max)) {
                        return Err(Error::Domain(format!("scripted participation {p} is outside the band")));
                    }
                }
            }
        }
        make_kernel(&self.kernel, self.kernel_lags)?;
        Ok(())
    }

    pub fn predictor(&self) -> PredictorModel {
        PredictorModel { gamma_signal: self.gamma_signal, gain: self.g_pi }
    }

    pub fn n_assets(&self) -> usize {
        self.zones.len() * self.assets_per_zone
    }

    /// Days simulated and discarded before day 0 so that π and the trading
    /// target start stationary.
    pub fn burn_in_days(&self) -> usize {
        let slowest = match self.flow {
            FlowModel::Ema { omega } => self.gamma_signal.min(omega),
            _ => self.gamma_signal,
        };
        (10.0 / slowest).ceil() as usize
    }
}

/// Ground truth stored alongside a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SimConfig,
    pub kernel: ImpactKernel,
    pub alpha: f64,
}

/// One meta-order (asset, day). `q = 0` means no order that day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaOrderRecord {
    pub zone: String,
    pub asset: String,
    pub t: usize,
    pub q: f64,
    #[serde(rename = "V")]
    pub volume: f64,
    pub sigma: f64,
    pub p_d: f64,
    pub p_x: f64,
    pub pi: f64,
}

impl MetaOrderRecord {
    pub fn participation(&self) -> f64 {
        self.q.abs() / self.volume
    }
}

/// Signed instantaneous impact `Y₀ sign(q) σ (|q|/V)^δ`.
pub fn theta_value(q: f64, volume: f64, sigma: f64, y0: f64, delta: f64) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    y0 * q.signum() * sigma * (q.abs() / volume).powf(delta)
}

pub fn theta(record: &MetaOrderRecord, y0: f64, delta: f64) -> f64 {
    theta_value(record.q, record.volume, record.sigma, y0, delta)
}

/// Records grouped by (zone, asset), each group contiguous in `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    zones: Vec<String>,
    records: Vec<MetaOrderRecord>,
    /// Start offset of each asset's block in `records`.
    groups: Vec<usize>,
    pub manifest: Option<GroundTruth>,
}

/// Day-indexed view of one asset.
#[derive(Debug, Clone, Copy)]
pub struct AssetSeries<'a> {
    pub zone: &'a str,
    pub asset: &'a str,
    pub records: &'a [MetaOrderRecord],
}

impl AssetSeries<'_> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Decision-price return from day t to t+1; NaN on the last day.
    pub fn r_d(&self) -> Vec<f64> {
        let p: Vec<f64> = self.records.iter().map(|r| r.p_d).collect();
        let mut out: Vec<f64> = p.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
        out.push(f64::NAN);
        out
    }

    /// Decision-price return from day t to day t+h; NaN where t+h is past the end.
    pub fn forward_return(&self, h: usize) -> Vec<f64> {
        let p: Vec<f64> = self.records.iter().map(|r| r.p_d).collect();
        (0..p.len()).map(|t| if t + h < p.len() { p[t + h] / p[t] - 1.0 } else { f64::NAN }).collect()
    }

    /// Strike slippage `p_x / p_d − 1`.
    pub fn r_x(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.p_x / r.p_d - 1.0).collect()
    }

    pub fn theta(&self, y0: f64, delta: f64) -> Vec<f64> {
        self.records.iter().map(|r| theta(r, y0, delta)).collect()
    }

    pub fn pi(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.pi).collect()
    }
}

impl Dataset {
    /// Validates and wraps records. Each asset's records must be contiguous
    /// with `t` increasing by exactly one, and every zone must be declared.
    pub fn new(zones: Vec<String>, records: Vec<MetaOrderRecord>, manifest: Option<GroundTruth>) -> Result<Self> {
        let mut groups = Vec::new();
        let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if !zones.contains(&r.zone) {
                return Err(Error::Dataset(format!("record {i}: undeclared zone {}", r.zone)));
            }
            if !(r.volume.is_finite() && r.volume > 0.0) {
                return Err(Error::Dataset(format!("record {i}: volume must be positive")));
            }
            if !(r.sigma.is_finite() && r.sigma > 0.0) {
                return Err(Error::Dataset(format!("record {i}: sigma must be positive")));
            }
            if !(r.p_d.is_finite() && r.p_d > 0.0 && r.p_x.is_finite() && r.p_x > 0.0) {
                return Err(Error::Dataset(format!("record {i}: prices must be positive")));
            }
            if !r.q.is_finite() || !r.pi.is_finite() {
                return Err(Error::Dataset(format!("record {i}: q and pi must be finite")));
            }
            let new_group = i == 0 || records[i - 1].asset != r.asset || records[i - 1].zone != r.zone;
            if new_group {
                if let Some(z) = seen.insert(&r.asset, &r.zone) {
                    let what = if z == r.zone { "is not contiguous" } else { "appears in two zones" };
                    return Err(Error::Dataset(format!("asset {} {what}", r.asset)));
                }
                groups.push(i);
            } else if r.t != records[i - 1].t + 1 {
                return Err(Error::Dataset(format!(
                    "asset {}: day {} follows day {} (days must be consecutive)",
                    r.asset,
                    r.t,
                    records[i - 1].t
                )));
            }
        }
        Ok(Dataset { zones, records, groups, manifest })
    }

    pub fn zones(&self) -> &[String] {
        &self.zones
    }

    pub fn records(&self) -> &[MetaOrderRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn assets(&self) -> Vec<AssetSeries<'_>> {
        let mut out = Vec::with_capacity(self.groups.len());
        for (g, &start) in self.groups.iter().enumerate() {
            let end = self.groups.get(g + 1).copied().unwrap_or(self.records.len());
            let records = &self.records[start..end];
            out.push(AssetSeries { zone: &records[0].zone, asset: &records[0].asset, records });
        }
        out
    }

    pub fn assets_in_zone(&self, zone: &str) -> Vec<AssetSeries<'_>> {
        self.assets().into_iter().filter(|a| a.zone == zone).collect()
    }

    /// Same records with every order (and its price effect) reversed in sign:
    /// q → −q, returns → −returns, predictor untouched.
    pub fn mirrored(&self) -> Result<Dataset> {
        let mut records = Vec::with_capacity(self.records.len());
        for a in self.assets() {
            let (r_d, r_x) = (a.r_d(), a.r_x());
            let mut p_d = a.records[0].p_d;
            for (t, r) in a.records.iter().enumerate() {
                let mut m = r.clone();
                m.q = -r.q;
                m.p_d = p_d;
                m.p_x = p_d * (1.0 - r_x[t]);
                p_d *= 1.0 - r_d[t];
                records.push(m);
            }
        }
        Dataset::new(self.zones.clone(), records, self.manifest.clone())
    }
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Stationary standard deviation of the daily change of an EMA (rate ω) of a
/// unit-variance AR(1) with coefficient `a = e^{−Γ}`.
pub fn ema_trade_sd(gamma_signal: f64, omega: f64) -> f64 {
    let a = (-gamma_signal).exp();
    let b = (-omega).exp();
    let c = 1.0 - b;
    (2.0 * c * c * (1.0 - a) / ((1.0 - a * b) * (1.0 + b))).sqrt()
}

/// Maps a trade intention in units of its standard deviation onto the
/// participation band, log-uniformly: the half-normal CDF of |u| picks the
/// position inside `[p_min, p_max]`.
pub fn participation_from_intent(u_over_sd: f64, p_min: f64, p_max: f64) -> f64 {
    let f = erf(u_over_sd.abs() / std::f64::consts::SQRT_2);
    (p_min * (p_max / p_min).powf(f)).clamp(p_min, p_max)
}

const PARAM_STREAM: u64 = 0;
const PREDICTOR_STREAM: u64 = 1;
const FLOW_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;
const EXEC_STREAM: u64 = 4;

fn asset_stream(seed: u64, asset: usize, component: u64) -> rand_chacha::ChaCha8Rng {
    rng::stream(seed, ((asset as u64) << 3) | component)
}

/// Unit-variance daily AR(1) `π(t+1) = a π(t) + √(1−a²) ξ`, started stationary.
pub fn simulate_predictor<R: Rng>(rng: &mut R, gamma_signal: f64, n: usize) -> Vec<f64> {
    let a = (-gamma_signal).exp();
    let s = (1.0 - a * a).sqrt();
    let mut out = Vec::with_capacity(n);
    let mut x: f64 = rng.sample(StandardNormal);
    for _ in 0..n {
        out.push(x);
        x = a * x + s * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

fn simulate_asset(cfg: &SimConfig, kernel: &ImpactKernel, index: usize) -> Vec<MetaOrderRecord> {
    let zone = &cfg.zones[index / cfg.assets_per_zone];
    let asset = format!("{zone}{:03}", index % cfg.assets_per_zone);
    let days = cfg.days;
    let burn = cfg.burn_in_days();

    let mut prng = asset_stream(cfg.seed, index, PARAM_STREAM);
    let sigma = log_uniform(&mut prng, cfg.sigma_min, cfg.sigma_max);
    let volume = log_uniform(&mut prng, cfg.volume_min, cfg.volume_max);

    let full_pi = simulate_predictor(&mut asset_stream(cfg.seed, index, PREDICTOR_STREAM), cfg.gamma_signal, burn + days);
    let pi = &full_pi[burn..];

    let (lo, hi) = (cfg.participation_min, cfg.participation_max);
    let signed_part: Vec<f64> = match &cfg.flow {
        FlowModel::Ema { omega } => {
            let b = (-omega).exp();
            let sd = ema_trade_sd(cfg.gamma_signal, *omega);
            let mut target = 0.0;
            let mut out = Vec::with_capacity(days);
            for (k, p) in full_pi.iter().enumerate() {
                let next = b * target + (1.0 - b) * p;
                let u = next - target;
                target = next;
                if k >= burn {
                    out.push(if u == 0.0 { 0.0 } else { u.signum() * participation_from_intent(u / sd, lo, hi) });
                }
            }
            out
        }
        FlowModel::Iid => {
            let mut frng = asset_stream(cfg.seed, index, FLOW_STREAM);
            (0..days)
                .map(|_| {
                    let u: f64 = frng.sample(StandardNormal);
                    if u == 0.0 { 0.0 } else { u.signum() * participation_from_intent(u, lo, hi) }
                })
                .collect()
        }
        FlowModel::Scripted { signed_participation } => {
            (0..days).map(|t| signed_participation.get(t).copied().unwrap_or(0.0)).collect()
        }
    };
    let q: Vec<f64> = signed_part.iter().map(|p| p * volume).collect();
    let th: Vec<f64> = q.iter().map(|&q| theta_value(q, volume, sigma, cfg.y0, cfg.delta)).collect();

    let mut nrng = asset_stream(cfg.seed, index, NOISE_STREAM);
    let mut xrng = asset_stream(cfg.seed, index, EXEC_STREAM);
    let g = &kernel.increments;
    let mut records = Vec::with_capacity(days);
    let mut p_d = cfg.initial_price;
    for t in 0..days {
        let eta: f64 = xrng.sample(StandardNormal);
        let p_x = p_d * (1.0 + cfg.i_x * th[t] + cfg.exec_noise * eta);
        records.push(MetaOrderRecord {
            zone: zone.clone(),
            asset: asset.clone(),
            t,
            q: q[t],
            volume,
            sigma,
            p_d,
            p_x,
            pi: pi[t],
        });
        let mut r = 0.0;
        for (l, gl) in g.iter().enumerate().take(t + 1) {
            r += gl * th[t - l];
        }
        let xi: f64 = nrng.sample(StandardNormal);
        r += cfg.g_pi * pi[t] + cfg.noise * xi;
        p_d *= 1.0 + r;
    }
    records
}

/// Generates a dataset. Assets are simulated in parallel, each from its own
/// random streams, and merged in zone-major order.
pub fn simulate_dataset(cfg: &SimConfig) -> Result<Dataset> {
    cfg.validate()?;
    let kernel = make_kernel(&cfg.kernel, cfg.kernel_lags)?;
    let per_asset: Vec<Vec<MetaOrderRecord>> = (0..cfg.n_assets())
        .into_par_iter()
        .map(|i| simulate_asset(cfg, &kernel, i))
        .collect();
    let records: Vec<MetaOrderRecord> = per_asset.into_iter().flatten().collect();
    if records.iter().any(|r| !(r.p_d > 0.0 && r.p_x > 0.0)) {
        return Err(Error::Domain("impact or noise scale drove a price non-positive".into()));
    }
    let manifest = GroundTruth { config: cfg.clone(), kernel, alpha: cfg.predictor().alpha() };
    Dataset::new(cfg.zones.clone(), records, Some(manifest))
}

/// Merges each block of `k` consecutive days of every asset into one record.
/// Trailing partial blocks are dropped.
pub fn regroup_days(ds: &Dataset, k: usize) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::Domain("regrouping factor must be at least 1".into()));
    }
    if k == 1 {
        return Ok(ds.clone());
    }
    let mut records = Vec::new();
    for a in ds.assets() {
        for (b, block) in a.records.chunks_exact(k).enumerate() {
            let q: f64 = block.iter().map(|r| r.q).sum();
            let volume: f64 = block.iter().map(|r| r.volume).sum();
            let w: f64 = block.iter().map(|r| r.q.abs()).sum();
            let p_x = if w > 0.0 {
                block.iter().map(|r| r.q.abs() * r.p_x).sum::<f64>() / w
            } else {
                block[0].p_d
            };
            records.push(MetaOrderRecord {
                zone: block[0].zone.clone(),
                asset: block[0].asset.clone(),
                t: b,
                q,
                volume,
                sigma: block[0].sigma * (k as f64).sqrt(),
                p_d: block[0].p_d,
                p_x,
                pi: block.iter().map(|r| r.pi).sum::<f64>() / k as f64,
            });
        }
    }
    Dataset::new(ds.zones.clone(), records, ds.manifest.clone())
}

pub const CSV_HEADER: [&str; 9] = ["zone", "asset", "t", "q", "V", "sigma", "p_d", "p_x", "pi"];

/// Path of the ground-truth file written next to a dataset CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run: Option<serde_json::Value>,
    #[serde(flatten)]
    truth: GroundTruth,
}

/// Writes the dataset CSV, preceded by `# manifest: <comment>` when given,
/// and the ground truth (if any) as a JSON sidecar. The comment is repeated
/// in the sidecar under `run`, parsed as JSON when it is JSON.
pub fn write_dataset(ds: &Dataset, path: &Path, comment: Option<&str>) -> Result<()> {
    let mut file = std::io::BufWriter::new(File::create(path)?);
    if let Some(c) = comment {
        writeln!(file, "# manifest: {c}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    for r in &ds.records {
        w.serialize(r)?;
    }
    if ds.records.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    w.flush()?;
    if let Some(m) = &ds.manifest {
        let run = comment.map(|c| serde_json::from_str(c).unwrap_or_else(|_| serde_json::Value::String(c.into())));
        let mut f = File::create(sidecar_path(path))?;
        serde_json::to_writer_pretty(&mut f, &Sidecar { run, truth: m.clone() })?;
        writeln!(f)?;
    }
    Ok(())
}

/// Reads a dataset written by [`write_dataset`] (or any CSV with the same
/// header). Lines starting with `#` are skipped. Zones come from the sidecar
/// manifest when present, otherwise in order of first appearance.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(BufReader::new(file));
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Dataset(format!("unexpected header {header:?}, expected {CSV_HEADER:?}")));
    }
    let records = rdr.deserialize().collect::<std::result::Result<Vec<MetaOrderRecord>, _>>()?;
    let side = sidecar_path(path);
    let manifest: Option<GroundTruth> = if side.exists() {
        let s: Sidecar = serde_json::from_reader(BufReader::new(File::open(side)?))?;
        Some(s.truth)
    } else {
        None
    };
    let zones = match &manifest {
        Some(m) => m.config.zones.clone(),
        None => {
            let mut z: Vec<String> = Vec::new();
            for r in &records {
                if !z.contains(&r.zone) {
                    z.push(r.zone.clone());
                }
            }
            z
        }
    };
    Dataset::new(zones, records, manifest)
}

/// The `# manifest:` line of a CSV file, if it has one.
pub fn read_manifest_line(path: &Path) -> Result<Option<String>> {
    let mut line = String::new();
    BufReader::new(File::open(path)?).read_line(&mut line)?;
    Ok(line.strip_prefix("# manifest: ").map(|s| s.trim_end().to_string()))
}
