//! Impact estimation on meta-order datasets.
//!
//! The pipeline is: fit the instantaneous square-root law to get (Y₀, δ),
//! measure the raw impact curve lag by lag, then regress daily returns jointly
//! on lagged impacts θ and lagged predictor values π to recover the
//! single-order kernel `I(τ) = Σ_{l≤τ} G_θ(l)`. Zones are regressed separately
//! and averaged with equal weight.

use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_sim::{AssetSeries, Dataset};
use crate::regression::{self, Band, DesignSpec, Matrix, SeriesSet, StreamSpec};

/// Execution proxies with smaller magnitude than this cannot normalize a kernel.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Half-width of an equal-weight mean of independent estimates.
fn mean_half_width(hw: &[f64]) -> f64 {
    hw.iter().map(|h| h * h).sum::<f64>().sqrt() / hw.len() as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// A curve over integer lags with 2σ half-widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub lags: Vec<usize>,
    pub value: Vec<f64>,
    pub half_width: Vec<f64>,
}

impl Curve {
    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }

    pub fn at(&self, lag: usize) -> Option<(f64, f64)> {
        self.lags.iter().position(|&l| l == lag).map(|i| (self.value[i], self.half_width[i]))
    }

    /// Equal-weight mean of curves on the same lag grid.
    pub fn aggregate(curves: &[&Curve]) -> Result<Curve> {
        let first = curves.first().ok_or_else(|| Error::Estimation("nothing to aggregate".into()))?;
        if curves.iter().any(|c| c.lags != first.lags) {
            return Err(Error::Estimation("curves are on different lag grids".into()));
        }
        let n = first.len();
        let value = (0..n).map(|i| mean(&curves.iter().map(|c| c.value[i]).collect::<Vec<_>>())).collect();
        let half_width = (0..n)
            .map(|i| mean_half_width(&curves.iter().map(|c| c.half_width[i]).collect::<Vec<_>>()))
            .collect();
        Ok(Curve { lags: first.lags.clone(), value, half_width })
    }
}

fn aggregate_bands(bands: &[Band]) -> Band {
    Band {
        value: mean(&bands.iter().map(|b| b.value).collect::<Vec<_>>()),
        half_width: mean_half_width(&bands.iter().map(|b| b.half_width).collect::<Vec<_>>()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    /// Next-day decision-price return r_d.
    DailyReturn,
    /// Strike slippage r_x = p_x / p_d − 1.
    Slippage,
}

impl Response {
    fn series(self, a: &AssetSeries<'_>) -> Vec<f64> {
        match self {
            Response::DailyReturn => a.r_d(),
            Response::Slippage => a.r_x(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqrtLawOptions {
    pub bins: usize,
    /// Participation range spanned by the bins; the data range when `None`.
    pub band: Option<(f64, f64)>,
}

impl Default for SqrtLawOptions {
    fn default() -> Self {
        SqrtLawOptions { bins: 12, band: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqrtLawBin {
    pub lower: f64,
    pub upper: f64,
    /// Geometric mean participation of the orders in the bin.
    pub participation: f64,
    /// Mean of ε r / σ.
    pub mean_impact: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqrtLawFit {
    pub y0: f64,
    pub delta: f64,
    pub response: Response,
    pub bins: Vec<SqrtLawBin>,
    /// RMS residual of the log-log fit over the bins used.
    pub residual: f64,
}

/// Fits `E[ε r / σ] = Y₀ (|q|/V)^δ` through log-spaced participation bins.
pub fn fit_sqrt_law(ds: &Dataset, response: Response, options: &SqrtLawOptions) -> Result<SqrtLawFit> {
    if options.bins < 3 {
        return Err(Error::Domain("square-root fit needs at least 3 bins".into()));
    }
    let mut points = Vec::new();
    for a in ds.assets() {
        let r = response.series(&a);
        for (rec, r) in a.records.iter().zip(r) {
            if rec.q != 0.0 && r.is_finite() {
                points.push((rec.participation(), rec.q.signum() * r / rec.sigma));
            }
        }
    }
    if points.is_empty() {
        return Err(Error::Estimation("no orders with an observed response".into()));
    }
    let (lo, hi) = options.band.unwrap_or_else(|| {
        points.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), (p, _)| (lo.min(*p), hi.max(*p)))
    });
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::Domain(format!("invalid participation band [{lo}, {hi}]")));
    }
    let nb = options.bins;
    let (llo, lhi) = (lo.ln(), hi.ln());
    let width = (lhi - llo) / nb as f64;
    let mut sums = vec![(0.0, 0.0, 0usize); nb];
    for (p, y) in &points {
        let lp = p.ln();
        if lp < llo - 1e-12 || lp > lhi + 1e-12 {
            continue;
        }
        let b = if width > 0.0 { (((lp - llo) / width) as usize).min(nb - 1) } else { 0 };
        sums[b].0 += lp;
        sums[b].1 += y;
        sums[b].2 += 1;
    }
    let bins: Vec<SqrtLawBin> = sums
        .iter()
        .enumerate()
        .filter(|(_, s)| s.2 > 0)
        .map(|(b, s)| SqrtLawBin {
            lower: (llo + b as f64 * width).exp(),
            upper: (llo + (b + 1) as f64 * width).exp(),
            participation: (s.0 / s.2 as f64).exp(),
            mean_impact: s.1 / s.2 as f64,
            count: s.2,
        })
        .collect();
    let usable: Vec<&SqrtLawBin> = bins.iter().filter(|b| b.mean_impact > 0.0).collect();
    if usable.len() < 3 {
        return Err(Error::Estimation(format!(
            "only {} participation bins have a positive mean impact; need at least 3",
            usable.len()
        )));
    }
    let x = Matrix::from_columns(&[vec![1.0; usable.len()], usable.iter().map(|b| b.participation.ln()).collect()])?;
    let y: Vec<f64> = usable.iter().map(|b| b.mean_impact.ln()).collect();
    let fit = regression::ols(&y, &x, &["log_y0".into(), "delta".into()])?;
    let (y0, delta) = (fit.coefficients[0].exp(), fit.coefficients[1]);
    if !(delta > 0.0 && delta < 1.5) {
        return Err(Error::Estimation(format!("fitted exponent {delta} is outside (0, 1.5)")));
    }
    let fitted = x.mul_vec(&fit.coefficients);
    let residual = (y.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    Ok(SqrtLawFit { y0, delta, response, bins, residual })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneCurve {
    pub zone: String,
    pub curve: Curve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawImpactResult {
    /// Equal-weight aggregate over the zones that had data. Lags are horizons in days.
    pub curve: Curve,
    pub zones: Vec<ZoneCurve>,
}

fn zone_names_with_data(ds: &Dataset) -> Vec<String> {
    let mut out = Vec::new();
    for z in ds.zones() {
        if ds.assets_in_zone(z).is_empty() {
            log::warn!("zone {z} has no records and is skipped");
        } else {
            out.push(z.clone());
        }
    }
    out
}

fn single_regressor_band(y: Vec<f64>, x: Vec<f64>, name: &str) -> Result<Band> {
    let set = SeriesSet::new().with("x", x).with("y", y);
    let spec = DesignSpec { streams: vec![StreamSpec { name: "x".into(), max_lag: 0 }], response: "y".into() };
    let d = regression::build_design(&[set], &spec)?;
    let fit = regression::ols(&d.response, &d.matrix, &[name.to_string()])?;
    regression::two_sigma_band(&fit, &[1.0])
}

/// Regresses the τ-day decision-price return on θ(t), separately for every
/// τ in `1..=tau_max` and every zone. τ = 1 is the daily return r_d.
pub fn fit_raw_impact(ds: &Dataset, y0: f64, delta: f64, tau_max: usize) -> Result<RawImpactResult> {
    if tau_max < 1 {
        return Err(Error::Domain("tau_max must be at least 1".into()));
    }
    let zones = zone_names_with_data(ds);
    if zones.is_empty() {
        return Err(Error::Estimation("every zone is empty".into()));
    }
    let zone_curves = zones
        .par_iter()
        .map(|z| {
            let assets = ds.assets_in_zone(z);
            let thetas: Vec<Vec<f64>> = assets.iter().map(|a| a.theta(y0, delta)).collect();
            let mut value = Vec::with_capacity(tau_max);
            let mut half_width = Vec::with_capacity(tau_max);
            for tau in 1..=tau_max {
                let mut x = Vec::new();
                let mut y = Vec::new();
                for (a, th) in assets.iter().zip(&thetas) {
                    x.extend_from_slice(th);
                    y.extend(a.forward_return(tau));
                }
                let band = single_regressor_band(y, x, "theta").map_err(|e| e.in_zone(z, Some(tau)))?;
                value.push(band.value);
                half_width.push(band.half_width);
            }
            Ok(ZoneCurve { zone: z.clone(), curve: Curve { lags: (1..=tau_max).collect(), value, half_width } })
        })
        .collect::<Result<Vec<_>>>()?;
    let curve = Curve::aggregate(&zone_curves.iter().map(|z| &z.curve).collect::<Vec<_>>())?;
    Ok(RawImpactResult { curve, zones: zone_curves })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeconvolveOptions {
    pub y0: f64,
    pub delta: f64,
    pub max_lag: usize,
    pub include_predictor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneDeconvolution {
    pub zone: String,
    pub g_theta: Vec<f64>,
    pub g_theta_se: Vec<f64>,
    pub g_pi: Option<Vec<f64>>,
    pub g_pi_se: Option<Vec<f64>>,
    /// Cumulative kernel on lags 0..=M.
    pub kernel: Curve,
    /// Slope of r_x on θ(t) alone.
    pub i_x_raw: Band,
    /// G_{θ,x}(0) from the full lagged regression of r_x.
    pub i_x_deconv: Band,
    pub n_obs: usize,
    pub residual_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconvolutionResult {
    pub options: DeconvolveOptions,
    /// Equal-weight mean of the zone values.
    pub g_theta: Vec<f64>,
    pub g_pi: Option<Vec<f64>>,
    pub g_pi_se: Option<Vec<f64>>,
    pub kernel: Curve,
    pub i_x_raw: Band,
    pub i_x_deconv: Band,
    pub zones: Vec<ZoneDeconvolution>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionProxy {
    Raw,
    #[default]
    Deconvolved,
}

impl DeconvolutionResult {
    pub fn i_x(&self, proxy: ExecutionProxy) -> Band {
        match proxy {
            ExecutionProxy::Raw => self.i_x_raw,
            ExecutionProxy::Deconvolved => self.i_x_deconv,
        }
    }

    pub fn normalized(&self, proxy: ExecutionProxy) -> Result<Curve> {
        normalize_by_execution(&self.kernel, self.i_x(proxy).value)
    }
}

fn asset_series_set(a: &AssetSeries<'_>, y0: f64, delta: f64) -> SeriesSet {
    SeriesSet::new()
        .with("theta", a.theta(y0, delta))
        .with("pi", a.pi())
        .with("r_d", a.r_d())
        .with("r_x", a.r_x())
}

fn deconvolve_zone(assets: &[AssetSeries<'_>], zone: &str, opts: &DeconvolveOptions) -> Result<ZoneDeconvolution> {
    let m = opts.max_lag;
    let sets: Vec<SeriesSet> = assets.iter().map(|a| asset_series_set(a, opts.y0, opts.delta)).collect();
    let mut streams = vec![StreamSpec { name: "theta".into(), max_lag: m }];
    if opts.include_predictor {
        streams.push(StreamSpec { name: "pi".into(), max_lag: m });
    }
    let spec = DesignSpec { streams: streams.clone(), response: "r_d".into() };
    let design = regression::build_design(&sets, &spec)?;
    let fit = regression::ols_design(&design)?;

    let g_theta = fit.coefficients[..=m].to_vec();
    let g_theta_se = (0..=m).map(|j| fit.std_error(j)).collect();
    let (g_pi, g_pi_se) = if opts.include_predictor {
        (
            Some(fit.coefficients[m + 1..].to_vec()),
            Some((m + 1..2 * (m + 1)).map(|j| fit.std_error(j)).collect()),
        )
    } else {
        (None, None)
    };
    let k = fit.coefficients.len();
    let mut value = Vec::with_capacity(m + 1);
    let mut half_width = Vec::with_capacity(m + 1);
    let mut acc = 0.0;
    for tau in 0..=m {
        acc += g_theta[tau];
        let w: Vec<f64> = (0..k).map(|j| if j <= tau { 1.0 } else { 0.0 }).collect();
        let b = regression::two_sigma_band(&fit, &w)?;
        value.push(acc);
        half_width.push(b.half_width);
    }
    let kernel = Curve { lags: (0..=m).collect(), value, half_width };

    let xspec = DesignSpec { streams, response: "r_x".into() };
    let xdesign = regression::build_design(&sets, &xspec)?;
    let xfit = regression::ols_design(&xdesign)?;
    let mut sel = vec![0.0; xfit.coefficients.len()];
    sel[0] = 1.0;
    let i_x_deconv = regression::two_sigma_band(&xfit, &sel)?;

    let (mut x, mut y) = (Vec::new(), Vec::new());
    for s in &sets {
        x.extend_from_slice(s.get("theta").unwrap_or_default());
        y.extend_from_slice(s.get("r_x").unwrap_or_default());
    }
    let i_x_raw = single_regressor_band(y, x, "theta[0]")?;

    Ok(ZoneDeconvolution {
        zone: zone.to_string(),
        g_theta,
        g_theta_se,
        g_pi,
        g_pi_se,
        kernel,
        i_x_raw,
        i_x_deconv,
        n_obs: fit.n_obs,
        residual_variance: fit.residual_variance,
    })
}

/// Joint lagged regression of r_d on θ(t−l) and optionally π(t−l), l = 0..=M,
/// per zone, plus the r_x regressions giving the execution-cost proxies.
pub fn deconvolve(ds: &Dataset, opts: &DeconvolveOptions) -> Result<DeconvolutionResult> {
    if opts.max_lag < 1 {
        return Err(Error::Domain("max_lag must be at least 1".into()));
    }
    if !(opts.y0 > 0.0 && opts.delta > 0.0 && opts.delta <= 1.5) {
        return Err(Error::Domain(format!("need Y0 > 0 and delta in (0, 1.5], got {} and {}", opts.y0, opts.delta)));
    }
    let zones = zone_names_with_data(ds);
    if zones.is_empty() {
        return Err(Error::Estimation("every zone is empty".into()));
    }
    let per_zone = zones
        .par_iter()
        .map(|z| deconvolve_zone(&ds.assets_in_zone(z), z, opts).map_err(|e| e.in_zone(z, None)))
        .collect::<Result<Vec<_>>>()?;

    let n = per_zone.len() as f64;
    let m = opts.max_lag;
    let g_theta = (0..=m).map(|l| per_zone.iter().map(|z| z.g_theta[l]).sum::<f64>() / n).collect();
    let (g_pi, g_pi_se) = if opts.include_predictor {
        let v = (0..=m)
            .map(|l| per_zone.iter().map(|z| z.g_pi.as_ref().map_or(0.0, |g| g[l])).sum::<f64>() / n)
            .collect();
        let se = (0..=m)
            .map(|l| mean_half_width(&per_zone.iter().map(|z| z.g_pi_se.as_ref().map_or(0.0, |g| g[l])).collect::<Vec<_>>()))
            .collect();
        (Some(v), Some(se))
    } else {
        (None, None)
    };
    let kernel = Curve::aggregate(&per_zone.iter().map(|z| &z.kernel).collect::<Vec<_>>())?;
    let i_x_raw = aggregate_bands(&per_zone.iter().map(|z| z.i_x_raw).collect::<Vec<_>>());
    let i_x_deconv = aggregate_bands(&per_zone.iter().map(|z| z.i_x_deconv).collect::<Vec<_>>());
    Ok(DeconvolutionResult { options: *opts, g_theta, g_pi, g_pi_se, kernel, i_x_raw, i_x_deconv, zones: per_zone })
}

/// Divides a kernel (and its bands) by the execution proxy, so that fair
/// pricing reads as the line y = 1.
pub fn normalize_by_execution(curve: &Curve, i_x: f64) -> Result<Curve> {
    if !(i_x.abs() >= NORMALIZATION_TOLERANCE) {
        return Err(Error::Normalization(i_x));
    }
    Ok(Curve {
        lags: curve.lags.clone(),
        value: curve.value.iter().map(|v| v / i_x).collect(),
        half_width: curve.half_width.iter().map(|h| h / i_x.abs()).collect(),
    })
}

/// Long-run price as a fraction of the peak under fair pricing, `1/(1+δ)`.
pub fn fair_plateau_fraction(delta: f64) -> f64 {
    1.0 / (1.0 + delta)
}

/// A meta-order executed at constant rate whose price impact after a fraction
/// `s` of the execution is `s^δ` (peak 1), followed by a fair-pricing
/// relaxation to its average execution price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairPricingFixture {
    pub delta: f64,
    pub peak: f64,
    /// Average impact paid over the execution.
    pub execution_impact: f64,
    /// Post-execution kernel on lags 0..=M.
    pub kernel: Curve,
}

impl FairPricingFixture {
    pub fn plateau_over_peak(&self) -> f64 {
        self.kernel.value[self.kernel.len() - 1] / self.peak
    }
}

pub fn fair_pricing_fixture(delta: f64, max_lag: usize, slices: usize) -> Result<FairPricingFixture> {
    if !(delta > 0.0) || slices == 0 {
        return Err(Error::Domain("fixture needs delta > 0 and at least one slice".into()));
    }
    let n = slices as f64;
    let execution_impact = (0..slices).map(|k| ((k as f64 + 0.5) / n).powf(delta)).sum::<f64>() / n;
    let kernel = Curve {
        lags: (0..=max_lag).collect(),
        value: vec![execution_impact; max_lag + 1],
        half_width: vec![0.0; max_lag + 1],
    };
    Ok(FairPricingFixture { delta, peak: 1.0, execution_impact, kernel })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// Decay exponent, positive for a decaying curve.
    pub beta: f64,
    pub amplitude: f64,
    pub beta_se: f64,
    /// Abscissae actually used (positive values only).
    pub taus: Vec<f64>,
    pub r_squared: f64,
}

/// OLS of log value on log τ. Points with non-positive values are ignored.
pub fn fit_power_law(taus: &[f64], values: &[f64]) -> Result<PowerLawFit> {
    if taus.len() != values.len() {
        return Err(Error::Domain("taus and values differ in length".into()));
    }
    let used: Vec<(f64, f64)> = taus
        .iter()
        .zip(values)
        .filter(|(t, v)| **t > 0.0 && **v > 0.0 && t.is_finite() && v.is_finite())
        .map(|(t, v)| (*t, *v))
        .collect();
    if used.len() < 3 {
        return Err(Error::Estimation(format!("power-law fit needs 3 positive points, got {}", used.len())));
    }
    let lx: Vec<f64> = used.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = used.iter().map(|p| p.1.ln()).collect();
    let x = Matrix::from_columns(&[vec![1.0; lx.len()], lx])?;
    let fit = regression::ols(&ly, &x, &["log_amplitude".into(), "slope".into()])?;
    let my = mean(&ly);
    let tss: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let rss = fit.residual_variance * (ly.len() - 2) as f64;
    Ok(PowerLawFit {
        beta: -fit.coefficients[1],
        amplitude: fit.coefficients[0].exp(),
        beta_se: fit.std_error(1),
        taus: used.iter().map(|p| p.0).collect(),
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 1.0 },
    })
}

/// Power-law decay of a reconstructed kernel over `lags`. Lag `l` is the
/// price `l + 1` days after the decision, so the fit uses elapsed days `l + 1`.
pub fn fit_kernel_decay(kernel: &Curve, lags: RangeInclusive<usize>) -> Result<PowerLawFit> {
    let mut taus = Vec::new();
    let mut values = Vec::new();
    for (l, v) in kernel.lags.iter().zip(&kernel.value) {
        if lags.contains(l) {
            taus.push((*l + 1) as f64);
            values.push(*v);
        }
    }
    fit_power_law(&taus, &values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCurve {
    pub delta: f64,
    pub normalized: Curve,
    pub i_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRobustness {
    pub curves: Vec<DeltaCurve>,
    /// Largest |a(τ) − b(τ)| over lags and pairs of normalized curves.
    pub max_sup_distance: f64,
}

/// Deconvolves once per assumed δ and compares the normalized kernels.
pub fn delta_robustness(
    ds: &Dataset,
    deltas: &[f64],
    base: &DeconvolveOptions,
    proxy: ExecutionProxy,
) -> Result<DeltaRobustness> {
    if let Some(d) = deltas.iter().find(|d| !(**d > 0.0 && **d <= 1.5)) {
        return Err(Error::Domain(format!("assumed delta {d} is outside (0, 1.5]")));
    }
    let curves = deltas
        .par_iter()
        .map(|&delta| {
            let r = deconvolve(ds, &DeconvolveOptions { delta, ..*base })?;
            let i_x = r.i_x(proxy).value;
            Ok(DeltaCurve { delta, normalized: normalize_by_execution(&r.kernel, i_x)?, i_x })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut max_sup_distance = 0.0_f64;
    for (i, a) in curves.iter().enumerate() {
        for b in &curves[i + 1..] {
            for (x, y) in a.normalized.value.iter().zip(&b.normalized.value) {
                max_sup_distance = max_sup_distance.max((x - y).abs());
            }
        }
    }
    Ok(DeltaRobustness { curves, max_sup_distance })
}
