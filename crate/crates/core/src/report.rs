//! Plot-ready CSV tables.
//!
//! Every table starts with a `# manifest: <json>` line identifying the run.
//! Numbers are written in their shortest round-trip form, so tables are
//! byte-identical across runs with the same inputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimation::{Curve, DeconvolutionResult, DeltaRobustness, SqrtLawFit};
use crate::toy_model::RawImpactCurve;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || v.is_nan() || v.is_infinite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn push_nums(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|v| fmt_num(*v)).collect());
    }

    pub fn write(&self, path: &Path, manifest: &str) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "# manifest: {manifest}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `tau,i_raw` for lags in days.
pub fn analytic_table(taus: &[f64], values: &[f64]) -> Table {
    let mut t = Table::new(&["tau", "i_raw"]);
    for (tau, v) in taus.iter().zip(values) {
        t.push_nums(&[*tau, *v]);
    }
    t
}

/// Monte Carlo toy curve with its 2σ half-width and the closed form.
pub fn toy_mc_table(curve: &RawImpactCurve, analytic: &[f64]) -> Table {
    let mut t = Table::new(&["tau", "i_raw", "band", "analytic"]);
    for i in 0..curve.tau.len() {
        t.push_nums(&[curve.tau[i], curve.value[i], 2.0 * curve.std_err[i], analytic[i]]);
    }
    t
}

pub fn raw_table(curve: &Curve) -> Table {
    let mut t = Table::new(&["tau", "i_raw", "band"]);
    for i in 0..curve.len() {
        t.push_nums(&[curve.lags[i] as f64, curve.value[i], curve.half_width[i]]);
    }
    t
}

/// Normalized kernels without and with the predictor regressors.
pub fn deconv_pair_table(trades_only: &Curve, full: &Curve) -> Result<Table> {
    if trades_only.lags != full.lags {
        return Err(Error::Domain("kernels are on different lag grids".into()));
    }
    let mut t = Table::new(&["tau", "i_deconv_trades", "band", "i_deconv_full", "band"]);
    for i in 0..full.len() {
        t.push_nums(&[
            full.lags[i] as f64,
            trades_only.value[i],
            trades_only.half_width[i],
            full.value[i],
            full.half_width[i],
        ]);
    }
    Ok(t)
}

/// One value and band column per assumed δ.
pub fn delta_overlay_table(r: &DeltaRobustness) -> Table {
    let mut header = vec!["tau".to_string()];
    for c in &r.curves {
        header.push(format!("delta_{}", c.delta));
        header.push(format!("band_{}", c.delta));
    }
    let mut t = Table { header, rows: Vec::new() };
    if let Some(first) = r.curves.first() {
        for i in 0..first.normalized.len() {
            let mut row = vec![first.normalized.lags[i] as f64];
            for c in &r.curves {
                row.push(c.normalized.value[i]);
                row.push(c.normalized.half_width[i]);
            }
            t.push_nums(&row);
        }
    }
    t
}

/// Per-zone kernels, each normalized by its own execution proxy.
pub fn zone_table(r: &DeconvolutionResult, raw_proxy: bool) -> Table {
    let mut t = Table::new(&["zone", "tau", "i_deconv", "band", "i_x", "n_obs"]);
    for z in &r.zones {
        let ix = if raw_proxy { z.i_x_raw.value } else { z.i_x_deconv.value };
        for i in 0..z.kernel.len() {
            t.push(vec![
                z.zone.clone(),
                z.kernel.lags[i].to_string(),
                fmt_num(z.kernel.value[i] / ix),
                fmt_num(z.kernel.half_width[i] / ix.abs()),
                fmt_num(ix),
                z.n_obs.to_string(),
            ]);
        }
    }
    t
}

pub fn sqrt_law_table(fit: &SqrtLawFit) -> Table {
    let mut t = Table::new(&["bin_lower", "bin_upper", "participation", "mean_impact", "count"]);
    for b in &fit.bins {
        t.push(vec![
            fmt_num(b.lower),
            fmt_num(b.upper),
            fmt_num(b.participation),
            fmt_num(b.mean_impact),
            b.count.to_string(),
        ]);
    }
    t
}

/// Kernel estimated on k-day blocks; `lag_days` is the lag in original days.
pub fn regrouped_table(curve: &Curve, k: usize) -> Table {
    let mut t = Table::new(&["tau", "lag_days", "i_deconv", "band"]);
    for i in 0..curve.len() {
        t.push(vec![
            curve.lags[i].to_string(),
            (curve.lags[i] * k).to_string(),
            fmt_num(curve.value[i]),
            fmt_num(curve.half_width[i]),
        ]);
    }
    t
}
