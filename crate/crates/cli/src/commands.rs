use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use impact_core::estimation::{
    self, Curve, DeconvolveOptions, ExecutionProxy, Response, SqrtLawFit, SqrtLawOptions,
};
use impact_core::market_sim::{self, KernelFamily};
use impact_core::report;
use impact_core::toy_model::{self, ToyModelParams};
use log::info;
use serde::Serialize;
use serde_json::json;

use crate::config::{require_input, DeltaPolicy, EstimateConfig, FileConfig, LagAxis, ToyConfig};
use crate::output::{config_hash, file_sha256, guard_outputs, write_json, RunStamp};
use crate::{Common, EstimateArgs, PowerLawArgs, RegroupArgs};

fn out_dir(common: &Common, file: &FileConfig) -> anyhow::Result<PathBuf> {
    let dir = common.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn toy_params(cfg: &ToyConfig, seed: u64) -> impact_core::Result<ToyModelParams> {
    let mut p = match cfg.kappa {
        Some(kappa) => ToyModelParams::from_kappa(cfg.gamma_signal, kappa, cfg.n_steps, seed)?,
        None => ToyModelParams {
            gamma_signal: cfg.gamma_signal,
            gamma_impact: cfg.gamma_impact,
            gain: cfg.gain,
            risk_sq: cfg.risk_sq,
            sigma: cfg.sigma,
            dt: ToyModelParams::default_dt(cfg.gamma_signal),
            n_steps: cfg.n_steps,
            seed,
            price_noise: 0.0,
        },
    };
    if let Some(dt) = cfg.dt {
        p.dt = dt;
    }
    p.price_noise = cfg.price_noise;
    p.validate()?;
    Ok(p)
}

pub fn run_toy(common: &Common) -> anyhow::Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let cfg = &file.toy;
    let seed = common.seed.or(file.seed).unwrap_or(cfg.seed);
    let max_lag = common.max_lag.or(file.max_lag).unwrap_or(cfg.max_lag);
    let params = toy_params(cfg, seed)?;
    let solution = toy_model::toy_solution(&params)?;
    let hash = config_hash(&json!({
        "command": "toy", "params": params, "replicas": cfg.replicas, "max_lag": max_lag
    }))?;
    let stamp = RunStamp { command: "toy", config_hash: hash.clone(), seed: Some(seed) };

    let dir = out_dir(common, &file)?;
    let analytic_path = dir.join("toy_analytic.csv");
    let mc_path = dir.join("toy_mc.csv");
    let solution_path = dir.join("toy_solution.json");
    guard_outputs(&[analytic_path.clone(), mc_path.clone(), solution_path.clone()], &hash, common.force)?;

    let lags = toy_model::lag_grid(max_lag);
    let analytic: Vec<f64> = lags
        .iter()
        .map(|&t| toy_model::raw_impact_analytic(solution.z, params.gamma_signal, t))
        .collect();
    info!("toy: z = {}, {} replica(s) of {} steps", solution.z, cfg.replicas, params.n_steps);
    let mc = toy_model::replicate_raw_impact(&params, cfg.replicas, &lags)?;

    report::analytic_table(&lags, &analytic).write(&analytic_path, &stamp.manifest_line())?;
    report::toy_mc_table(&mc, &analytic).write(&mc_path, &stamp.manifest_line())?;
    write_json(
        &solution_path,
        &json!({
            "config_hash": hash,
            "seed": seed,
            "params": params,
            "solution": solution,
            "plateau": solution.plateau(),
            "replicas": cfg.replicas,
        }),
    )?;
    println!("z = {}  omega = {}  plateau = {}", solution.z, solution.omega, solution.plateau());
    Ok(())
}

pub fn run_simulate(common: &Common) -> anyhow::Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let mut cfg = file.simulate.clone();
    if let Some(s) = common.seed.or(file.seed) {
        cfg.seed = s;
    }
    cfg.validate()?;
    let hash = config_hash(&json!({"command": "simulate", "config": cfg}))?;
    let stamp = RunStamp { command: "simulate", config_hash: hash.clone(), seed: Some(cfg.seed) };
    let dir = out_dir(common, &file)?;
    let path = dir.join("dataset.csv");
    guard_outputs(std::slice::from_ref(&path), &hash, common.force)?;

    info!("simulating {} assets x {} days", cfg.n_assets(), cfg.days);
    let ds = market_sim::simulate_dataset(&cfg)?;
    market_sim::write_dataset(&ds, &path, Some(&stamp.manifest_line()))?;
    println!("wrote {} records to {}", ds.len(), path.display());
    Ok(())
}

pub fn run_regroup(common: &Common, args: &RegroupArgs) -> anyhow::Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let input = require_input(args.input.clone().or(file.regroup.input.clone()))?;
    let k = args.regroup.unwrap_or(file.regroup.k);
    let hash = config_hash(&json!({"command": "regroup", "k": k, "input": file_sha256(&input)?}))?;
    let ds = market_sim::read_dataset(&input)?;
    let seed = ds.manifest.as_ref().map(|m| m.config.seed);
    let stamp = RunStamp { command: "regroup", config_hash: hash.clone(), seed };
    let dir = out_dir(common, &file)?;
    let path = dir.join(format!("dataset_k{k}.csv"));
    guard_outputs(std::slice::from_ref(&path), &hash, common.force)?;
    let grouped = market_sim::regroup_days(&ds, k)?;
    market_sim::write_dataset(&grouped, &path, Some(&stamp.manifest_line()))?;
    println!("wrote {} records to {}", grouped.len(), path.display());
    Ok(())
}

fn read_table(path: &Path) -> anyhow::Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(impact_core::Error::from)?;
    let header = rdr.headers().map_err(impact_core::Error::from)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for r in rdr.records() {
        rows.push(r.map_err(impact_core::Error::from)?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

pub fn run_fit_powerlaw(common: &Common, args: &PowerLawArgs) -> anyhow::Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let cfg = &file.fit_powerlaw;
    let input = require_input(args.input.clone().or(cfg.input.clone()))?;
    let lag_min = args.lag_min.unwrap_or(cfg.lag_min);
    let lag_max = common.max_lag.or(cfg.lag_max).or(file.max_lag);
    let axis = args.axis.unwrap_or(cfg.axis);
    let (header, rows) = read_table(&input)?;
    let col = match args.column.clone().or(cfg.column.clone()) {
        Some(name) => header
            .iter()
            .position(|h| *h == name)
            .with_context(|| format!("column {name} not found in {}", input.display()))
            .map_err(|e| impact_core::Error::Dataset(format!("{e:#}")))?,
        None => 1,
    };
    if col >= header.len() {
        return Err(impact_core::Error::Dataset(format!("{} has no value column", input.display())).into());
    }
    let mut taus = Vec::new();
    let mut values = Vec::new();
    for r in &rows {
        let lag: f64 = r[0].parse().map_err(|_| impact_core::Error::Dataset(format!("bad lag `{}`", r[0])))?;
        let v: f64 = r[col].parse().map_err(|_| impact_core::Error::Dataset(format!("bad value `{}`", r[col])))?;
        if lag < lag_min as f64 || lag_max.is_some_and(|m| lag > m as f64) {
            continue;
        }
        taus.push(match axis {
            LagAxis::Elapsed => lag + 1.0,
            LagAxis::Lag => lag,
        });
        values.push(v);
    }
    let fit = estimation::fit_power_law(&taus, &values)?;
    let hash = config_hash(&json!({
        "command": "fit-powerlaw", "input": file_sha256(&input)?, "column": header[col],
        "lag_min": lag_min, "lag_max": lag_max, "axis": axis,
    }))?;
    let dir = out_dir(common, &file)?;
    let path = dir.join("powerlaw.json");
    guard_outputs(std::slice::from_ref(&path), &hash, common.force)?;
    // Carry the seed of the run that produced the table, if it recorded one.
    let seed = market_sim::read_manifest_line(&input)?
        .and_then(|l| serde_json::from_str::<serde_json::Value>(&l).ok())
        .and_then(|v| v.get("seed").and_then(|s| s.as_u64()));
    write_json(
        &path,
        &json!({"config_hash": hash, "seed": seed, "column": header[col], "axis": axis, "fit": fit}),
    )?;
    println!("beta = {}  amplitude = {}  r2 = {}", fit.beta, fit.amplitude, fit.r_squared);
    Ok(())
}

#[derive(Serialize)]
struct ResolvedEstimate<'a> {
    command: &'static str,
    input_sha256: String,
    config: &'a EstimateConfig,
}

#[derive(Serialize)]
struct Summary {
    config_hash: String,
    seed: Option<u64>,
    records: usize,
    zones: Vec<String>,
    y0: f64,
    delta: f64,
    delta_source: String,
    sqrt_law: Option<SqrtLawFit>,
    slippage_sqrt_law: Option<SqrtLawFit>,
    include_predictor: bool,
    max_lag: usize,
    ix_mode: ExecutionProxy,
    i_x: f64,
    i_x_raw: f64,
    i_x_raw_band: f64,
    i_x_deconv: f64,
    i_x_deconv_band: f64,
    beta: f64,
    beta_se: f64,
    amplitude: f64,
    power_law_lags: (usize, usize),
    generative_beta: Option<f64>,
    g_theta: Vec<f64>,
    g_pi: Option<Vec<f64>>,
    delta_max_sup_distance: f64,
    regroup: Option<usize>,
}

pub fn run_estimate(common: &Common, args: &EstimateArgs) -> anyhow::Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let mut cfg = file.estimate.clone();
    if let Some(p) = &args.input {
        cfg.input = Some(p.clone());
    }
    if let Some(d) = args.delta {
        cfg.delta = d;
    }
    if args.no_predictor {
        cfg.predictor = false;
    }
    if let Some(k) = args.regroup {
        cfg.regroup = Some(k);
    }
    if let Some(m) = args.ix_mode {
        cfg.ix_mode = m;
    }
    if let Some(m) = common.max_lag.or(file.max_lag) {
        cfg.max_lag = m;
    }
    if cfg.regroup == Some(0) {
        return Err(impact_core::Error::Domain("--regroup must be at least 1".into()).into());
    }
    let input = require_input(cfg.input.clone())?;
    let hash = config_hash(&ResolvedEstimate { command: "estimate", input_sha256: file_sha256(&input)?, config: &cfg })?;

    let ds = market_sim::read_dataset(&input)?;
    if ds.is_empty() {
        bail!(impact_core::Error::Dataset(format!("{} has no records", input.display())));
    }
    let seed = ds.manifest.as_ref().map(|m| m.config.seed);
    let stamp = RunStamp { command: "estimate", config_hash: hash.clone(), seed };
    let manifest = stamp.manifest_line();

    let dir = out_dir(common, &file)?;
    let p = |name: &str| dir.join(name);
    let mut outputs = vec![
        p("sqrt_law.csv"),
        p("raw_impact.csv"),
        p("deconvolved.csv"),
        p("delta_overlay.csv"),
        p("zones.csv"),
        p("summary.json"),
    ];
    if cfg.regroup.is_some() {
        outputs.push(p("regrouped.csv"));
    }
    guard_outputs(&outputs, &hash, common.force)?;

    let band = ds
        .manifest
        .as_ref()
        .map(|m| (m.config.participation_min, m.config.participation_max));
    let sqrt_opts = SqrtLawOptions { bins: cfg.sqrt_bins, band };
    let proxy: ExecutionProxy = cfg.ix_mode.into();

    info!("fitting square-root law");
    let sqrt_fit = estimation::fit_sqrt_law(&ds, Response::DailyReturn, &sqrt_opts);
    let (y0, delta, delta_source, sqrt_law) = match cfg.delta {
        DeltaPolicy::Fit => {
            let f = sqrt_fit?;
            (f.y0, f.delta, "fit".to_string(), Some(f))
        }
        DeltaPolicy::Fixed(d) => (cfg.y0, d, "fixed".to_string(), sqrt_fit.ok()),
    };
    let slippage_sqrt_law = estimation::fit_sqrt_law(&ds, Response::Slippage, &sqrt_opts).ok();

    info!("raw impact regressions");
    let raw = estimation::fit_raw_impact(&ds, y0, delta, cfg.max_lag)?;

    info!("deconvolution");
    let base = DeconvolveOptions { y0, delta, max_lag: cfg.max_lag, include_predictor: cfg.predictor };
    let trades = estimation::deconvolve(&ds, &DeconvolveOptions { include_predictor: false, ..base })?;
    let full = if cfg.predictor {
        Some(estimation::deconvolve(&ds, &DeconvolveOptions { include_predictor: true, ..base })?)
    } else {
        None
    };
    let main = full.as_ref().unwrap_or(&trades);
    let i_x = main.i_x(proxy).value;
    let main_norm = main.normalized(proxy)?;
    let trades_norm = estimation::normalize_by_execution(&trades.kernel, i_x)?;
    let power = estimation::fit_kernel_decay(&main_norm, 1..=cfg.max_lag)?;

    info!("delta robustness over {:?}", cfg.deltas);
    let robustness = estimation::delta_robustness(&ds, &cfg.deltas, &base, proxy)?;

    let regrouped: Option<(usize, Curve)> = match cfg.regroup {
        Some(k) => {
            let grouped = market_sim::regroup_days(&ds, k)?;
            let m = (cfg.max_lag / k).max(1);
            let r = estimation::deconvolve(&grouped, &DeconvolveOptions { max_lag: m, ..base })?;
            Some((k, r.normalized(proxy)?))
        }
        None => None,
    };

    if let Some(f) = &sqrt_law {
        report::sqrt_law_table(f).write(&p("sqrt_law.csv"), &manifest)?;
    } else {
        report::Table::new(&["bin_lower", "bin_upper", "participation", "mean_impact", "count"])
            .write(&p("sqrt_law.csv"), &manifest)?;
    }
    report::raw_table(&raw.curve).write(&p("raw_impact.csv"), &manifest)?;
    match &full {
        Some(f) => {
            let full_norm = estimation::normalize_by_execution(&f.kernel, i_x)?;
            report::deconv_pair_table(&trades_norm, &full_norm)?.write(&p("deconvolved.csv"), &manifest)?;
        }
        None => {
            let mut t = report::Table::new(&["tau", "i_deconv_trades", "band"]);
            for i in 0..trades_norm.len() {
                t.push_nums(&[trades_norm.lags[i] as f64, trades_norm.value[i], trades_norm.half_width[i]]);
            }
            t.write(&p("deconvolved.csv"), &manifest)?;
        }
    }
    report::delta_overlay_table(&robustness).write(&p("delta_overlay.csv"), &manifest)?;
    report::zone_table(main, proxy == ExecutionProxy::Raw).write(&p("zones.csv"), &manifest)?;
    if let Some((k, c)) = &regrouped {
        report::regrouped_table(c, *k).write(&p("regrouped.csv"), &manifest)?;
    }

    let generative_beta = ds.manifest.as_ref().and_then(|m| match m.config.kernel {
        KernelFamily::PowerLaw { beta, .. } => Some(beta),
        _ => None,
    });
    let summary = Summary {
        config_hash: hash,
        seed,
        records: ds.len(),
        zones: main.zones.iter().map(|z| z.zone.clone()).collect(),
        y0,
        delta,
        delta_source,
        sqrt_law,
        slippage_sqrt_law,
        include_predictor: cfg.predictor,
        max_lag: cfg.max_lag,
        ix_mode: proxy,
        i_x,
        i_x_raw: main.i_x_raw.value,
        i_x_raw_band: main.i_x_raw.half_width,
        i_x_deconv: main.i_x_deconv.value,
        i_x_deconv_band: main.i_x_deconv.half_width,
        beta: power.beta,
        beta_se: power.beta_se,
        amplitude: power.amplitude,
        power_law_lags: (1, cfg.max_lag),
        generative_beta,
        g_theta: main.g_theta.clone(),
        g_pi: main.g_pi.clone(),
        delta_max_sup_distance: robustness.max_sup_distance,
        regroup: cfg.regroup,
    };
    write_json(&p("summary.json"), &summary)?;
    println!(
        "Y0 = {:.4}  delta = {:.4}  I_x = {:.4}  beta = {:.4} +/- {:.4}",
        y0,
        delta,
        i_x,
        power.beta,
        2.0 * power.beta_se
    );
    Ok(())
}
