use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use calsel::backtest::{run_backtest, BacktestInput, BacktestReport};
use calsel::cals::{SieveConfig, DEFAULT_K, DEFAULT_M};
use calsel::el::{self, ElProblem};
use calsel::garch_sim::{self, GarchParams, InnovationDist, SimSpec};
use calsel::montecarlo::{self, ReproConfig, ReproTable};
use calsel::risk::{self, ResidualSource, RollingConfig};
use calsel::Tail;

use crate::config::{Cadence, List, Resolver, Switch};
use crate::io::{self, num, opt_num};
use crate::{BacktestArgs, CliError, ForecastArgs, ReproArgs, SimulateArgs, TauArgs};

fn parse_dist(s: &str) -> Result<InnovationDist, CliError> {
    s.parse::<InnovationDist>().map_err(CliError::from)
}

fn out_path(r: &Resolver, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>, CliError> {
    Ok(flag.or(r.unrecorded::<String>(key)?.map(PathBuf::from)))
}

fn input_path(r: &mut Resolver, key: &str, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
    r.require::<String>(key, flag.map(|p| p.display().to_string())).map(PathBuf::from)
}

fn to_json_string(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

pub fn simulate(a: SimulateArgs, r: &mut Resolver) -> Result<(), CliError> {
    let n: usize = r.require("n", a.n)?;
    let beta0 = r.opt("beta0", a.beta0)?;
    let beta = r.opt::<List<f64>>("beta", a.beta)?;
    let gamma = r.opt::<List<f64>>("gamma", a.gamma)?;
    let params = match (beta0, beta, gamma) {
        (None, None, None) => GarchParams::case(r.get("case", a.case, 1u8)?)?,
        (Some(b0), Some(b), Some(g)) => {
            if r.opt("case", a.case)?.is_some() {
                return Err(CliError::Usage("--case conflicts with custom coefficients".into()));
            }
            GarchParams::new(b0, b.0, g.0)?
        }
        _ => return Err(CliError::Usage("custom coefficients need --beta0, --beta and --gamma together".into())),
    };
    let dist = parse_dist(&r.get("dist", a.dist, "normal".to_string())?)?;
    let burn_in = r.get("burn-in", a.burn_in, garch_sim::DEFAULT_BURN_IN)?;
    let alpha = r.get("alpha", a.alpha, 0.05)?;
    let tail = Tail::from_alpha(alpha);
    tail.check_alpha(alpha)?;
    let seed = r.seed(a.seed)?;
    let out = out_path(r, "out", a.out)?;

    let spec = SimSpec { n, burn_in, strict_init: false };
    let path = garch_sim::simulate(&params, &dist, &spec, seed, 0)?;
    let truth = garch_sim::true_conditional_risks(&path, &dist, alpha, tail)?;
    r.record("generator", path.generator);
    r.record("stream", 0);
    let rows: Vec<Vec<String>> = (0..n)
        .map(|t| {
            vec![
                t.to_string(),
                num(path.returns[t]),
                num(path.sigmas[t]),
                num(path.innovations[t]),
                num(truth[t].0),
                num(truth[t].1),
            ]
        })
        .collect();
    let csv = io::render_csv(
        &io::provenance_header("simulate", r.resolved()),
        &["t", "return", "sigma", "innovation", "var_true", "es_true"],
        &rows,
    )?;
    io::emit(out.as_deref(), &csv)
}

fn parse_residuals(s: &str) -> Result<ResidualSource, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "refined" => Ok(ResidualSource::Refined),
        "preliminary" => Ok(ResidualSource::Preliminary),
        other => Err(CliError::Usage(format!("--residuals must be refined or preliminary, got `{other}`"))),
    }
}

pub fn forecast(a: ForecastArgs, r: &mut Resolver) -> Result<(), CliError> {
    let input = input_path(r, "input", a.input)?;
    let col = r.get("col", a.col, "return".to_string())?;
    let window = r.get("window", a.window, 500usize)?;
    let m = r.get("m", a.m, DEFAULT_M)?;
    let k = r.get("k", a.k, DEFAULT_K)?;
    let alpha = r.get("alpha", a.alpha, 0.05)?;
    let tail: Tail = r.get("tail", a.tail, Tail::from_alpha(alpha))?;
    let p = r.get("p", a.p, 1usize)?;
    let q = r.get("q", a.q, 1usize)?;
    let refit_every = r.get("refit-every", a.refit_every, Cadence(1))?;
    let residuals = parse_residuals(&r.get("residuals", a.residuals, "refined".to_string())?)?;
    let el_fallback = r.get("el-fallback", a.el_fallback, Switch(true))?;
    let min_el_n = r.get("min-el-n", a.min_el_n, el::DEFAULT_MIN_N)?;
    let grid_step = r.get("grid-step", a.grid_step, 1e-4)?;
    let with_stderr = r.get("stderr", a.stderr, Switch(false))?;
    let out = out_path(r, "out", a.out)?;
    let summary = out_path(r, "summary", a.summary)?.or_else(|| out.as_ref().map(|o| o.with_extension("json")));
    let tau_out = out_path(r, "tau-out", a.tau_out)?;

    let returns = io::read_column(&input, &col)?;
    let config = RollingConfig {
        window,
        sieve: SieveConfig::uniform(m, k)?,
        alpha,
        tail,
        p,
        q,
        refit_every: refit_every.0,
        residuals,
        el_fallback: el_fallback.0,
        grid_step,
        min_el_n,
        with_stderr: with_stderr.0,
    };
    let output = risk::rolling_forecast(&returns, &config)?;

    let mut rows: Vec<(usize, Vec<String>)> = output
        .forecasts
        .iter()
        .map(|f| {
            (
                f.date_index,
                vec![
                    f.date_index.to_string(),
                    opt_num(f.realized),
                    num(f.var_tilde),
                    num(f.es_tilde),
                    num(f.var_hat),
                    num(f.es_hat),
                    num(f.sigma_tilde),
                    num(f.sigma_hat),
                    num(f.tau_hat),
                    num(f.mu_hat),
                    opt_num(f.stderr_var),
                    opt_num(f.stderr_es),
                    f.flags.render(),
                ],
            )
        })
        .collect();
    for fail in &output.failures {
        let mut row = vec![fail.date_index.to_string(), opt_num(returns.get(fail.date_index).copied())];
        row.extend(std::iter::repeat_n(String::new(), 10));
        row.push(format!("skipped: {}", fail.message));
        rows.push((fail.date_index, row));
    }
    rows.sort_by_key(|(d, _)| *d);
    let rows: Vec<Vec<String>> = rows.into_iter().map(|(_, r)| r).collect();
    let preamble = io::provenance_header("forecast", r.resolved());
    let csv = io::render_csv(
        &preamble,
        &[
            "date_index",
            "realized",
            "var_tilde",
            "es_tilde",
            "var_hat",
            "es_hat",
            "sigma_tilde",
            "sigma_hat",
            "tau_hat",
            "mu_hat",
            "stderr_var",
            "stderr_es",
            "flags",
        ],
        &rows,
    )?;
    io::emit(out.as_deref(), &csv)?;

    if let Some(path) = tau_out {
        let tau_rows: Vec<Vec<String>> =
            output.tau_series().into_iter().map(|(d, t)| vec![d.to_string(), num(t)]).collect();
        io::emit(Some(&path), &io::render_csv(&preamble, &["date_index", "tau_hat"], &tau_rows)?)?;
    }

    let taus: Vec<f64> = output.forecasts.iter().map(|f| f.tau_hat).collect();
    let mut flag_counts: BTreeMap<String, usize> = BTreeMap::new();
    for f in &output.forecasts {
        for name in f.flags.render().split('|').filter(|s| !s.is_empty()) {
            *flag_counts.entry(name.to_string()).or_default() += 1;
        }
    }
    if !output.failures.is_empty() {
        eprintln!("calsel: {} of {} windows skipped", output.failures.len(), returns.len() - window);
    }
    if let Some(path) = summary {
        let tau_summary = if taus.is_empty() {
            serde_json::Value::Null
        } else {
            json!({
                "mean": calsel::stats::mean(&taus),
                "min": taus.iter().copied().fold(f64::INFINITY, f64::min),
                "max": taus.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
        };
        let doc = json!({
            "command": "forecast",
            "version": env!("CARGO_PKG_VERSION"),
            "config": r.to_json(),
            "n_returns": returns.len(),
            "forecasts": output.forecasts.len(),
            "skipped": output.failures,
            "flag_counts": flag_counts,
            "tau_hat": tau_summary,
        });
        io::emit(Some(&path), &to_json_string(&doc))?;
    }
    Ok(())
}

fn render_backtest(report: &BacktestReport) -> String {
    let mut s = format!(
        "coverage rate  {:.4}  ({} of {}, expected {:.4})\n",
        report.coverage_rate, report.exceedances, report.n, report.alpha_exc
    );
    s.push_str(&format!("Kupiec         LR {:.4}  p {:.4}\n", report.kupiec.statistic, report.kupiec.p_value));
    match &report.dq {
        Some(d) => s.push_str(&format!("DQ             stat {:.4}  p {:.4}  (dof {})\n", d.statistic, d.p_value, d.dof)),
        None => s.push_str("DQ             not available\n"),
    }
    match &report.es_bootstrap {
        Some(b) => {
            let p = if b.below_resolution { format!("< {}", 1.0 / b.n_boot as f64) } else { format!("{:.4}", b.p_value) };
            s.push_str(&format!("ES bootstrap   mean excess {:.4}  p {p}  ({} exceedances)\n", b.mean_excess, b.n_exceed));
        }
        None => s.push_str("ES bootstrap   not available\n"),
    }
    for f in &report.flags {
        s.push_str(&format!("flag: {f}\n"));
    }
    s
}

pub fn backtest(a: BacktestArgs, r: &mut Resolver) -> Result<(), CliError> {
    let forecasts = input_path(r, "forecasts", a.forecasts)?;
    let table = io::read_table(&forecasts)?;
    r.inherit(table.provenance.clone());
    let alpha = r.get("alpha", a.alpha, 0.05)?;
    let tail: Tail = r.get("tail", a.tail, Tail::from_alpha(alpha))?;
    let measure = r.get("measure", a.measure, "hat".to_string())?;
    if measure != "hat" && measure != "tilde" {
        return Err(CliError::Usage(format!("--measure must be hat or tilde, got `{measure}`")));
    }
    let n_boot = r.get("n-boot", a.n_boot, calsel::backtest::DEFAULT_N_BOOT)?;
    let standardize = r.get("standardize", a.standardize, Switch(true))?;
    let returns_path = r.opt::<String>("returns", a.returns.map(|p| p.display().to_string()))?;
    let col = r.get("col", a.col, "return".to_string())?;
    let seed = r.seed(a.seed)?;
    let out = out_path(r, "out", a.out)?;

    let var_col = table.optional_column(&format!("var_{measure}"), &forecasts)?;
    let es_col = table.optional_column(&format!("es_{measure}"), &forecasts)?;
    let sigma_col = table.optional_column(&format!("sigma_{measure}"), &forecasts)?;
    let (Some(var_col), Some(es_col)) = (var_col, es_col) else {
        return Err(CliError::Data(format!("{} lacks var_{measure}/es_{measure} columns", forecasts.display())));
    };
    let realized_col = table.optional_column("realized", &forecasts)?;
    let dates = table.optional_column("date_index", &forecasts)?;
    let returns = returns_path.as_ref().map(|p| io::read_column(Path::new(p), &col)).transpose()?;

    let mut realized = Vec::new();
    let mut var = Vec::new();
    let mut es = Vec::new();
    let mut sigma = Vec::new();
    for i in 0..table.rows.len() {
        let (Some(v), Some(e)) = (var_col[i], es_col[i]) else { continue };
        let listed = realized_col.as_ref().and_then(|c| c[i]);
        let y = match &returns {
            Some(ret) => {
                let d = dates
                    .as_ref()
                    .and_then(|c| c[i])
                    .ok_or_else(|| CliError::Data(format!("{} line {}: missing date_index", forecasts.display(), table.lines[i])))?;
                let y = *ret.get(d as usize).ok_or_else(|| {
                    CliError::Data(format!(
                        "alignment error: forecast date {d} lies beyond the {} returns supplied",
                        ret.len()
                    ))
                })?;
                if let Some(l) = listed {
                    if l != y {
                        return Err(CliError::Data(format!(
                            "alignment error: line {} of {} records realized {l} but the returns file has {y} at date {d}",
                            table.lines[i],
                            forecasts.display()
                        )));
                    }
                }
                y
            }
            None => listed.ok_or_else(|| {
                CliError::Data(format!("{} line {}: no realized return (pass --returns)", forecasts.display(), table.lines[i]))
            })?,
        };
        realized.push(y);
        var.push(v);
        es.push(e);
        sigma.push(sigma_col.as_ref().and_then(|c| c[i]).unwrap_or(f64::NAN));
    }
    if realized.is_empty() {
        return Err(CliError::Data(format!("{} contains no usable forecasts", forecasts.display())));
    }
    let use_sigma = standardize.0 && sigma.iter().all(|s| s.is_finite() && *s > 0.0);
    let input = BacktestInput {
        realized: &realized,
        var: &var,
        es: &es,
        sigma: use_sigma.then_some(sigma.as_slice()),
        alpha,
        tail,
    };
    let report = run_backtest(&input, n_boot, seed)?;
    let doc = json!({
        "command": "backtest",
        "version": env!("CARGO_PKG_VERSION"),
        "config": r.to_json(),
        "excess_standardized": use_sigma,
        "report": report,
    });
    match out {
        Some(p) => {
            io::emit(Some(&p), &to_json_string(&doc))?;
            io::emit(None, &render_backtest(&report))
        }
        None => io::emit(None, &to_json_string(&doc)),
    }
}

fn render_tables(tables: &[ReproTable]) -> String {
    let mut s = String::new();
    for t in tables {
        s.push_str(&format!(
            "case {} {} alpha {} ({} of {} replications)\n",
            t.case, t.dist, t.alpha, t.reps_used, t.reps_requested
        ));
        s.push_str(&format!("  {:<10} {:<8} {:>8} {:>8}\n", "method", "measure", "bias", "rmse"));
        for row in &t.rows {
            s.push_str(&format!("  {:<10} {:<8} {:>8.4} {:>8.4}\n", row.method, row.measure, row.bias, row.rmse));
        }
    }
    s
}

pub fn repro_tables(a: ReproArgs, r: &mut Resolver) -> Result<(), CliError> {
    let reps = r.get("reps", a.reps, 200usize)?;
    let cases = r.get("case", a.case, List(vec![1u8]))?;
    let dists = r.get("dist", a.dist, List(vec!["normal".to_string()]))?;
    let alpha = r.get("alpha", a.alpha, 0.95)?;
    let n_in = r.get("n-in", a.n_in, 500usize)?;
    let n_out = r.get("n-out", a.n_out, 50usize)?;
    let burn_in = r.get("burn-in", a.burn_in, garch_sim::DEFAULT_BURN_IN)?;
    let m = r.get("m", a.m, DEFAULT_M)?;
    let k = r.get("k", a.k, DEFAULT_K)?;
    let p = r.get("p", a.p, 1usize)?;
    let q = r.get("q", a.q, 1usize)?;
    let refit_every = r.get("refit-every", a.refit_every, Cadence(1))?;
    let seed = r.seed(a.seed)?;
    let out = out_path(r, "out", a.out)?;
    let sieve = SieveConfig::uniform(m, k)?;

    let mut tables = Vec::new();
    for &case in &cases.0 {
        for d in &dists.0 {
            let config = ReproConfig {
                case,
                dist: parse_dist(d)?,
                alpha,
                reps,
                n_in,
                n_out,
                burn_in,
                sieve: sieve.clone(),
                p,
                q,
                refit_every: refit_every.0,
                seed,
            };
            let table = montecarlo::repro_tables(&config)?;
            for f in &table.failures {
                eprintln!("calsel: case {case} {d}: {f}");
            }
            tables.push(table);
        }
    }
    let rows: Vec<Vec<String>> = tables
        .iter()
        .flat_map(|t| {
            t.rows.iter().map(move |row| {
                vec![
                    t.case.to_string(),
                    t.dist.clone(),
                    num(t.alpha),
                    row.method.clone(),
                    row.measure.clone(),
                    num(row.bias),
                    num(row.rmse),
                    t.reps_used.to_string(),
                    t.reps_requested.to_string(),
                ]
            })
        })
        .collect();
    let csv = io::render_csv(
        &io::provenance_header("repro-tables", r.resolved()),
        &["case", "dist", "alpha", "method", "measure", "bias", "rmse", "reps_used", "reps_requested"],
        &rows,
    )?;
    match out {
        Some(path) => {
            io::emit(Some(&path), &csv)?;
            io::emit(None, &render_tables(&tables))
        }
        None => io::emit(None, &csv),
    }
}

pub fn tau(a: TauArgs, r: &mut Resolver) -> Result<(), CliError> {
    let alpha = r.get("alpha", a.alpha, 0.05)?;
    let grid_step = r.get("grid-step", a.grid_step, 1e-4)?;
    let compare = r.get("compare", a.compare.then_some(Switch(true)), Switch(false))?;
    let out = out_path(r, "out", a.out)?;
    if compare.0 {
        let n = r.get("n", a.n, 300usize)?;
        let dist_name = r.get("dist", a.dist, "normal".to_string())?;
        let reps = r.get("reps", a.reps, 100usize)?;
        let seed = r.seed(a.seed)?;
        let dist = parse_dist(&dist_name)?;
        let cmp = montecarlo::tau_compare(&dist, n, alpha, reps, seed, grid_step)?;
        let mut preamble = io::provenance_header("tau", r.resolved());
        preamble.push_str(&format!(
            "# result: tau0={} median-sq-err-el={} median-sq-err-grid={} failures={}\n",
            cmp.tau0, cmp.median_sq_err_el, cmp.median_sq_err_grid, cmp.failures
        ));
        let rows: Vec<Vec<String>> = cmp
            .rows
            .iter()
            .map(|row| {
                vec![row.rep.to_string(), num(row.tau_el), num(row.tau_grid), num(row.sq_err_el), num(row.sq_err_grid)]
            })
            .collect();
        let csv = io::render_csv(&preamble, &["rep", "tau_el", "tau_grid", "sq_err_el", "sq_err_grid"], &rows)?;
        eprintln!(
            "median squared error: EL {:.3e}, grid {:.3e} (h(alpha) = {:.6})",
            cmp.median_sq_err_el, cmp.median_sq_err_grid, cmp.tau0
        );
        return io::emit(out.as_deref(), &csv);
    }
    let input = input_path(r, "input", a.input)?;
    let col = r.get("col", a.col, "return".to_string())?;
    let x = io::read_column(&input, &col)?;
    let problem = ElProblem::new(&x, alpha)?;
    let sol = el::max_el_estimate(&problem)?;
    let grid = el::grid_search_tau(&x, alpha, grid_step);
    let doc = json!({
        "command": "tau",
        "version": env!("CARGO_PKG_VERSION"),
        "config": r.to_json(),
        "n": x.len(),
        "tau_el": sol.oriented_tau(),
        "mu_el": sol.mu,
        "tau_grid": grid.as_ref().ok(),
        "grid_error": grid.as_ref().err().map(|e| e.to_string()),
        "el": sol,
    });
    io::emit(out.as_deref(), &to_json_string(&doc))
}
