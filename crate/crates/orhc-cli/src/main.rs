//! Command-line front end: scenario runs (`free`, `ocp`, `orhc`,
//! `sweep`), the eigenvalue table (`eigs`) and the self-check oracle
//! suite (`check`). Every run writes CSV/JSON (and SVG plots) into the
//! output directory.
//!
//! Exit codes: 0 ok, 1 usage/configuration, 2 numerical failure,
//! 3 check-suite failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use orhc::diagnostics;
use orhc::fem::RcAssembler;
use orhc::ocp::{dynamic_tolerance, solve_ocp, IterTrace};
use orhc::report;
use orhc::rhc::{run_free, run_orhc, StopReason};
use orhc::scenario::{Instance, ScenarioConfig};
use orhc::spectral::analytic_neumann_spectrum;
use orhc::timestep::{StorePolicy, TimeGrid};
use orhc::OrhcError;

#[derive(Parser)]
#[command(name = "orhc", version, about = "Receding-horizon stabilization of 2-D parabolic equations with sensor-based output feedback")]
struct Cli {
    /// Scenario file (TOML); defaults to the built-in benchmark scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override scenario values, e.g. --set rhc.t_rh=1.5 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory for CSV/JSON/SVG artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the uncontrolled dynamics over [0, t_infty].
    Free,
    /// Solve a single finite-horizon optimal control window from the
    /// initial output-based estimate, with a convergence trace.
    Ocp,
    /// Run the full output-based receding-horizon loop.
    Orhc,
    /// Run the loop for a list of prediction horizons.
    Sweep {
        /// Comma-separated prediction horizons.
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,2.5,3")]
        horizons: Vec<f64>,
    },
    /// Compute the penalty eigenbasis and compare with the analytic
    /// spectrum.
    Eigs,
    /// Run the self-check oracle suite (gradient finite differences,
    /// projection idempotence, adjoint duality, time-stepping order).
    Check,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap prints its own message; help/version are successes
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                OrhcError::Config(_) | OrhcError::ConfigParse(_) | OrhcError::Io(_) => 1,
                _ => 2,
            };
            std::process::exit(code);
        }
    }
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig, OrhcError> {
    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    for ov in &cli.overrides {
        cfg.apply_override(ov)?;
    }
    Ok(cfg)
}

fn say(quiet: bool, msg: &str) {
    if !quiet {
        println!("{msg}");
    }
}

fn run(cli: Cli) -> Result<i32, OrhcError> {
    let cfg = load_config(&cli)?;
    std::fs::create_dir_all(&cli.out)?;
    report::write_file(&cli.out.join("scenario.toml"), &cfg.to_toml())?;
    match &cli.cmd {
        Cmd::Free => cmd_free(&cfg, &cli.out, cli.quiet),
        Cmd::Ocp => cmd_ocp(&cfg, &cli.out, cli.quiet),
        Cmd::Orhc => cmd_orhc(&cfg, &cli.out, cli.quiet).map(|_| 0),
        Cmd::Sweep { horizons } => cmd_sweep(&cfg, horizons, &cli.out, cli.quiet),
        Cmd::Eigs => cmd_eigs(&cfg, &cli.out, cli.quiet),
        Cmd::Check => cmd_check(&cfg, &cli.out, cli.quiet),
    }
}

fn build_timed(cfg: &ScenarioConfig, timings: &mut BTreeMap<String, f64>) -> Result<Instance, OrhcError> {
    let t0 = Instant::now();
    let inst = cfg.build()?;
    timings.insert("assembly_s".into(), t0.elapsed().as_secs_f64());
    Ok(inst)
}

fn cmd_free(cfg: &ScenarioConfig, out: &Path, quiet: bool) -> Result<i32, OrhcError> {
    let mut timings = BTreeMap::new();
    let inst = build_timed(cfg, &mut timings)?;
    let coeffs = inst.coefficients();
    let rc = RcAssembler::new(&inst.mesh, &inst.ops, coeffs.as_ref());
    let grid = TimeGrid::span(0.0, cfg.rhc.t_infty, inst.dt())?;
    say(quiet, &format!("free dynamics over [0, {}] with {} steps", grid.t_end(), grid.n_steps));
    let t0 = Instant::now();
    let traj = run_free(&inst.ops, &rc, grid, &inst.y0, inst.strategy(), StorePolicy::NormsOnly)?;
    timings.insert("integration_s".into(), t0.elapsed().as_secs_f64());

    let mut csv = Vec::new();
    report::write_trajectory_csv(&traj, None, &mut csv)?;
    report::write_file(&out.join("free_norms.csv"), &String::from_utf8(csv).expect("utf8"))?;
    let times: Vec<f64> = (0..=grid.n_steps).map(|k| grid.node(k)).collect();
    let slope = {
        let xs: Vec<f64> = times.iter().copied().filter(|&t| t >= 1.0).collect();
        let ys: Vec<f64> = times
            .iter()
            .zip(&traj.norms)
            .filter(|(t, _)| **t >= 1.0)
            .map(|(_, n)| n.ln())
            .collect();
        orhc::linalg::linear_fit(&xs, &ys).0
    };
    #[derive(serde::Serialize)]
    struct FreeSummary<'a> {
        scenario: &'a ScenarioConfig,
        final_norm: f64,
        initial_norm: f64,
        log_slope_after_t1: f64,
        timings: BTreeMap<String, f64>,
    }
    let summary = FreeSummary {
        scenario: cfg,
        final_norm: *traj.norms.last().expect("nonempty"),
        initial_norm: traj.norms[0],
        log_slope_after_t1: slope,
        timings,
    };
    report::write_file(
        &out.join("free_summary.json"),
        &serde_json::to_string_pretty(&summary).expect("serializes"),
    )?;
    report::write_file(
        &out.join("free_norms.svg"),
        &report::render_trajectory_plot(&traj, "|y_free|", "uncontrolled dynamics"),
    )?;
    say(quiet, &format!(
        "|y(0)| = {:.6e}, |y(T)| = {:.6e}, fitted log-slope (t >= 1): {:+.4}",
        summary.initial_norm, summary.final_norm, slope
    ));
    Ok(0)
}

fn cmd_ocp(cfg: &ScenarioConfig, out: &Path, quiet: bool) -> Result<i32, OrhcError> {
    let mut timings = BTreeMap::new();
    let inst = build_timed(cfg, &mut timings)?;
    let coeffs = inst.coefficients();
    let rc = RcAssembler::new(&inst.mesh, &inst.ops, coeffs.as_ref());
    let policy = cfg.tolerance_policy();
    let tol = dynamic_tolerance(&policy, inst.ops.mass_norm(&inst.yhat0), cfg.rhc.t_rh);
    say(quiet, &format!(
        "single window [0, {}] from the output-based estimate, tol = ({:.3e}, {:.3e})",
        cfg.rhc.t_rh, tol.0, tol.1
    ));
    let mut trace: Vec<IterTrace> = Vec::new();
    let t0 = Instant::now();
    let res = solve_ocp(
        &inst.ops,
        &rc,
        &inst.layout,
        &inst.q,
        0.0,
        cfg.rhc.t_rh,
        inst.dt(),
        &inst.yhat0,
        tol,
        None,
        cfg.ocp.max_iter,
        inst.strategy(),
        Some(&mut trace),
    )?;
    timings.insert("solve_s".into(), t0.elapsed().as_secs_f64());

    let mut csv = String::from("iteration,g_norm_sq,du_norm_sq,stepsize,cost\n");
    for row in &trace {
        csv.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            row.iteration, row.g_norm_sq, row.du_norm_sq, row.stepsize, row.cost
        ));
    }
    report::write_file(&out.join("ocp_trace.csv"), &csv)?;
    let u_norms: Vec<f64> = res
        .u_star
        .values
        .iter()
        .map(|v| orhc::linalg::norm2(v))
        .collect();
    let mut csv = Vec::new();
    report::write_trajectory_csv(&res.y_star, Some(&u_norms), &mut csv)?;
    report::write_file(&out.join("ocp_norms.csv"), &String::from_utf8(csv).expect("utf8"))?;
    #[derive(serde::Serialize)]
    struct OcpSummary<'a> {
        scenario: &'a ScenarioConfig,
        cost: f64,
        iterations: usize,
        converged: bool,
        tol_used: (f64, f64),
        residual_g_norm_sq: f64,
        control_l2_norm_sq: f64,
        timings: BTreeMap<String, f64>,
    }
    let summary = OcpSummary {
        scenario: cfg,
        cost: res.cost,
        iterations: res.iterations,
        converged: res.converged,
        tol_used: res.tol_used,
        residual_g_norm_sq: res.residual_g_norm_sq,
        control_l2_norm_sq: res.u_star.l2_norm_sq(),
        timings,
    };
    report::write_file(
        &out.join("ocp_summary.json"),
        &serde_json::to_string_pretty(&summary).expect("serializes"),
    )?;
    report::write_file(
        &out.join("ocp_norms.svg"),
        &report::render_trajectory_plot(&res.y_star, "|y*|", "predicted optimal trajectory"),
    )?;
    say(quiet, &format!(
        "converged = {}, iterations = {}, cost = {:.6e}",
        res.converged, res.iterations, res.cost
    ));
    Ok(0)
}

fn cmd_orhc(cfg: &ScenarioConfig, out: &Path, quiet: bool) -> Result<orhc::rhc::OrhcRunRecord, OrhcError> {
    let mut timings = BTreeMap::new();
    let inst = build_timed(cfg, &mut timings)?;
    let coeffs = inst.coefficients();
    let rc = RcAssembler::new(&inst.mesh, &inst.ops, coeffs.as_ref());
    say(quiet, &format!(
        "receding-horizon loop: t_rh = {}, tau = {}, t_infty = {}, lambda = {}",
        cfg.rhc.t_rh, cfg.rhc.tau, cfg.rhc.t_infty, cfg.observer.lambda
    ));
    let t0 = Instant::now();
    let record = run_orhc(
        &cfg.orhc_config(),
        &inst.ops,
        &rc,
        &inst.layout,
        &inst.obs,
        &inst.q,
        &cfg.ocp_settings(),
        inst.dt(),
        &inst.y0,
        &inst.yhat0,
        inst.strategy(),
    )?;
    timings.insert("loop_s".into(), t0.elapsed().as_secs_f64());

    let mut csv = Vec::new();
    report::write_norm_csv(&record, &mut csv)?;
    report::write_file(&out.join("orhc_norms.csv"), &String::from_utf8(csv).expect("utf8"))?;
    let summary = report::RunSummary::from_record(cfg, &record, inst.eigenvalues.clone(), timings);
    report::write_file(&out.join("orhc_summary.json"), &summary.to_json())?;
    report::write_file(
        &out.join("orhc_norms.svg"),
        &report::render_norm_plot(&record, "closed-loop norms"),
    )?;
    say(quiet, &format!(
        "windows = {}, squeezing violations = {}, stop = {:?}, state log-slope = {:+.4}",
        record.windows.len(),
        record.sqz_violations_total,
        record.stopped_reason,
        record.state_decay_slope(),
    ));
    Ok(record)
}

fn cmd_sweep(cfg: &ScenarioConfig, horizons: &[f64], out: &Path, quiet: bool) -> Result<i32, OrhcError> {
    if horizons.is_empty() {
        return Err(OrhcError::Config("sweep needs at least one horizon".into()));
    }
    say(quiet, &format!("sweeping prediction horizons {horizons:?}"));
    #[derive(serde::Serialize)]
    struct SweepEntry {
        t_rh: f64,
        sqz_violations_total: usize,
        max_consecutive_violations: usize,
        stopped_reason: StopReason,
        window_count: usize,
        state_decay_slope: f64,
        final_state_norm: f64,
        reached_time: f64,
    }
    let results: Vec<Result<SweepEntry, OrhcError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = horizons
            .iter()
            .map(|&h| {
                let mut sub = cfg.clone();
                let out_dir = out.join(format!("t_rh_{h}"));
                scope.spawn(move || -> Result<SweepEntry, OrhcError> {
                    sub.rhc.t_rh = h;
                    if sub.rhc.tau > h {
                        sub.rhc.tau = h;
                    }
                    sub.validate()?;
                    std::fs::create_dir_all(&out_dir)?;
                    report::write_file(&out_dir.join("scenario.toml"), &sub.to_toml())?;
                    let record = cmd_orhc(&sub, &out_dir, true)?;
                    Ok(SweepEntry {
                        t_rh: h,
                        sqz_violations_total: record.sqz_violations_total,
                        max_consecutive_violations: record.max_consecutive_violations,
                        stopped_reason: record.stopped_reason,
                        window_count: record.windows.len(),
                        state_decay_slope: record.state_decay_slope(),
                        final_state_norm: *record.state_norms_at_tn.last().expect("nonempty"),
                        reached_time: *record.concat_times.last().expect("nonempty"),
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep thread panicked"))
            .collect()
    });
    let mut entries = Vec::new();
    for r in results {
        entries.push(r?);
    }
    for e in &entries {
        say(quiet, &format!(
            "t_rh = {:4}: violations = {:2}, stop = {:?}, state log-slope = {:+.4}",
            e.t_rh, e.sqz_violations_total, e.stopped_reason, e.state_decay_slope
        ));
    }
    report::write_file(
        &out.join("sweep.json"),
        &serde_json::to_string_pretty(&entries).expect("serializes"),
    )?;
    Ok(0)
}

fn cmd_eigs(cfg: &ScenarioConfig, out: &Path, quiet: bool) -> Result<i32, OrhcError> {
    let mut timings = BTreeMap::new();
    let mut cfg = cfg.clone();
    if cfg.penalty.kind != "eig_projection" {
        cfg.penalty.kind = "eig_projection".into();
    }
    let inst = build_timed(&cfg, &mut timings)?;
    let computed = inst.eigenvalues.clone().expect("eigenbasis built");
    let exact = analytic_neumann_spectrum(computed.len());
    let mut csv = String::from("index,computed,analytic,rel_error\n");
    let mut worst = 0.0f64;
    for (i, (c, e)) in computed.iter().zip(&exact).enumerate() {
        let rel = if *e > 0.0 { (c - e).abs() / e } else { c.abs() };
        if i > 0 {
            worst = worst.max(rel);
        }
        csv.push_str(&format!("{i},{c:.16e},{e:.16e},{rel:.16e}\n"));
    }
    report::write_file(&out.join("eigenvalues.csv"), &csv)?;
    #[derive(serde::Serialize)]
    struct EigSummary<'a> {
        scenario: &'a ScenarioConfig,
        computed: &'a [f64],
        analytic: &'a [f64],
        worst_rel_error_nonzero: f64,
        timings: BTreeMap<String, f64>,
    }
    report::write_file(
        &out.join("eigenvalues.json"),
        &serde_json::to_string_pretty(&EigSummary {
            scenario: &cfg,
            computed: &computed,
            analytic: &exact,
            worst_rel_error_nonzero: worst,
            timings,
        })
        .expect("serializes"),
    )?;
    say(quiet, &format!(
        "{} eigenvalues, worst relative deviation from the analytic spectrum: {:.3e}",
        computed.len(),
        worst
    ));
    Ok(0)
}

fn cmd_check(cfg: &ScenarioConfig, out: &Path, quiet: bool) -> Result<i32, OrhcError> {
    let inst = cfg.build()?;
    let results = diagnostics::run_all_checks(&inst)?;
    let mut all_ok = true;
    for r in &results {
        all_ok &= r.passed;
        say(quiet, &format!(
            "{:28} {}  measured {:.3e} vs {:.3e}  ({})",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.measured,
            r.threshold,
            r.detail
        ));
    }
    report::write_file(
        &out.join("check.json"),
        &serde_json::to_string_pretty(&results).expect("serializes"),
    )?;
    Ok(if all_ok { 0 } else { 3 })
}
