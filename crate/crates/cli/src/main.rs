//! Command-line drivers: structural checks, conjugation tables, balance
//! sweeps, time mollification, parabolic solves, and the verification suites.
//!
//! Every run writes a JSON report with a stable key order and floats at 17
//! significant digits; a fixed seed yields byte-identical reports.

mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use musielak::balance::{
    analytic_admissible, balance_check, default_deltas, BalanceMode, BalanceParams,
    BalanceSampler, BalanceVerdict, ModularFamily,
};
use musielak::conjugate::{conjugate_radial, log_grid, radial_grid_between};
use musielak::grid::GridField;
use musielak::modular::{check_delta2, check_nfunction, SamplePlan};
use musielak::mollifier::{mollify_truncated, verify_approximation, TimeMollifier};
use musielak::report::{to_json_string, to_value, write_report};
use musielak::solver::{
    a_priori_check, calibrate_level_envelope, decay_check, level_measure_check,
    renormalize_pipeline, solve_bounded,
};
use musielak::suites::{run_all, run_suite, suite_names};
use musielak::ModularFunction;

#[derive(Parser)]
#[command(
    name = "musielak",
    version,
    about = "Numerical toolkit for anisotropic Musielak-Orlicz modulars and L1-data parabolic solves"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct FamilyArgs {
    /// Family id: power_p, variable_exponent, llog_alpha, double_phase,
    /// dp_borderline, orlicz_dp, weighted_orlicz, exp_orlicz.
    #[arg(long)]
    family: String,
    /// Space dimension N (1 or 2).
    #[arg(long = "N", default_value_t = 1)]
    n_dim: usize,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    coef: Option<f64>,
    /// Use the discontinuous (step) coefficient variant where applicable.
    #[arg(long, default_value_t = false)]
    step: bool,
}

impl FamilyArgs {
    fn build(&self) -> Result<ModularFamily, musielak::Error> {
        let params = BalanceParams {
            p: self.p,
            q: self.q,
            alpha: self.alpha,
            coef: self.coef,
            step: self.step,
        };
        ModularFamily::by_name(&self.family, self.n_dim, &params)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate the N-function conditions of a preset modular family.
    CheckNfunction {
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Tabulate the radial conjugate of a preset family at a point.
    Conjugate {
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long, default_value_t = 0.5)]
        t: f64,
        /// Comma-separated spatial point.
        #[arg(long, default_value = "0.5")]
        x: String,
        #[arg(long, default_value_t = 0.1)]
        eta_min: f64,
        #[arg(long, default_value_t = 10.0)]
        eta_max: f64,
        #[arg(long, default_value_t = 50)]
        eta_count: usize,
        #[arg(long, default_value_t = 2000)]
        xi_count: usize,
        /// CSV output path for the table.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Sweep the balance condition of a preset family.
    Balance {
        #[command(flatten)]
        family: FamilyArgs,
        /// arbitrary (|xi| = delta^-N) or power (|xi| = delta^-N/p).
        #[arg(long, default_value = "arbitrary")]
        mode: String,
        /// Comma-separated decreasing deltas; dyadic 2^-2..2^-10 by default.
        #[arg(long)]
        deltas: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Time-mollify a field and verify the approximation estimates.
    Mollify {
        /// Comma-separated list of rates mu (all > 2).
        #[arg(long)]
        mu: String,
        /// Input field: .csv or .bin layout.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Directory for per-mu residual curves (gnuplot-ready CSV).
        #[arg(long)]
        emit_plots: Option<PathBuf>,
    },
    /// Solve a configured parabolic problem and run its diagnostics.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Directory for solution snapshots and diagnostic curves.
        #[arg(long)]
        emit_plots: Option<PathBuf>,
    },
    /// Run verification suites.
    Verify {
        /// Suite name or "all".
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    // Thread cap for the parallel sweeps; results are thread-count-invariant.
    if let Ok(threads) = std::env::var("MUSIELAK_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(ok) => {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn emit(report: serde_json::Value, path: Option<&PathBuf>) -> Result<(), String> {
    let text = to_json_string(&report);
    match path {
        Some(path) => write_report(&report, path).map_err(|e| e.to_string())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::CheckNfunction { family, seed, report } => {
            let fam = family.build().map_err(|e| e.to_string())?;
            let m = fam.build();
            let plan = SamplePlan::default().with_seed(seed);
            let nf = check_nfunction(&m, &fam.domain(), fam.horizon(), &plan);
            let d2 = check_delta2(&m, &fam.domain(), fam.horizon(), &plan);
            let pass = nf.pass();
            let value = json!({
                "command": "check-nfunction",
                "version": env!("CARGO_PKG_VERSION"),
                "seed": seed,
                "family": fam.id(),
                "nfunction": to_value(&nf).map_err(|e| e.to_string())?,
                "delta2": to_value(&d2).map_err(|e| e.to_string())?,
                "pass": pass,
            });
            emit(value, report.as_ref())?;
            Ok(pass)
        }
        Command::Conjugate {
            family,
            t,
            x,
            eta_min,
            eta_max,
            eta_count,
            xi_count,
            csv,
            report,
        } => {
            let fam = family.build().map_err(|e| e.to_string())?;
            let m = fam.build();
            let x: Vec<f64> = parse_list(&x)?;
            if x.len() != fam.dim() {
                return Err(format!("--x needs {} coordinates", fam.dim()));
            }
            let eta = log_grid(eta_min, eta_max, eta_count);
            // Wide source grid; the boundary-maximizer error reports when the
            // grid needs widening.
            let cap = m.eval_cap().map(|c| c / 2.0).unwrap_or(f64::INFINITY);
            let xi_hi = (eta_max.powf(2.0) * 10.0 + 10.0).min(cap.max(10.0));
            let xi = radial_grid_between(1e-4 * xi_hi.min(1.0), xi_hi, xi_count);
            let table = conjugate_radial(&m, t, &x, &eta, &xi).map_err(|e| e.to_string())?;
            if let Some(csv) = &csv {
                table.write_csv(csv).map_err(|e| e.to_string())?;
            }
            let value = json!({
                "command": "conjugate",
                "version": env!("CARGO_PKG_VERSION"),
                "family": fam.id(),
                "t": t,
                "x": x,
                "eta": {"min": eta_min, "max": eta_max, "count": eta_count},
                "worst_concavity": table.worst_concavity(),
                "values": table.values,
                "csv": csv.as_ref().map(|p| p.display().to_string()),
            });
            emit(value, report.as_ref())?;
            Ok(true)
        }
        Command::Balance { family, mode, deltas, seed, report } => {
            let fam = family.build().map_err(|e| e.to_string())?;
            let m = fam.build();
            let mode = match mode.as_str() {
                "arbitrary" => BalanceMode::Arbitrary,
                "power" => BalanceMode::Power,
                other => return Err(format!("--mode: unknown mode {other:?}")),
            };
            let deltas = match deltas {
                Some(list) => parse_list(&list)?,
                None => default_deltas(),
            };
            let sampler = BalanceSampler::for_family(&fam, seed);
            let sweep =
                balance_check(&m, &fam, mode, &deltas, &sampler).map_err(|e| e.to_string())?;
            let analytic = analytic_admissible(&fam).map_err(|e| e.to_string())?;
            let bounded = sweep.verdict == BalanceVerdict::BoundedTrend;
            let value = json!({
                "command": "balance",
                "version": env!("CARGO_PKG_VERSION"),
                "seed": seed,
                "family": fam.id(),
                "analytic_admissible": analytic.0,
                "analytic_reason": analytic.1,
                "sweep": to_value(&sweep).map_err(|e| e.to_string())?,
            });
            emit(value, report.as_ref())?;
            Ok(bounded)
        }
        Command::Mollify { mu, input, report, emit_plots } => {
            let mu_list: Vec<f64> = parse_list(&mu)?;
            let field = read_field(&input)?;
            if field.components != 1 {
                return Err("mollify expects a scalar field".into());
            }
            let m = ModularFunction::power(field.mesh.space.dim(), 2.0);
            let verification =
                verify_approximation(&field, &mu_list, &m).map_err(|e| e.to_string())?;
            if let Some(dir) = &emit_plots {
                std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
                for &mu in &mu_list {
                    write_residual_curve(&field, mu, dir)?;
                    let mollified =
                        mollify_truncated(&field, mu).map_err(|e| e.to_string())?;
                    mollified
                        .write_csv(&dir.join(format!("mollified_mu{mu}.csv")))
                        .map_err(|e| e.to_string())?;
                }
            }
            let pass = verification.pass();
            let value = json!({
                "command": "mollify",
                "version": env!("CARGO_PKG_VERSION"),
                "input": input.display().to_string(),
                "mu": mu_list,
                "verification": to_value(&verification).map_err(|e| e.to_string())?,
                "pass": pass,
            });
            emit(value, report.as_ref())?;
            Ok(pass)
        }
        Command::Solve { config, report, emit_plots } => {
            let cfg = config::load(&config)?;
            solve_command(&cfg, report.as_ref(), emit_plots.as_ref())
        }
        Command::Verify { suite, seed, report } => {
            let reports = if suite == "all" {
                run_all(seed).map_err(|e| e.to_string())?
            } else {
                vec![run_suite(&suite, seed).map_err(|e| e.to_string())?]
            };
            let mut pass = true;
            for sr in &reports {
                println!("suite {}: {}", sr.suite, if sr.pass { "PASS" } else { "FAIL" });
                for check in &sr.checks {
                    println!(
                        "  {} {} (measured {:.6e}, bound {:.6e})",
                        if check.pass { "ok  " } else { "FAIL" },
                        check.name,
                        check.measured,
                        check.bound
                    );
                }
                pass &= sr.pass;
            }
            let value = json!({
                "command": "verify",
                "version": env!("CARGO_PKG_VERSION"),
                "seed": seed,
                "suite": suite,
                "available_suites": suite_names(),
                "suites": to_value(&reports).map_err(|e| e.to_string())?,
                "pass": pass,
            });
            emit(value, report.as_ref())?;
            Ok(pass)
        }
    }
}

fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("bad number {s:?}: {e}")))
        .collect()
}

fn read_field(path: &PathBuf) -> Result<GridField, String> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => GridField::read_csv(path).map_err(|e| e.to_string()),
        Some("bin") => GridField::read_binary(path).map_err(|e| e.to_string()),
        other => Err(format!("unsupported field extension {other:?} (use .csv or .bin)")),
    }
}

fn write_residual_curve(field: &GridField, mu: f64, dir: &PathBuf) -> Result<(), String> {
    let mollifier = TimeMollifier::new(field, mu).map_err(|e| e.to_string())?;
    let mesh = &field.mesh;
    let dt = mesh.dt();
    let mut rows = String::from("t,residual\n");
    for m in 1..mesh.time_cells {
        let t = mesh.time(m);
        let mut worst = 0.0f64;
        for s in 0..mesh.space.node_count() {
            let lhs =
                (mollifier.full_at(s, 0, t + dt) - mollifier.full_at(s, 0, t - dt)) / (2.0 * dt);
            let rhs = mu * (field.get(m, s, 0) - mollifier.full_at(s, 0, t));
            worst = worst.max((lhs - rhs).abs());
        }
        rows.push_str(&format!("{t:.17e},{worst:.17e}\n"));
    }
    std::fs::write(dir.join(format!("ode_residual_mu{mu}.csv")), rows)
        .map_err(|e| e.to_string())
}

fn solve_command(
    cfg: &config::RunConfig,
    report_path: Option<&PathBuf>,
    emit_plots: Option<&PathBuf>,
) -> Result<bool, String> {
    let problem = cfg.problem()?;
    let mesh = cfg.mesh()?;
    let tols = cfg.tols();
    let plan = SamplePlan::default().with_seed(cfg.seed);
    problem.validate(&plan).map_err(|e| e.to_string())?;

    let solve =
        solve_bounded(&problem, cfg.diagnostics.n, &mesh, &tols).map_err(|e| e.to_string())?;
    let mut pass = true;
    let mut sections: BTreeMap<String, serde_json::Value> = BTreeMap::new();

    if !cfg.diagnostics.k_list.is_empty() {
        let apriori =
            a_priori_check(&problem, &solve, &cfg.diagnostics.k_list, cfg.tolerances.apriori)
                .map_err(|e| e.to_string())?;
        pass &= apriori.pass();
        sections.insert("a_priori".into(), to_value(&apriori).map_err(|e| e.to_string())?);
    }
    if !cfg.diagnostics.l_list.is_empty() {
        let decay =
            decay_check(&problem, &solve, &cfg.diagnostics.l_list, cfg.tolerances.decay_fraction)
                .map_err(|e| e.to_string())?;
        pass &= decay.decayed;
        let anchor = cfg.diagnostics.level_anchor.unwrap_or_else(|| {
            calibrate_level_envelope(
                &problem,
                &solve,
                &cfg.diagnostics.l_list,
                cfg.diagnostics.level_radius_scale,
            )
        });
        let levels = level_measure_check(
            &problem,
            &solve,
            &cfg.diagnostics.l_list,
            anchor,
            cfg.diagnostics.level_radius_scale,
        )
        .map_err(|e| e.to_string())?;
        pass &= levels.pass;
        if let Some(dir) = emit_plots {
            std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
            let mut rows = String::from("l,energy\n");
            for row in &decay.rows {
                rows.push_str(&format!("{:.17e},{:.17e}\n", row.l, row.energy));
            }
            std::fs::write(dir.join("decay.csv"), rows).map_err(|e| e.to_string())?;
            let mut rows = String::from("l,measured,envelope\n");
            for row in &levels.rows {
                rows.push_str(&format!(
                    "{:.17e},{:.17e},{:.17e}\n",
                    row.l, row.measured, row.envelope
                ));
            }
            std::fs::write(dir.join("level_measures.csv"), rows).map_err(|e| e.to_string())?;
        }
        sections.insert("decay".into(), to_value(&decay).map_err(|e| e.to_string())?);
        sections.insert("level_measures".into(), to_value(&levels).map_err(|e| e.to_string())?);
    }
    if cfg.diagnostics.n_list.len() >= 2 {
        let k = cfg.diagnostics.k_list.first().copied().unwrap_or(1.0);
        let (pipeline, _) = renormalize_pipeline(&problem, &cfg.diagnostics.n_list, &mesh, &tols, k)
            .map_err(|e| e.to_string())?;
        pass &= pipeline.cauchy_trend;
        sections.insert("pipeline".into(), to_value(&pipeline).map_err(|e| e.to_string())?);
    }

    if let Some(dir) = emit_plots {
        std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        solve.solution.write_csv(&dir.join("solution.csv")).map_err(|e| e.to_string())?;
    }

    let diagnostics: serde_json::Map<String, serde_json::Value> =
        sections.into_iter().collect();
    let value = json!({
        "command": "solve",
        "version": env!("CARGO_PKG_VERSION"),
        "config": to_value(cfg).map_err(|e| e.to_string())?,
        "flux": problem.flux.id(),
        "coercivity_constant": problem.c_a,
        "eps_reg": solve.eps_reg,
        "newton_iterations": solve.newton_iterations,
        "truncation_level": solve.truncation_level,
        "diagnostics": diagnostics,
        "pass": pass,
    });
    emit(value, report_path)?;
    Ok(pass)
}
