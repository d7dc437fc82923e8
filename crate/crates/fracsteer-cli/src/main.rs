//! `fracsteer` — batch driver for the fractional steering toolkit.
//!
//! Subcommands: `simulate`, `steer`, `certify`, `optimize`, `mleval`.
//! Exit codes: 0 success, 2 validation error, 3 numerical non-convergence
//! (a report is still written), 64 usage error.

mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use fracsteer_core::evolution::{
    caputo_residual, mild_solve, residual_tail_norm, ControlSignal, SteeringProblem,
};
use fracsteer_core::mittag_leffler::{ml_eval, MlParams};
use fracsteer_core::optimal_control::{cost, solve_min_energy, CostWeights, MinEnergyMethod};
use fracsteer_core::scenarios::{build_section5, resolve_scenario, ScenarioConfig};
use fracsteer_core::steering::{
    assemble_steering_matrix, contraction_certificate, existence_condition,
    picard_iterate_opts, CertificateConstants, PicardSeed,
};
use fracsteer_core::Error as CoreError;

use report::{plot_script, RunReport};

const EXIT_OK: i32 = 0;
const EXIT_VALIDATION: i32 = 2;
const EXIT_NUMERICAL: i32 = 3;
const EXIT_USAGE: i32 = 64;

#[derive(Parser)]
#[command(
    name = "fracsteer",
    version,
    about = "Simulation, exact steering and minimum-energy control of fractional neutral evolution systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
enum MethodArg {
    #[default]
    Nullspace,
    Penalty,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a scenario under zero (or replayed) control and export the
    /// trajectory with its Caputo-residual diagnostics
    Simulate {
        /// Scenario file path or built-in name
        #[arg(long)]
        scenario: String,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Optional control CSV to replay (format of `steer` output)
        #[arg(long)]
        control: Option<PathBuf>,
    },
    /// Run the fixed-point steering synthesis toward the scenario target
    Steer {
        #[arg(long)]
        scenario: String,
        /// Sup-norm convergence tolerance of the sweep
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        /// Tikhonov ridge on the control synthesis (0 = pseudo-inverse)
        #[arg(long, default_value_t = 0.0)]
        ridge: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the contraction certificate and print its term breakdown
    Certify {
        #[arg(long)]
        scenario: String,
        /// Also write a report.json into this directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the minimum-energy problem for the scenario target
    Optimize {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 0.0)]
        w_state: f64,
        #[arg(long, default_value_t = 1.0)]
        w_energy: f64,
        #[arg(long, value_enum, default_value_t)]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the two-parameter Mittag-Leffler function on the
    /// nonpositive axis, printing the value and the achieved error bound
    Mleval {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long, allow_hyphen_values = true)]
        z: f64,
        /// Target absolute accuracy
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
}

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::default()
            .filter_or("FRACSTEER_LOG", "error")
            .write_style("FRACSTEER_LOG_STYLE"),
    )
    .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    std::process::exit(run(cli.command));
}

/// Exit-code class of a core error: anything numerical keeps going far
/// enough to write a report, validation problems stop early.
fn exit_code_for(err: &CoreError) -> i32 {
    match err {
        CoreError::InvalidArgument(_)
        | CoreError::InvalidScenario { .. }
        | CoreError::ScenarioParse { .. }
        | CoreError::Io(_) => EXIT_VALIDATION,
        _ => EXIT_NUMERICAL,
    }
}

fn run(command: Command) -> i32 {
    match dispatch(command) {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            eprintln!("fracsteer: {}", failure.message);
            failure.code
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure {
            code: exit_code_for(&e),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            message: e.to_string(),
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate {
            scenario,
            out,
            control,
        } => cmd_simulate(&scenario, &out, control.as_deref()),
        Command::Steer {
            scenario,
            tol,
            max_iter,
            ridge,
            out,
        } => cmd_steer(&scenario, tol, max_iter, ridge, &out),
        Command::Certify { scenario, out } => cmd_certify(&scenario, out.as_deref()),
        Command::Optimize {
            scenario,
            w_state,
            w_energy,
            method,
            out,
        } => cmd_optimize(&scenario, w_state, w_energy, method, &out),
        Command::Mleval {
            alpha,
            beta,
            z,
            tol,
        } => cmd_mleval(alpha, beta, z, tol),
    }
}

fn load_problem(scenario: &str) -> Result<(ScenarioConfig, SteeringProblem), Failure> {
    let cfg = resolve_scenario(scenario)?;
    let prob = build_section5(&cfg)?;
    Ok((cfg, prob))
}

/// Apply the scenario's declared constant overrides that live outside the
/// problem structure (currently the semigroup bound).
fn apply_constant_overrides(
    mut consts: CertificateConstants,
    cfg: &ScenarioConfig,
) -> Result<CertificateConstants, Failure> {
    if let Some(c) = &cfg.constants {
        if let Some(m_t) = c.m_t {
            consts = CertificateConstants::new(
                m_t,
                consts.m_1,
                consts.m_2,
                consts.l_one_minus_vs,
                consts.lipschitz,
                consts.a_negpow,
                consts.nu,
                consts.varsigma,
                consts.t_final,
            )?;
        }
    }
    Ok(consts)
}

fn write_outputs(
    dir: &Path,
    nu: f64,
    scenario: &str,
    traj: Option<&fracsteer_core::evolution::Trajectory>,
    control: Option<&ControlSignal>,
) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)?;
    if let Some(t) = traj {
        std::fs::write(dir.join("trajectory.csv"), t.to_csv())?;
        std::fs::write(dir.join("trajectory.json"), t.to_json(nu, scenario))?;
    }
    if let Some(u) = control {
        std::fs::write(dir.join("control.csv"), u.to_csv())?;
    }
    if traj.is_some() {
        std::fs::write(dir.join("plot.gp"), plot_script(control.is_some()))?;
    }
    Ok(())
}

fn cmd_simulate(scenario: &str, out: &Path, control: Option<&Path>) -> Result<(), Failure> {
    let started = Instant::now();
    let (cfg, prob) = load_problem(scenario)?;
    let mut rep = RunReport::new(cfg.id(), "simulate");
    rep.reason("q", "not a certification run");
    rep.reason("j", "not an optimization run");

    let u = match control {
        Some(path) => parse_control_csv(path, &prob)?,
        None => ControlSignal::zero(prob.grid, prob.n_controls()),
    };

    let result = (|| -> fracsteer_core::Result<_> {
        let traj = mild_solve(&prob, &u)?;
        let residuals = caputo_residual(&prob, &traj, &u)?;
        // measured convergence order of the residual under one refinement
        let refined_traj = {
            let mut p2 = prob.clone();
            p2.grid = prob.grid.refined();
            let u2 = u.refined();
            let t2 = mild_solve(&p2, &u2)?;
            residual_tail_norm(&caputo_residual(&p2, &t2, &u2)?)
        };
        Ok((traj, residual_tail_norm(&residuals), refined_traj))
    })();

    match result {
        Ok((traj, tail, tail_refined)) => {
            let denom = prob.xd.norm().max(f64::MIN_POSITIVE.sqrt());
            rep.endpoint_error = Some((traj.endpoint() - prob.xd.coeffs()).norm() / denom);
            rep.residual_tail = Some(tail);
            rep.residual_order = if tail_refined > 0.0 {
                Some((tail / tail_refined).log2())
            } else {
                rep.reason("residual_order", "refined residual vanished");
                None
            };
            write_outputs(out, prob.nu, cfg.id(), Some(&traj), control.map(|_| &u))?;
            rep.wall_time_s = started.elapsed().as_secs_f64();
            rep.write(out)?;
            println!(
                "simulate {}: residual tail {:.3e}, measured order {:.2}",
                cfg.id(),
                rep.residual_tail.unwrap_or(f64::NAN),
                rep.residual_order.unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Err(e) => {
            rep.status = format!("failed: {e}");
            rep.reason("endpoint_error", "simulation failed");
            rep.wall_time_s = started.elapsed().as_secs_f64();
            rep.write(out)?;
            Err(e.into())
        }
    }
}

fn cmd_steer(
    scenario: &str,
    tol: f64,
    max_iter: usize,
    ridge: f64,
    out: &Path,
) -> Result<(), Failure> {
    let started = Instant::now();
    let (cfg, prob) = load_problem(scenario)?;
    let mut rep = RunReport::new(cfg.id(), "steer");
    rep.reason("j", "not an optimization run");

    let fill_certificate = |rep: &mut RunReport, m2: Option<f64>| {
        let consts = match m2 {
            Some(m2) => CertificateConstants::with_inverse_bound(&prob, m2),
            None => assemble_steering_matrix(&prob)
                .and_then(|smat| CertificateConstants::for_problem(&prob, &smat)),
        };
        match consts.map_err(Failure::from).and_then(|c| apply_constant_overrides(c, &cfg)) {
            Ok(c) => {
                let evaluated = contraction_certificate(&c);
                rep.q = Some(evaluated.q);
                rep.certified = Some(evaluated.certified);
                rep.existence_condition = Some(existence_condition(&c));
                rep.m2 = Some(c.m_2);
            }
            Err(e) => rep.reason("q", &format!("certificate unavailable: {}", e.message)),
        }
    };

    match picard_iterate_opts(&prob, PicardSeed::ZeroInterior, tol, max_iter, ridge) {
        Ok(outcome) => {
            fill_certificate(&mut rep, Some(outcome.m2));
            rep.iterations = Some(outcome.iterations);
            rep.ratios = Some(outcome.ratios.clone());
            rep.endpoint_error = Some(outcome.endpoint_error);
            rep.m2 = Some(outcome.m2);
            write_outputs(
                out,
                prob.nu,
                cfg.id(),
                Some(&outcome.trajectory),
                Some(&outcome.control),
            )?;
            rep.wall_time_s = started.elapsed().as_secs_f64();
            rep.write(out)?;
            println!(
                "steer {}: converged in {} sweeps, endpoint error {:.3e}",
                cfg.id(),
                outcome.iterations,
                outcome.endpoint_error
            );
            Ok(())
        }
        Err(CoreError::NonConvergence {
            iterations,
            last_delta,
            ratios,
        }) => {
            fill_certificate(&mut rep, None);
            rep.status = "non-convergence".to_string();
            rep.iterations = Some(iterations);
            rep.ratios = Some(ratios.clone());
            rep.reason("endpoint_error", "sweep did not converge");
            rep.wall_time_s = started.elapsed().as_secs_f64();
            std::fs::create_dir_all(out)?;
            rep.write(out)?;
            Err(Failure {
                code: EXIT_NUMERICAL,
                message: format!(
                    "steering sweep did not converge in {iterations} sweeps (last delta {last_delta:.3e}); ratio history in {}",
                    out.join("report.json").display()
                ),
            })
        }
        Err(e) => {
            fill_certificate(&mut rep, None);
            rep.status = format!("failed: {e}");
            rep.wall_time_s = started.elapsed().as_secs_f64();
            std::fs::create_dir_all(out)?;
            rep.write(out)?;
            Err(e.into())
        }
    }
}

fn cmd_certify(scenario: &str, out: Option<&Path>) -> Result<(), Failure> {
    let started = Instant::now();
    let (cfg, prob) = load_problem(scenario)?;
    let smat = assemble_steering_matrix(&prob)?;
    let consts = apply_constant_overrides(
        CertificateConstants::for_problem(&prob, &smat)?,
        &cfg,
    )?;
    let cert = contraction_certificate(&consts);
    let exists = existence_condition(&consts);

    println!("scenario:            {}", cfg.id());
    println!("constants:");
    println!("  M_T (semigroup)    = {}", consts.m_t);
    println!("  M_1 (control)      = {}", consts.m_1);
    println!("  M_2 (inverse)      = {}", consts.m_2);
    println!("  L_(1-vs) (kernel)  = {}", consts.l_one_minus_vs);
    println!("  H (Lipschitz)      = {}", consts.lipschitz);
    println!("  |A^-vs|            = {}", consts.a_negpow);
    println!("terms:");
    println!("  inverse power      = {}", cert.term_inverse_power);
    println!("  kernel memory      = {}", cert.term_kernel);
    println!("  feedback factor    = {}", cert.feedback);
    println!("q = {}", cert.q);
    println!("certified (q < 1):   {}", cert.certified);
    println!("existence condition: {}", exists);

    if let Some(dir) = out {
        let mut rep = RunReport::new(cfg.id(), "certify");
        rep.q = Some(cert.q);
        rep.certified = Some(cert.certified);
        rep.existence_condition = Some(exists);
        rep.m2 = Some(consts.m_2);
        rep.reason("endpoint_error", "not a steering run");
        rep.reason("j", "not an optimization run");
        rep.wall_time_s = started.elapsed().as_secs_f64();
        rep.write(dir)?;
    }
    Ok(())
}

fn cmd_optimize(
    scenario: &str,
    w_state: f64,
    w_energy: f64,
    method: MethodArg,
    out: &Path,
) -> Result<(), Failure> {
    let started = Instant::now();
    let (cfg, prob) = load_problem(scenario)?;
    let mut rep = RunReport::new(cfg.id(), "optimize");
    rep.reason("q", "not a certification run");
    rep.reason("ratios", "not a steering run");

    let w = CostWeights::new(w_state, w_energy)?;
    let m = match method {
        MethodArg::Nullspace => MinEnergyMethod::NullSpace,
        MethodArg::Penalty => MinEnergyMethod::Penalty,
    };
    match solve_min_energy(&prob, &w, m) {
        Ok((control, j, solve_report)) => {
            let traj = mild_solve(&prob, &control)?;
            debug_assert!((cost(&traj, &control, &w, &prob.xd)? - j).abs() <= 1e-9 * (1.0 + j));
            rep.j = Some(j);
            rep.endpoint_error = Some(solve_report.endpoint_error);
            rep.kkt_residual = solve_report.kkt_residual;
            if solve_report.kkt_residual.is_none() {
                rep.reason("kkt_residual", "penalty path reports a defect instead");
            }
            rep.penalty_defect = solve_report.penalty_defect;
            if solve_report.penalty_defect.is_none() {
                rep.reason("penalty_defect", "null-space path reports a KKT residual instead");
            }
            rep.existence_condition = Some(solve_report.existence_condition);
            rep.method = Some(format!("{:?}", solve_report.method));
            write_outputs(out, prob.nu, cfg.id(), Some(&traj), Some(&control))?;
            rep.wall_time_s = started.elapsed().as_secs_f64();
            rep.write(out)?;
            println!(
                "optimize {}: J = {:.6e}, endpoint error {:.3e} ({:?})",
                cfg.id(),
                j,
                solve_report.endpoint_error,
                solve_report.method
            );
            Ok(())
        }
        Err(e) => {
            rep.status = format!("failed: {e}");
            rep.reason("j", "solve failed");
            rep.wall_time_s = started.elapsed().as_secs_f64();
            std::fs::create_dir_all(out)?;
            rep.write(out)?;
            Err(e.into())
        }
    }
}

fn cmd_mleval(alpha: f64, beta: f64, z: f64, tol: f64) -> Result<(), Failure> {
    let params = MlParams::new(alpha, beta)?.with_tol(tol)?;
    match ml_eval(&params, z) {
        Ok(eval) => {
            println!("E_({alpha},{beta})({z}) = {:.17e}", eval.value);
            println!("error bound          = {:.3e} ({:?})", eval.error_bound, eval.method);
            Ok(())
        }
        Err(CoreError::AccuracyFailure {
            value,
            achieved,
            requested,
        }) => {
            println!("E_({alpha},{beta})({z}) = {value:.17e}");
            println!("error bound          = {achieved:.3e} (requested {requested:.3e})");
            Err(Failure {
                code: EXIT_NUMERICAL,
                message: format!(
                    "requested accuracy {requested:.3e} not reachable; achieved {achieved:.3e}"
                ),
            })
        }
        Err(e) => Err(e.into()),
    }
}

/// Parse a control CSV in the `steer` output format (`t, u_1, ..., u_N`,
/// one row per subinterval).
fn parse_control_csv(path: &Path, prob: &SteeringProblem) -> Result<ControlSignal, Failure> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue; // header
        }
        let fields: Result<Vec<f64>, _> = line.split(',').skip(1).map(str::trim).map(str::parse).collect();
        let fields = fields.map_err(|e| Failure {
            code: EXIT_VALIDATION,
            message: format!("{}: line {}: {e}", path.display(), i + 1),
        })?;
        rows.push(fields);
    }
    let m = prob.grid.steps();
    let n = prob.n_controls();
    if rows.len() != m || rows.iter().any(|r| r.len() != n) {
        return Err(Failure {
            code: EXIT_VALIDATION,
            message: format!(
                "control file must have {m} rows of {n} values for this scenario, found {} rows",
                rows.len()
            ),
        });
    }
    let values = nalgebra_from_rows(&rows);
    Ok(ControlSignal::new(values, prob.grid)?)
}

fn nalgebra_from_rows(rows: &[Vec<f64>]) -> nalgebra::DMatrix<f64> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    nalgebra::DMatrix::from_fn(m, n, |i, j| rows[i][j])
}
