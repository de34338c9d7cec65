//! Command-line driver for the nonlocal diffusion laboratory: group and
//! kernel validation, operator consistency studies, full convergence
//! studies, single solves and report re-emission. Exit code 0 means every
//! requested pass/fail threshold was met.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use carnot_nonlocal::config::{operator_kind, ExperimentConfig};
use carnot_nonlocal::grid::GridSpec;
use carnot_nonlocal::nonlocal::{assemble_rates, solve, GridProblem, OperatorKind};
use carnot_nonlocal::report::{self, ReportFormat};
use carnot_nonlocal::study::{consistency_study, convergence_study, interior_sample_points};
use carnot_nonlocal::validate::group_suite;
use carnot_nonlocal::{make_bump_kernel, ScalarField};

#[derive(Parser)]
#[command(name = "carnot-nonlocal", version, about = "Nonlocal diffusion on stratified groups")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for reports and tables.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads (0 uses every core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Seed for the randomized validation suite.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check group axioms: randomized associativity, identity, inverse,
    /// dilation automorphism, norm homogeneity and the unit Jacobian.
    ValidateGroup {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Build the configured kernel and verify its moment identities.
    ValidateKernel {
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Sup-norm distance between the rescaled operator and its local limit
    /// on smooth test fields, with a fitted decay rate.
    Consistency,
    /// Full convergence study against the finite-difference reference.
    Converge,
    /// Single nonlocal solve; writes the trajectory as CSV.
    Solve,
    /// Re-emit report.csv and plot.gp from a stored report.json.
    Report,
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .expect("rayon pool already initialized");
    }
    match run(&cli) {
        Ok(true) => {}
        Ok(false) => std::process::exit(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(2);
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .context("this subcommand needs --config PATH")?;
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::ValidateGroup { trials } => {
            let cfg = load_config(cli)?;
            let group = cfg.group.build()?;
            let report = group_suite(&group, *trials, cli.seed)?;
            println!(
                "group: dim {} step {} Q {}",
                group.dim(),
                group.step(),
                group.homogeneous_dimension()
            );
            println!("trials: {}", report.trials);
            println!("max associativity error: {:.3e}", report.max_associativity_error);
            println!("max identity error:      {:.3e}", report.max_identity_error);
            println!("max inverse error:       {:.3e}", report.max_inverse_error);
            println!("max automorphism error:  {:.3e}", report.max_automorphism_error);
            println!("max norm homogeneity:    {:.3e}", report.max_norm_homogeneity_error);
            println!("max norm inverse gap:    {:.3e}", report.max_norm_inverse_error);
            println!("max Jacobian det gap:    {:.3e}", report.max_jacobian_gap);
            println!("verdict: {}", if report.passed { "PASS" } else { "FAIL" });
            Ok(report.passed)
        }
        Command::ValidateKernel { tol } => {
            let cfg = load_config(cli)?;
            let group = cfg.group.build()?;
            let kernel =
                make_bump_kernel(&group, cfg.kernel.radius, cfg.kernel.shape()?, cfg.kernel.nodes)?;
            let report = kernel.validate_moments(*tol);
            println!("kernel: {} on dim {}", cfg.kernel.shape, group.dim());
            println!("kappa: {:.12}", kernel.kappa());
            println!("C(J):  {:.12}", kernel.second_moment());
            println!("mass:  {:.12}", report.mass);
            println!("first moments: {:?}", report.first_moments);
            for v in &report.violations {
                println!("violation: {v}");
            }
            println!("verdict: {}", if report.ok() { "PASS" } else { "FAIL" });
            Ok(report.ok())
        }
        Command::Consistency => {
            let cfg = load_config(cli)?;
            let sweep = cfg
                .sweep
                .as_ref()
                .context("consistency needs a 'sweep' section")?;
            let group = cfg.group.build()?;
            let kind = operator_kind(&sweep.operator)?;
            let kernel =
                make_bump_kernel(&group, cfg.kernel.radius, cfg.kernel.shape()?, cfg.kernel.nodes)?;
            let (mut coeffs, scalar) = cfg.build_coefficients(kind, &group)?;
            if let Some(cs) = &mut coeffs {
                if cs.positivity().is_err() {
                    let eps_max = sweep.epsilons.iter().copied().fold(0.0, f64::max);
                    let reach = carnot_nonlocal::coeffs::sample_reach(
                        &group,
                        &kernel,
                        &cfg.domain.bounds,
                        cs,
                        1.1 * eps_max,
                        1.0,
                        17,
                    )?;
                    cs.set_positivity(reach.m);
                }
            }
            let per_axis = if group.dim() >= 3 { 3 } else { 5 };
            let points = interior_sample_points(&cfg.domain.bounds, per_axis);
            let fields = default_test_fields(group.dim());
            let study = consistency_study(
                &group,
                &kernel,
                kind,
                coeffs.as_ref(),
                scalar.as_ref(),
                &fields,
                &sweep.epsilons,
                &points,
            )?;
            println!("operator: {}", study.operator);
            for (eps, err) in study.epsilons.iter().zip(&study.errors) {
                println!("eps {eps:>8}: sup error {err:.6e}");
            }
            std::fs::create_dir_all(&cli.out)?;
            let csv_path = cli.out.join("consistency.csv");
            let mut csv = String::from("epsilon,error\n");
            for (eps, err) in study.epsilons.iter().zip(&study.errors) {
                csv.push_str(&format!("{eps},{err}\n"));
            }
            std::fs::write(&csv_path, csv)?;
            match &study.fit {
                Some(fit) => {
                    println!(
                        "fitted slope {:.4} (prefactor {:.4e}, residual {:.3e})",
                        fit.slope, fit.prefactor, fit.residual_rms
                    );
                    let min_slope = sweep.min_slope.unwrap_or(1.0);
                    let pass = fit.slope >= min_slope && study.decreasing;
                    println!("verdict: {}", if pass { "PASS" } else { "FAIL" });
                    Ok(pass)
                }
                None => {
                    println!("all errors vanish (exactness); no fit");
                    println!("verdict: PASS");
                    Ok(true)
                }
            }
        }
        Command::Converge => {
            let cfg = load_config(cli)?;
            let setup = cfg.study_setup(study_id(cli), cli.seed)?;
            let report = convergence_study(&setup)?;
            for (eps, err, h, dt) in report.rows() {
                println!("eps {eps:>8}: error {err:.6e} (h = {h:.3e}, dt = {dt:.3e})");
            }
            println!(
                "fitted rate {:.4} (prefactor {:.4e}, residual {:.4})",
                report.slope, report.prefactor, report.residual
            );
            let out_dir = output_dir(cli, &cfg);
            let formats = cfg.output_formats()?;
            let files = report::emit_report(&report, &out_dir, &formats)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
            println!("verdict: {}", if report.passed { "PASS" } else { "FAIL" });
            Ok(report.passed)
        }
        Command::Solve => {
            let cfg = load_config(cli)?;
            let op = cfg
                .operator
                .as_ref()
                .context("solve needs an 'operator' section")?;
            let group = cfg.group.build()?;
            let kind = operator_kind(&op.kind)?;
            let kernel =
                make_bump_kernel(&group, cfg.kernel.radius, cfg.kernel.shape()?, cfg.kernel.nodes)?;
            let h = cfg.domain.h.context("solve needs domain.h")?;
            let grid = GridSpec::uniform(&cfg.domain.bounds, h)?;
            let data = cfg.data.as_ref().context("solve needs a 'data' section")?;
            let (u0, g) = (data.u0.build(), data.g.build());
            let (mut coeffs, scalar) = cfg.build_coefficients(kind, &group)?;
            if let Some(cs) = &mut coeffs {
                if cs.positivity().is_err() {
                    let reach = carnot_nonlocal::coeffs::sample_reach(
                        &group,
                        &kernel,
                        &cfg.domain.bounds,
                        cs,
                        1.1 * op.epsilon,
                        1.0,
                        17,
                    )?;
                    cs.set_positivity(reach.m);
                }
            }
            let problem = match kind {
                OperatorKind::Convolution => GridProblem::convolution(
                    group,
                    grid,
                    kernel,
                    op.epsilon,
                    u0,
                    g,
                    cfg.time.horizon,
                ),
                OperatorKind::DriftDiffusion => GridProblem::drift_diffusion(
                    group,
                    grid,
                    kernel,
                    coeffs.unwrap(),
                    op.epsilon,
                    u0,
                    g,
                    cfg.time.horizon,
                ),
                OperatorKind::FokkerPlanck => GridProblem::fokker_planck(
                    group,
                    grid,
                    kernel,
                    scalar.unwrap(),
                    op.epsilon,
                    u0,
                    g,
                    cfg.time.horizon,
                ),
            };
            let table = assemble_rates(&problem)?;
            if table.collar_heavy {
                eprintln!(
                    "note: kernel reach exceeds the domain extent; stencils are collar-dominated"
                );
            }
            if table.compatibility_gap > 1e-8 {
                eprintln!(
                    "note: u0 and g(., 0) disagree on the boundary by {:.3e}",
                    table.compatibility_gap
                );
            }
            let dt = cfg.time.dt.unwrap_or(table.dt_max);
            let n = cfg.time.outputs.max(1);
            let times: Vec<f64> = (1..=n).map(|k| cfg.time.horizon * k as f64 / n as f64).collect();
            let states = solve(&problem, &table, dt, &times)?;
            std::fs::create_dir_all(&cli.out)?;
            let path = cli.out.join("trajectory.csv");
            let mut csv = String::from("t");
            for axis in 0..problem.grid.dim() {
                csv.push_str(&format!(",x{}", axis + 1));
            }
            csv.push_str(",value\n");
            for state in &states {
                for (node, v) in table.interior_nodes().iter().zip(&state.values) {
                    csv.push_str(&format!("{}", state.t));
                    for c in problem.grid.node_coords(*node) {
                        csv.push_str(&format!(",{c}"));
                    }
                    csv.push_str(&format!(",{v}\n"));
                }
            }
            std::fs::write(&path, csv)?;
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Report => {
            let cfg = cli.config.as_ref().map(|p| ExperimentConfig::load(p)).transpose()?;
            let dir = match &cfg {
                Some(c) => output_dir(cli, c),
                None => cli.out.clone(),
            };
            let json = dir.join(report::JSON_NAME);
            if !json.exists() {
                bail!("no {} found in {}", report::JSON_NAME, dir.display());
            }
            let report_data = report::read_json(&json)?;
            report::emit_report(&report_data, &dir, &[ReportFormat::Csv, ReportFormat::Gnuplot])?;
            println!(
                "re-emitted {} and {} in {}",
                report::CSV_NAME,
                report::GNUPLOT_NAME,
                dir.display()
            );
            println!("verdict: {}", if report_data.passed { "PASS" } else { "FAIL" });
            Ok(report_data.passed)
        }
    }
}

fn study_id(cli: &Cli) -> &str {
    cli.config
        .as_ref()
        .and_then(|p| p.file_stem())
        .and_then(|s| s.to_str())
        .unwrap_or("study")
}

fn output_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    match cfg.output.as_ref().and_then(|o| o.dir.as_ref()) {
        Some(dir) if cli.out == Path::new("out") => PathBuf::from(dir),
        _ => cli.out.clone(),
    }
}

/// Smooth default fields for consistency studies.
fn default_test_fields(dim: usize) -> Vec<ScalarField> {
    match dim {
        1 => vec![
            ScalarField::new(|x: &[f64]| x[0].sin() + 0.5 * (2.0 * x[0]).cos()),
            ScalarField::new(|x: &[f64]| (1.0 + x[0] * x[0]).ln()),
        ],
        2 => vec![
            ScalarField::new(|x: &[f64]| x[0].sin() * x[1].cos()),
            ScalarField::new(|x: &[f64]| (x[0] + 0.5 * x[1]).sin()),
        ],
        _ => vec![
            ScalarField::new(|x: &[f64]| x[0].sin() * x[1].cos() * (1.0 + 0.5 * x[2]).sin()),
            ScalarField::new(|x: &[f64]| (x[0] + x[1] + 0.25 * x[2]).cos()),
        ],
    }
}
