mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hybrid_sl::bellman::write_decisions_csv;
use hybrid_sl::grid::fmt_f64;
use hybrid_sl::{
    bellman_apply, run_solver, synthesize, validate_problem, ConvergenceReport, Method, Severity, ValueField,
};
use serde_json::json;

use config::{parse_eps_list, parse_methods, RunConfig, Settings};

/// Semi-Lagrangian value and policy iteration for hybrid optimal control.
#[derive(Parser)]
#[command(name = "hybrid-sl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one benchmark and write value, policy, trajectory and reports.
    Run {
        #[command(flatten)]
        common: Common,
        /// vi, pi or mpi.
        #[arg(long)]
        solver: Option<String>,
        /// Stopping tolerance.
        #[arg(long)]
        eps: Option<String>,
    },
    /// Solve one benchmark with several methods and tabulate the counts.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated solvers, e.g. `vi,pi`.
        #[arg(long)]
        methods: Option<String>,
        /// Comma-separated tolerances.
        #[arg(long)]
        eps: Option<String>,
    },
}

#[derive(Args)]
struct Common {
    /// Benchmark name or path to a `key = value` config file.
    #[arg(long)]
    benchmark: Option<String>,
    /// Stopping norm: sup or rel-l1.
    #[arg(long)]
    norm: Option<String>,
    /// Sweeps per policy improvement (mpi).
    #[arg(long)]
    nit: Option<String>,
    /// Plain Bellman sweeps before the first improvement (mpi).
    #[arg(long)]
    warmup: Option<String>,
    /// Time step.
    #[arg(long)]
    dt: Option<String>,
    /// Nodes per axis, one value or one per axis.
    #[arg(long)]
    nodes: Option<String>,
    /// Box as `low:high` per axis, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    bounds: Option<String>,
    /// Control samples.
    #[arg(long)]
    nu: Option<String>,
    /// Initial state, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// Initial mode (1-based).
    #[arg(long)]
    q0: Option<String>,
    /// Trajectory horizon.
    #[arg(long)]
    tf: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Worker threads for the sweeps (default: all cores).
    #[arg(long)]
    threads: Option<String>,
    /// Iteration cap.
    #[arg(long = "max-iters")]
    max_iters: Option<String>,
}

impl Common {
    fn into_settings(self) -> Settings {
        let mut s = Settings::default();
        s.set("benchmark", self.benchmark);
        s.set("norm", self.norm);
        s.set("nit", self.nit);
        s.set("warmup", self.warmup);
        s.set("dt", self.dt);
        s.set("nodes", self.nodes);
        s.set("bounds", self.bounds);
        s.set("nu", self.nu);
        s.set("x0", self.x0);
        s.set("q0", self.q0);
        s.set("tf", self.tf);
        s.set("out", self.out);
        s.set("threads", self.threads);
        s.set("max-iters", self.max_iters);
        s
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn check_problem(rc: &RunConfig) -> Result<()> {
    let mut errors = Vec::new();
    for d in validate_problem(&rc.spec.problem, &rc.grid) {
        match d.severity {
            Severity::Warning => eprintln!("warning: {}", d.message),
            Severity::Error => errors.push(d.message),
        }
    }
    if !errors.is_empty() {
        anyhow::bail!("invalid problem: {}", errors.join("; "));
    }
    Ok(())
}

fn report_json(rc: &RunConfig, report: &ConvergenceReport) -> serde_json::Value {
    let g = &rc.grid;
    json!({
        "benchmark": rc.spec.name,
        "solver": report.to_json(),
        "n_it": rc.solver.n_it,
        "warmup_vi": rc.solver.warmup_vi,
        "max_iterations": rc.solver.max_iterations,
        "grid": {
            "bounds": (0..g.dim()).map(|a| [g.bounds(a).0, g.bounds(a).1]).collect::<Vec<_>>(),
            "nodes": (0..g.dim()).map(|a| g.nodes_per_axis(a)).collect::<Vec<_>>(),
            "modes": g.modes(),
            "dt": rc.params.dt(),
            "control_samples": rc.params.controls().len(),
        },
    })
}

fn run(settings: Settings) -> Result<ExitCode> {
    let method: Method = settings.get("solver").unwrap_or("vi").parse()?;
    let eps: f64 = match settings.get("eps") {
        Some(e) => e.trim().parse().with_context(|| format!("--eps {e}"))?,
        None => 1e-6,
    };
    let rc = RunConfig::build(&settings, method, eps)?;
    init_threads(rc.threads)?;
    check_problem(&rc)?;
    std::fs::create_dir_all(&rc.out).with_context(|| format!("creating {}", rc.out.display()))?;

    let (field, report) = run_solver(&rc.spec.problem, &rc.grid, &rc.params, &rc.solver)?;
    let out = &rc.out;
    field.write_csv(&rc.grid, create(out, "value.csv")?)?;
    let (_, decisions) = bellman_apply(&rc.spec.problem, &rc.grid, &rc.params, &field)?;
    write_decisions_csv(&rc.grid, &decisions, create(out, "policy.csv")?)?;
    report.write_csv(create(out, "convergence.csv")?)?;

    let traj = synthesize(&rc.spec.problem, &rc.grid, &rc.params, &field, &rc.x0, rc.q0, rc.t_f)?;
    traj.write_csv(create(out, "trajectory.csv")?)?;
    traj.write_switches_csv(rc.grid.dim(), create(out, "switches.csv")?)?;

    let mut summary = report_json(&rc, &report);
    summary["trajectory"] = json!({
        "x0": rc.x0,
        "q0": rc.q0 + 1,
        "t_f": rc.t_f,
        "samples": traj.samples.len(),
        "switches": traj.switch_events.len(),
        "accumulated_cost": traj.accumulated_cost,
    });
    let mut w = create(out, "summary.json")?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;

    println!(
        "{} {}: {} iterations, {} improvements, residual {}, {:.3} s, {}",
        rc.spec.name,
        method.name(),
        report.iterations,
        report.policy_improvements,
        fmt_f64(report.final_residual),
        report.wall_time,
        if report.converged { "converged" } else { "NOT converged" }
    );
    if report.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "error: no convergence to {} within {} iterations",
            fmt_f64(eps),
            rc.solver.max_iterations
        );
        Ok(ExitCode::from(3))
    }
}

fn compare(settings: Settings) -> Result<ExitCode> {
    let methods = parse_methods(&settings)?;
    let eps_list = parse_eps_list(&settings)?;
    let first = RunConfig::build(&settings, methods[0], eps_list[0])?;
    init_threads(first.threads)?;
    check_problem(&first)?;
    std::fs::create_dir_all(&first.out).with_context(|| format!("creating {}", first.out.display()))?;

    let mut table = create(&first.out, "comparison.csv")?;
    writeln!(
        table,
        "eps,method,iterations,policy_improvements,final_residual,wall_time,converged"
    )?;
    let mut diffs = create(&first.out, "cross_difference.csv")?;
    let names: Vec<&str> = methods.iter().map(|m| m.name()).collect();
    writeln!(diffs, "eps,method,{}", names.join(","))?;

    let mut all_converged = true;
    for &eps in &eps_list {
        let mut fields: Vec<ValueField> = Vec::new();
        for &method in &methods {
            let rc = RunConfig::build(&settings, method, eps)?;
            let (field, r) = run_solver(&rc.spec.problem, &rc.grid, &rc.params, &rc.solver)?;
            all_converged &= r.converged;
            writeln!(
                table,
                "{},{},{},{},{},{},{}",
                fmt_f64(eps),
                method.name(),
                r.iterations,
                r.policy_improvements,
                fmt_f64(r.final_residual),
                fmt_f64(r.wall_time),
                r.converged
            )?;
            println!(
                "{} eps {eps:e} {}: {} iterations, {} improvements, {:.3} s{}",
                rc.spec.name,
                method.name(),
                r.iterations,
                r.policy_improvements,
                r.wall_time,
                if r.converged { "" } else { ", NOT converged" }
            );
            fields.push(field);
        }
        for (a, fa) in fields.iter().enumerate() {
            let row: Vec<String> = fields.iter().map(|fb| fmt_f64(fa.sup_distance(fb))).collect();
            writeln!(diffs, "{},{},{}", fmt_f64(eps), names[a], row.join(","))?;
        }
    }
    table.flush()?;
    diffs.flush()?;
    Ok(if all_converged {
        ExitCode::SUCCESS
    } else {
        eprintln!("error: at least one solve did not converge");
        ExitCode::from(3)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { common, solver, eps } => {
            let mut s = common.into_settings();
            s.set("solver", solver);
            s.set("eps", eps);
            s.resolve_file().and_then(run)
        }
        Command::Compare { common, methods, eps } => {
            let mut s = common.into_settings();
            s.set("methods", methods);
            s.set("eps", eps);
            s.resolve_file().and_then(compare)
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
