use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use moorebelief::interpretation::{
    check_influenced_filtering, check_pomdp_solution, check_proposition1_all, Psi, Verdict,
};
use moorebelief::io;
use moorebelief::machine::{StateSample, StochasticMooreMachine};
use moorebelief::pomdp::Pomdp;
use moorebelief::solver::{
    canonical_machine, mdp_value_iteration, pomdp_value_iteration_shared, AlphaVectorPolicy, ReachLimits,
    SolverConfig, DEFAULT_EPSILON, DEFAULT_VECTOR_BUDGET, DEFAULT_WITNESS_RESOLUTION,
};
use moorebelief::sondik::{self, DemoConfig};
use moorebelief::{Error, Result};

/// Solve finite POMDPs and check Bayesian interpretations of Moore machines.
#[derive(Parser, Debug)]
#[command(name = "moorebelief", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a POMDP (or MDP) document by value iteration.
    Solve {
        #[arg(long)]
        pomdp: Option<PathBuf>,
        #[arg(long, conflicts_with = "pomdp")]
        mdp: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check that a machine is a consistent filter under an interpretation.
    CheckFiltering {
        #[arg(long)]
        machine: PathBuf,
        #[arg(long)]
        interp: PathBuf,
        #[command(flatten)]
        check: CheckArgs,
    },
    /// Check that a machine implements the optimal policy of a POMDP.
    CheckSolution {
        #[arg(long)]
        machine: PathBuf,
        #[arg(long)]
        pomdp: PathBuf,
        /// Interpretation supplying ψ.
        #[arg(long)]
        interp: PathBuf,
        #[command(flatten)]
        check: CheckArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Check that successor states carry the optimally updated belief.
    CheckProp1 {
        #[arg(long)]
        machine: PathBuf,
        #[arg(long)]
        pomdp: PathBuf,
        #[arg(long)]
        interp: PathBuf,
        #[command(flatten)]
        check: CheckArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Run a machine on an input sequence.
    Simulate {
        #[arg(long)]
        machine: PathBuf,
        /// Initial state: a label, a point of [0, 1], or comma-separated weights.
        #[arg(long)]
        m0: String,
        /// Comma-separated input labels.
        #[arg(long, default_value = "")]
        inputs: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Build the belief machine of the optimal policy and verify it.
    Canonical {
        #[arg(long)]
        pomdp: PathBuf,
        #[arg(long, default_value_t = ReachLimits::default().max_depth)]
        depth: usize,
        #[arg(long, default_value_t = ReachLimits::default().max_states)]
        max_states: usize,
        #[command(flatten)]
        check: CheckArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Run the bundled two-state example end to end.
    DemoSondik {
        #[arg(long, default_value_t = 1001)]
        grid: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct CheckArgs {
    /// Uniform grid size for interval machines.
    #[arg(long, default_value_t = 1001)]
    grid: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Fixed number of backups instead of the epsilon rule.
    #[arg(long)]
    horizon: Option<usize>,
    /// Overrides the discount stored in the document.
    #[arg(long)]
    gamma: Option<f64>,
    /// Maximum number of alpha vectors per stage.
    #[arg(long, default_value_t = DEFAULT_VECTOR_BUDGET)]
    budget: usize,
    #[arg(long, default_value_t = DEFAULT_WITNESS_RESOLUTION)]
    witness_resolution: usize,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        let mut cfg = match self.horizon {
            Some(h) => SolverConfig::horizon(h),
            None => SolverConfig::epsilon(self.epsilon),
        }
        .with_witness_resolution(self.witness_resolution);
        cfg.budget = self.budget;
        cfg
    }

    fn json(&self) -> Value {
        json!({
            "epsilon": self.epsilon,
            "horizon": self.horizon,
            "gamma": self.gamma,
            "budget": self.budget,
            "witness_resolution": self.witness_resolution,
        })
    }

    fn solve(&self, p: Pomdp) -> Result<AlphaVectorPolicy> {
        let p = match self.gamma {
            Some(g) => p.with_discount(g)?,
            None => p,
        };
        pomdp_value_iteration_shared(Arc::new(p), &self.config())
    }
}

fn load_pomdp(path: &Path) -> Result<Pomdp> {
    io::load(path)?.into_pomdp()?.to_pomdp()
}

fn load_machine(path: &Path) -> Result<StochasticMooreMachine> {
    io::load(path)?.into_machine()?.to_machine()
}

fn sample_for(machine: &StochasticMooreMachine, grid: usize) -> StateSample {
    match machine {
        StochasticMooreMachine::Interval(_) => StateSample::Grid(grid),
        _ => StateSample::All,
    }
}

fn write_report(path: &Option<PathBuf>, value: &Value) -> Result<()> {
    if let Some(path) = path {
        std::fs::write(path, serde_json::to_string_pretty(value).expect("values serialize"))?;
    }
    Ok(())
}

fn verdict_code(v: Verdict) -> ExitCode {
    if v.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn fmt_belief(b: &[f64]) -> String {
    let parts: Vec<String> = b.iter().map(|w| format!("{w:.6}")).collect();
    format!("({})", parts.join(", "))
}

fn solve(pomdp: Option<PathBuf>, mdp: Option<PathBuf>, args: SolverArgs, report: Option<PathBuf>) -> Result<ExitCode> {
    if let Some(path) = mdp {
        let m = io::load(&path)?.into_mdp()?.to_mdp()?;
        let sol = mdp_value_iteration(&m, args.epsilon)?;
        println!("mdp: {} iterations, residual {:.3e}", sol.iterations, sol.residual);
        for (x, v) in sol.values.iter().enumerate() {
            println!(
                "  {:>8}  value {:>14.9}  action {}",
                m.states().label(x),
                v,
                m.actions().label(sol.policy[x])
            );
        }
        write_report(
            &report,
            &json!({
                "values": sol.values,
                "policy": sol.policy.iter().map(|&a| m.actions().label(a)).collect::<Vec<_>>(),
                "residual": sol.residual,
                "iterations": sol.iterations,
                "config": args.json(),
                "versions": io::versions(),
            }),
        )?;
        return Ok(ExitCode::SUCCESS);
    }
    let Some(path) = pomdp else {
        return Err(Error::Schema("solve needs --pomdp or --mdp".into()));
    };
    let pol = args.solve(load_pomdp(&path)?)?;
    let p = pol.model().clone();
    println!(
        "pomdp: {} alpha vectors after {} stages (last change {:.3e}, objective {:?})",
        pol.vectors().len(),
        pol.stages(),
        pol.last_change(),
        p.objective()
    );
    let nh = p.hidden().len();
    let mut probes: Vec<Vec<f64>> = (0..nh)
        .map(|h| (0..nh).map(|k| if k == h { 1.0 } else { 0.0 }).collect())
        .collect();
    probes.push(vec![1.0 / nh as f64; nh]);
    let mut rows = Vec::new();
    for w in probes {
        let b = p.belief(w.clone())?;
        let d = pol.optimal_policy_at(&b)?;
        println!(
            "  b = {}  value {:>14.9}  action {}",
            fmt_belief(&w),
            d.value,
            p.actions().label(d.action)
        );
        rows.push(json!({ "belief": w, "value": d.value, "action": p.actions().label(d.action) }));
    }
    let mut out = io::policy_json(&pol);
    out["probes"] = Value::from(rows);
    out["config"] = args.json();
    out["versions"] = io::versions();
    write_report(&report, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn print_consistency(label: &str, verdict: Verdict, max_residual: f64, checked: usize, violations: usize, skipped: usize) {
    println!(
        "{label}: {} (max residual {max_residual:.3e}, {checked} checked, {violations} violations, {skipped} skipped)",
        if verdict.passed() { "PASS" } else { "FAIL" }
    );
}

fn check_filtering(machine: PathBuf, interp: PathBuf, check: CheckArgs) -> Result<ExitCode> {
    let machine = load_machine(&machine)?;
    let itp = io::load(&interp)?.into_interpretation()?.to_interpretation(&machine)?;
    let report = check_influenced_filtering(&machine, &itp, &sample_for(&machine, check.grid), check.tol)?;
    print_consistency(
        "consistency",
        report.verdict,
        report.max_residual,
        report.checked_points.len(),
        report.violations.len(),
        report.skipped_subjectively_impossible.len(),
    );
    for v in report.violations.iter().take(5) {
        println!(
            "  violation at m = {}, i = {}: residual {:.3e}",
            v.state,
            machine.inputs().label(v.input),
            v.residual
        );
    }
    let config = json!({ "grid": check.grid, "tol": check.tol });
    write_report(&check.report, &io::consistency_report_json(&report, &machine, config))?;
    Ok(verdict_code(report.verdict))
}

fn load_psi(interp: &Path, machine: &StochasticMooreMachine, p: &Pomdp) -> Result<Psi> {
    io::load(interp)?.into_interpretation()?.psi.to_psi(p.hidden(), machine)
}

fn check_solution(
    machine: PathBuf,
    pomdp: PathBuf,
    interp: PathBuf,
    check: CheckArgs,
    solver: SolverArgs,
) -> Result<ExitCode> {
    let machine = load_machine(&machine)?;
    let pol = solver.solve(load_pomdp(&pomdp)?)?;
    let psi = load_psi(&interp, &machine, pol.model())?;
    let report = check_pomdp_solution(
        &machine,
        pol.model(),
        &psi,
        &pol,
        &sample_for(&machine, check.grid),
        check.tol,
    )?;
    let f = &report.filtering;
    print_consistency(
        "consistency",
        f.verdict,
        f.max_residual,
        f.checked_points.len(),
        f.violations.len(),
        f.skipped_subjectively_impossible.len(),
    );
    println!(
        "policy: {} ({} states, {} mismatches)",
        if report.policy_passed() { "PASS" } else { "FAIL" },
        report.policy_checked,
        report.policy_mismatches.len()
    );
    let config = json!({ "grid": check.grid, "tol": check.tol, "solver": solver.json() });
    write_report(&check.report, &io::solution_report_json(&report, &machine, config))?;
    Ok(verdict_code(report.verdict))
}

fn check_prop1(
    machine: PathBuf,
    pomdp: PathBuf,
    interp: PathBuf,
    check: CheckArgs,
    solver: SolverArgs,
) -> Result<ExitCode> {
    let machine = load_machine(&machine)?;
    let pol = solver.solve(load_pomdp(&pomdp)?)?;
    let psi = load_psi(&interp, &machine, pol.model())?;
    let report = check_proposition1_all(
        &machine,
        pol.model(),
        &psi,
        &pol,
        &sample_for(&machine, check.grid),
        check.tol,
    )?;
    let violations = report.checked.iter().filter(|c| c.2.is_nan() || c.2 > report.tol).count();
    print_consistency(
        "optimal update",
        report.verdict,
        report.max_residual,
        report.checked.len(),
        violations,
        report.skipped.len(),
    );
    let config = json!({ "grid": check.grid, "tol": check.tol, "solver": solver.json() });
    write_report(&check.report, &io::prop1_report_json(&report, &machine, config))?;
    Ok(verdict_code(report.verdict))
}

fn simulate(machine: PathBuf, m0: String, inputs: String, seed: u64, report: Option<PathBuf>) -> Result<ExitCode> {
    let machine = load_machine(&machine)?;
    let m0 = machine.parse_state(&m0)?;
    let inputs: Vec<&str> = inputs.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let trajectory = machine.run(m0, &inputs, seed)?;
    for step in &trajectory.steps {
        let input = step.input.map_or("-", |i| machine.inputs().label(i));
        println!("  m = {:<24} out {:<6} in {}", step.state.to_string(), machine.outputs().label(step.output), input);
    }
    write_report(&report, &trajectory.to_json(&machine))?;
    Ok(ExitCode::SUCCESS)
}

fn canonical(pomdp: PathBuf, limits: ReachLimits, check: CheckArgs, solver: SolverArgs) -> Result<ExitCode> {
    let pol = solver.solve(load_pomdp(&pomdp)?)?;
    let p = pol.model().clone();
    let nh = p.hidden().len();
    let mut seeds = vec![p.belief(vec![1.0 / nh as f64; nh])?];
    for h in 0..nh {
        seeds.push(p.belief((0..nh).map(|k| if k == h { 1.0 } else { 0.0 }).collect())?);
    }
    let canon = canonical_machine(&pol, &seeds, limits)?;
    let states = canon.reachable_states();
    println!("canonical machine: {} reachable beliefs", states.len());
    let psi = Psi::Identity(p.hidden().clone());
    let sample = StateSample::Explicit(states);
    let report = check_pomdp_solution(&canon.machine, &p, &psi, &pol, &sample, check.tol)?;
    let f = &report.filtering;
    print_consistency(
        "consistency",
        f.verdict,
        f.max_residual,
        f.checked_points.len(),
        f.violations.len(),
        f.skipped_subjectively_impossible.len(),
    );
    println!(
        "policy: {} ({} mismatches)",
        if report.policy_passed() { "PASS" } else { "FAIL" },
        report.policy_mismatches.len()
    );
    let config = json!({
        "tol": check.tol,
        "max_depth": limits.max_depth,
        "max_states": limits.max_states,
        "solver": solver.json(),
    });
    let mut out = io::solution_report_json(&report, &canon.machine, config);
    out["reachable"] = Value::from(canon.reachable.iter().map(|b| b.weights().to_vec()).collect::<Vec<_>>());
    out["transitions"] = Value::from(
        canon
            .transitions
            .iter()
            .map(|(from, s, to)| json!({ "from": from, "s": p.sensors().label(*s), "to": to }))
            .collect::<Vec<_>>(),
    );
    write_report(&check.report, &out)?;
    Ok(verdict_code(report.verdict))
}

fn demo_sondik(grid: usize, tol: f64, epsilon: f64, report: Option<PathBuf>) -> Result<ExitCode> {
    // Fail early if the bundled document has drifted from the built-in model.
    io::bundled_sondik_pomdp()?;
    let config = DemoConfig {
        grid,
        tol,
        epsilon,
        ..DemoConfig::default()
    };
    let demo = sondik::run_demo(&config)?;
    let c = &demo.consistency;
    print_consistency(
        "consistency",
        c.verdict,
        c.max_residual,
        c.checked_points.len(),
        c.violations.len(),
        c.skipped_subjectively_impossible.len(),
    );
    println!("consistency time: {:.3} s", demo.consistency_seconds);
    println!("update deviation from Bayes: {:.3e}", demo.update_deviation);
    println!("discount sweep (costs minimized):");
    for e in &demo.sweep {
        let regions: Vec<String> = e
            .regions
            .iter()
            .map(|r| format!("[{:.4}, {:.4}] -> {}", r.start, r.end, r.action + 1))
            .collect();
        println!("  gamma {:.2}: {}", e.gamma, regions.join(", "));
    }
    let structural = demo.sweep.iter().any(|e| e.threshold_structure);
    println!(
        "threshold structure (action 1 below): {}",
        if structural { "FOUND" } else { "NOT FOUND" }
    );
    if let Some(best) = demo.best_entry() {
        println!(
            "best threshold {:.4} at gamma {:.2} (machine uses {})",
            best.threshold.unwrap_or(f64::NAN),
            best.gamma,
            sondik::THRESHOLD
        );
    }
    if let Some(sol) = &demo.solution {
        println!(
            "policy agreement at best gamma (informational): {} ({} of {} states differ)",
            if sol.policy_passed() { "PASS" } else { "FAIL" },
            sol.policy_mismatches.len(),
            sol.policy_checked
        );
    }

    let machine = sondik::machine();
    let cfg = json!({ "grid": grid, "tol": tol, "epsilon": epsilon, "gammas": config.gammas });
    let mut out = io::consistency_report_json(c, &machine, cfg);
    out["consistency_seconds"] = json!(demo.consistency_seconds);
    out["update_deviation"] = json!(demo.update_deviation);
    out["sweep"] = Value::from(
        demo.sweep
            .iter()
            .map(|e| {
                json!({
                    "gamma": e.gamma,
                    "threshold_structure": e.threshold_structure,
                    "threshold": e.threshold,
                    "regions": e.regions.iter().map(|r| json!({
                        "start": r.start, "end": r.end, "action": (r.action + 1).to_string(),
                    })).collect::<Vec<_>>(),
                })
            })
            .collect::<Vec<_>>(),
    );
    out["best"] = match demo.best_entry() {
        Some(e) => json!({ "gamma": e.gamma, "threshold": e.threshold, "reference": sondik::THRESHOLD }),
        None => Value::Null,
    };
    if let Some(sol) = &demo.solution {
        out["policy_mismatches"] = json!(sol.policy_mismatches.len());
    }
    write_report(&report, &out)?;
    Ok(verdict_code(Verdict::from_pass(c.passed() && structural)))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve {
            pomdp,
            mdp,
            solver,
            report,
        } => solve(pomdp, mdp, solver, report),
        Command::CheckFiltering { machine, interp, check } => check_filtering(machine, interp, check),
        Command::CheckSolution {
            machine,
            pomdp,
            interp,
            check,
            solver,
        } => check_solution(machine, pomdp, interp, check, solver),
        Command::CheckProp1 {
            machine,
            pomdp,
            interp,
            check,
            solver,
        } => check_prop1(machine, pomdp, interp, check, solver),
        Command::Simulate {
            machine,
            m0,
            inputs,
            seed,
            report,
        } => simulate(machine, m0, inputs, seed, report),
        Command::Canonical {
            pomdp,
            depth,
            max_states,
            check,
            solver,
        } => canonical(
            pomdp,
            ReachLimits {
                max_depth: depth,
                max_states,
            },
            check,
            solver,
        ),
        Command::DemoSondik {
            grid,
            tol,
            epsilon,
            report,
        } => demo_sondik(grid, tol, epsilon, report),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

