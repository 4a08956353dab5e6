use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use rendezvous_core::irls::{EpsRule, WeightRule};
use rendezvous_core::mission::{load_mission, run_mission, write_outputs, RunArtifacts};
use rendezvous_core::verify::{run_suite, SuiteConfig, SuiteReport};
use rendezvous_core::{Error, NormMode};

const EXIT_USAGE: u8 = 1;
const EXIT_SOLVER: u8 = 2;

#[derive(Parser)]
#[command(name = "rendezvous", version, about = "Minimum-fuel rendezvous planning on elliptical orbits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a mission and write trajectory, control, summary and log files.
    Run(RunArgs),
    /// Compare the IRLS solvers with the LP oracle on random instances.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    L1,
    L21,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightArg {
    Paper,
    Block,
}

#[derive(Clone, Copy, ValueEnum)]
enum EpsArg {
    Paper,
    Sorted,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Preset name (gto, atv) or path to a JSON mission file.
    #[arg(long)]
    mission: String,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Number of stages.
    #[arg(long = "N", value_name = "INT")]
    stages: Option<usize>,
    #[arg(long)]
    jmax: Option<usize>,
    #[arg(long)]
    eps_bar: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum)]
    weight_rule: Option<WeightArg>,
    #[arg(long, value_enum)]
    eps_rule: Option<EpsArg>,
    /// Also check the result against the LP oracle / optimality certificate.
    #[arg(long)]
    verify: bool,
    /// Output directory (default: out/<mission>-<mode>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 200)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the per-instance outcomes as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Verify(args) => verify(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(
            Error::SingularGramian
            | Error::QuadratureNonconvergence { .. }
            | Error::Infeasible(_)
            | Error::InvalidLp(_),
        ) => EXIT_SOLVER,
        _ => EXIT_USAGE,
    }
}

fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let mut spec = load_mission(&args.mission)?;
    if let Some(mode) = args.mode {
        spec.mode = match mode {
            Mode::L1 => NormMode::L1,
            Mode::L21 => NormMode::L21,
        };
    }
    if let Some(n) = args.stages {
        spec.stages = n;
    }
    if let Some(j) = args.jmax {
        spec.irls.jmax = j;
    }
    if let Some(e) = args.eps_bar {
        spec.irls.eps_bar = e;
    }
    if let Some(t) = args.tau {
        spec.irls.tau = t;
    }
    if let Some(w) = args.weight_rule {
        spec.irls.weight_rule = match w {
            WeightArg::Paper => WeightRule::PaperLiteral,
            WeightArg::Block => WeightRule::BlockNorm,
        };
    }
    if let Some(e) = args.eps_rule {
        spec.irls.eps_rule = match e {
            EpsArg::Paper => EpsRule::PaperMax,
            EpsArg::Sorted => EpsRule::default(),
        };
    }
    spec.verify |= args.verify;
    spec.validate()?;

    let run = run_mission(&spec)?;
    let mode = match spec.mode {
        NormMode::L1 => "l1",
        NormMode::L21 => "l21",
    };
    let dir = args.out.unwrap_or_else(|| PathBuf::from("out").join(format!("{}-{mode}", spec.name)));
    let files = write_outputs(&run, &dir).with_context(|| format!("writing outputs to {}", dir.display()))?;
    print_run(&run);
    println!("outputs: {}", files.summary.parent().unwrap_or(&dir).display());

    let verified = run.summary.verification.as_ref().is_none_or(|v| v.certificate_accepted);
    Ok(if run.succeeded() && verified { ExitCode::SUCCESS } else { ExitCode::from(EXIT_SOLVER) })
}

fn print_run(run: &RunArtifacts) {
    let s = &run.summary;
    println!("mission {}  mode {:?}  N {}", s.mission, s.mode, s.stages);
    println!("status {:?} after {} iterations (eps {:.3e})", s.status, s.iterations, s.eps_final);
    println!("norm_l1  {:.6} m/s", s.norm_l1);
    println!("norm_l21 {:.6} m/s", s.norm_l21);
    println!("residual {:.3e}  terminal {:.3e}", s.residual, s.terminal_residual);
    println!("impulses above {:.0e} of the largest stage:", s.impulse_threshold);
    println!("  {:>5} {:>9} {:>11} {:>11} {:>11}", "k", "nu [rad]", "dv_x", "dv_y", "dv_z");
    for i in &s.impulses {
        println!("  {:>5} {:>9.4} {:>11.5} {:>11.5} {:>11.5}", i.k, i.nu, i.dv[0], i.dv[1], i.dv[2]);
    }
    if let Some(v) = &s.verification {
        if let Some(lp) = v.lp_optimum {
            println!("LP optimum {lp:.6} (relative gap {:.2e})", v.relative_gap.unwrap_or(f64::NAN));
        }
        println!(
            "certificate {} (max violation {:.2e}, tol {:.0e})",
            if v.certificate_accepted { "accepted" } else { "rejected" },
            v.certificate_violation,
            v.certificate_tol
        );
    }
    println!("elapsed {:.2?}", run.elapsed);
}

fn verify(args: VerifyArgs) -> anyhow::Result<ExitCode> {
    let cfg = SuiteConfig { instances: args.instances, seed: args.seed, ..Default::default() };
    let rep = run_suite(&cfg)?;
    if let Some(path) = &args.report {
        let json = serde_json::to_string_pretty(&rep)?;
        std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if print_suite(&rep) { ExitCode::SUCCESS } else { ExitCode::from(EXIT_SOLVER) })
}

fn print_suite(rep: &SuiteReport) -> bool {
    let (rejected, tested) = rep.perturbation_rejections();
    let l1_ok = rep.l1_failures() == 0;
    let cert_ok = rep.lp_cert_failures() == 0;
    let pert_ok = rejected == tested;
    let l21_ok = rep.l21_pass_rate() >= 0.95;
    let mark = |ok: bool| if ok { "ok  " } else { "FAIL" };
    println!("{} instances, seed {}, {:.2?}", rep.instances, rep.seed, rep.elapsed);
    println!("{} l1 IRLS vs LP: {} outside bounds, worst relative gap {:.2e}", mark(l1_ok), rep.l1_failures(), rep.worst_l1_gap());
    println!("{} LP solutions certified: {} rejected", mark(cert_ok), rep.lp_cert_failures());
    println!("{} perturbed points rejected: {rejected}/{tested}", mark(pert_ok));
    println!("{} l2/l1 certificate pass rate {:.1}%", mark(l21_ok), 100.0 * rep.l21_pass_rate());
    for o in rep.l21_failures() {
        println!("     instance {} rejected, max violation {:.3e}", o.index, o.l21_violation);
    }
    l1_ok && cert_ok && pert_ok && l21_ok
}
