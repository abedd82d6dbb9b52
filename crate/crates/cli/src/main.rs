//! `rough-delay` — deterministic experiments on rough delay equations:
//! verification suites, fBm simulation, solving, convergence and
//! continuity studies. Exit codes: 0 success, 1 acceptance/threshold or
//! solver failure, 2 usage error.

mod commands;
mod config;

use config::{parse_flags, RunConfig};

const USAGE: &str = "\
rough-delay <command> [--flag value ...]

commands
  verify       run a verification suite        (--suite chen|sewing|covariance|chainrule|all)
  simulate     sample an fBm path + delayed areas, write CSV/JSON
  solve        solve the delay equation        (--mode onestep|picard|both)
  convergence  coarse-partition convergence table for the rough integral
  itomap       continuity of the solution map under (xi, driver) bumps

flags (defaults in parentheses)
  --config FILE          key = value file, overridden by flags
  --hurst H              Hurst parameter in (1/3, 1)      (0.45; --H accepted)
  --mesh P/Q             exact rational grid mesh          (1/256)
  --horizon P/Q          horizon T                         (1)
  --delays P/Q,...       increasing delays; 'none' for k=0 (1/4)
  --state-dim N          solution dimension n              (2)
  --driver-dim D         driver dimension d                (2)
  --gamma G              driver Holder exponent            (hurst - 0.05)
  --kappa K              working exponent, 1/3 < K < G     (1/3 + 0.55(G - 1/3))
  --sigma NAME           constant|linear|sine|bilinear-noncommuting (sine)
  --seed S               64-bit seed                       (42)
  --trials N             Monte-Carlo trials                (1024)
  --method M             cholesky|circulant                (cholesky)
  --mode M               onestep|picard|both               (onestep)
  --driver D             fbm|sincos                        (fbm)
  --suite S              verify suite                      (all)
  --levels L             convergence refinement levels     (6)
  --min-order X          convergence acceptance threshold  (1.0 sincos, 0.1 fbm)
  --eps A,B,...          itomap perturbation sizes         (1e-1,1e-2,1e-3)
  --perturb W            both|driver|xi                    (both)
  --xi-amplitude A       initial-path amplitude            (0.25)
  --out DIR              output directory (ROUGH_DELAY_OUT or ./rough-delay-out)
";

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let code = run(&args);
    std::process::exit(code);
}

fn run(args: &[String]) -> i32 {
    let Some(command) = args.first() else {
        eprint!("{USAGE}");
        return 2;
    };
    if command == "--help" || command == "-h" || command == "help" {
        print!("{USAGE}");
        return 0;
    }
    let flags = match parse_flags(&args[1..]) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}\n");
            eprint!("{USAGE}");
            return 2;
        }
    };
    let cfg = match RunConfig::resolve(command, &flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}\n");
            eprint!("{USAGE}");
            return 2;
        }
    };
    let result = match command.as_str() {
        "verify" => commands::cmd_verify(&cfg),
        "simulate" => commands::cmd_simulate(&cfg),
        "solve" => commands::cmd_solve(&cfg),
        "convergence" => commands::cmd_convergence(&cfg),
        "itomap" => commands::cmd_itomap(&cfg),
        other => {
            eprintln!("error: unknown command '{other}'\n");
            eprint!("{USAGE}");
            return 2;
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            // configuration-shaped problems (unknown suite, bad dims) are
            // usage errors; runtime failures exit 1 from the commands
            eprintln!("error: {e}");
            2
        }
    }
}
