use bjl_cli::scenario::{env_tolerance_scale, load_domain_file, Step};
use bjl_cli::{run, run_scenario, DomainSpec, HarnessError, Report, RunOptions, Scenario};
use bjl_core::perturb::{apply_plan, PerturbationPlan};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bjl", version, about = "Convex billiard dynamics: orbits, jets, perturbations, manifolds and tangencies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Output {
    /// Directory for report.json and artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record per-step wall-clock time.
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Clone)]
struct OrbitArgs {
    /// Domain file, `circle` or `ellipse:<e>`.
    domain: String,
    #[arg(long, default_value_t = 1)]
    p: u32,
    #[arg(long, default_value_t = 2)]
    q: usize,
    #[arg(long, default_value_t = 0.0)]
    seed: f64,
}

impl OrbitArgs {
    fn spec(&self, start: usize) -> Result<Value, HarnessError> {
        Ok(json!({"domain": domain_spec(&self.domain)?, "p": self.p, "q": self.q, "seed": self.seed, "k": start}))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    #[command(subcommand)]
    Domain(DomainCmd),
    #[command(subcommand)]
    Orbit(OrbitCmd),
    #[command(subcommand)]
    Perturb(PerturbCmd),
    #[command(subcommand)]
    Manifold(ManifoldCmd),
    #[command(subcommand)]
    Tangency(TangencyCmd),
    /// Homoclinic-orbit injectivity at separation delta.
    Injectivity {
        domain: String,
        #[arg(long, default_value_t = 1e-3)]
        delta: f64,
        #[command(flatten)]
        output: Output,
    },
    #[command(subcommand)]
    Verify(VerifyCmd),
}

#[derive(Subcommand)]
enum DomainCmd {
    /// Positivity, closure and unit length.
    Check {
        domain: String,
        #[command(flatten)]
        output: Output,
    },
    /// Normalized profile as JSON, optionally with a (theta, rho) table.
    Show {
        domain: String,
        #[arg(long)]
        samples: Option<usize>,
    },
}

#[derive(Subcommand)]
enum OrbitCmd {
    /// Birkhoff p/q orbit.
    Find {
        #[command(flatten)]
        orbit: OrbitArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Monodromy classification of a Birkhoff orbit.
    Classify {
        #[command(flatten)]
        orbit: OrbitArgs,
    },
    /// Taylor coefficients of f^steps at (s, phi).
    Jet {
        domain: String,
        #[arg(long)]
        s: f64,
        #[arg(long)]
        phi: f64,
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Subcommand)]
enum PerturbCmd {
    /// First-order change of df^q from a curvature change at one impact.
    Predict {
        #[command(flatten)]
        orbit: OrbitArgs,
        #[arg(long, default_value_t = 0)]
        start: usize,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        eps: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Curvature patches producing a target change of the order-n coefficients.
    Solve {
        domain: String,
        #[arg(long)]
        s: f64,
        #[arg(long)]
        phi: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        target: Vec<f64>,
        #[arg(long)]
        half_width: Option<f64>,
        #[command(flatten)]
        output: Output,
    },
    /// Apply a plan (the `plan` value of a solve report) and write the domain.
    Apply {
        domain: String,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        write: PathBuf,
    },
    /// Rotate df^q of a periodic orbit and restore higher orders.
    Rotate {
        #[command(flatten)]
        orbit: OrbitArgs,
        #[arg(long, allow_hyphen_values = true)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        n: usize,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Subcommand)]
enum ManifoldCmd {
    /// Unstable or stable branch of a hyperbolic orbit of f^q.
    Grow {
        #[command(flatten)]
        orbit: OrbitArgs,
        #[arg(long)]
        stable: bool,
        #[arg(long)]
        negative: bool,
        #[arg(long, default_value_t = 6)]
        levels: usize,
        #[arg(long, default_value_t = 1.2)]
        max_length: f64,
        #[arg(long, default_value_t = 1e-8)]
        chord_tol: f64,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Subcommand)]
enum TangencyCmd {
    /// Splitting function of the q = 2 homoclinic pair; with --family,
    /// bisection over the built-in one-parameter family.
    Scan {
        domain: Option<String>,
        #[arg(long)]
        family: bool,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        window: Option<Vec<f64>>,
        #[arg(long, default_value_t = 128)]
        samples: usize,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Subcommand)]
enum VerifyCmd {
    /// Every acceptance operation with default parameters.
    All {
        #[command(flatten)]
        output: Output,
    },
}

fn domain_spec(arg: &str) -> Result<DomainSpec, HarnessError> {
    if arg == "circle" {
        return Ok(DomainSpec::Circle { circle: true });
    }
    if let Some(e) = arg.strip_prefix("ellipse:") {
        let e: f64 = e.parse().map_err(|_| HarnessError::Schema(format!("bad ellipse parameter '{e}'")))?;
        return Ok(DomainSpec::EllipseLike { ellipse_like: e });
    }
    let path = std::fs::canonicalize(arg).map_err(|e| HarnessError::Schema(format!("cannot open domain '{arg}': {e}")))?;
    Ok(DomainSpec::File { file: path })
}

fn single(op: &str, params: Value, output: &Output) -> Result<Report, HarnessError> {
    let scenario = Scenario { name: op.into(), domain: None, pipeline: vec![Step { op: op.into(), params }], tolerances: Default::default(), seed: 0 };
    execute(&scenario, output)
}

fn options(output: &Output) -> Result<RunOptions, HarnessError> {
    Ok(RunOptions { timing: output.timing, tolerance_scale: env_tolerance_scale()?, output_dir: output.out.clone() })
}

fn execute(scenario: &Scenario, output: &Output) -> Result<Report, HarnessError> {
    run(scenario, Path::new("."), &options(output)?)
}

fn no_output() -> Output {
    Output { out: None, timing: false }
}

fn dispatch(cmd: Command) -> Result<Report, HarnessError> {
    match cmd {
        Command::Run { scenario, output } => run_scenario(&scenario, &options(&output)?),
        Command::Domain(DomainCmd::Check { domain, output }) => single("admissibility", json!({"domain": domain_spec(&domain)?}), &output),
        Command::Domain(DomainCmd::Show { domain, samples }) => {
            let d = domain_spec(&domain)?.load(Path::new("."))?;
            println!("{}", d.to_json());
            if let Some(n) = samples {
                for i in 0..n {
                    let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    println!("{th:.16e} {:.16e}", d.rho(th));
                }
            }
            std::process::exit(0);
        }
        Command::Orbit(OrbitCmd::Find { orbit, output }) => {
            single("find_orbit", json!({"domain": domain_spec(&orbit.domain)?, "p": orbit.p, "q": orbit.q, "seed": orbit.seed}), &output)
        }
        Command::Orbit(OrbitCmd::Classify { orbit }) => {
            let r = single("find_orbit", json!({"domain": domain_spec(&orbit.domain)?, "p": orbit.p, "q": orbit.q, "seed": orbit.seed}), &no_output())?;
            let eigen = &r.steps[0].values["orbit"]["eigen"];
            println!("{}", serde_json::to_string_pretty(eigen).unwrap());
            std::process::exit(r.exit_code());
        }
        Command::Orbit(OrbitCmd::Jet { domain, s, phi, order, steps, output }) => {
            single("orbit_jet", json!({"domain": domain_spec(&domain)?, "s": s, "phi": phi, "order": order, "steps": steps}), &output)
        }
        Command::Perturb(PerturbCmd::Predict { orbit, start, index, eps, output }) => {
            single("perturb_predict", json!({"orbit": orbit.spec(start)?, "index": index, "eps": eps}), &output)
        }
        Command::Perturb(PerturbCmd::Solve { domain, s, phi, n, target, half_width, output }) => single(
            "perturb_solve",
            json!({"domain": domain_spec(&domain)?, "s": s, "phi": phi, "n": n, "target": target, "half_width": half_width}),
            &output,
        ),
        Command::Perturb(PerturbCmd::Apply { domain, plan, write }) => {
            let d = domain_spec(&domain)?.load(Path::new("."))?;
            let text = std::fs::read_to_string(&plan).map_err(|e| HarnessError::Schema(format!("cannot read plan: {e}")))?;
            let plan: PerturbationPlan = serde_json::from_str(&text).map_err(|e| HarnessError::Schema(format!("bad plan: {e}")))?;
            match apply_plan(&d, &plan) {
                Ok(p) => {
                    std::fs::write(&write, p.to_json())?;
                    load_domain_file(&write)?;
                    std::process::exit(0);
                }
                Err(e) => {
                    eprintln!("perturb apply: {e}");
                    std::process::exit(1);
                }
            }
        }
        Command::Perturb(PerturbCmd::Rotate { orbit, delta, n, output }) => {
            single("rotation", json!({"orbit": orbit.spec(0)?, "delta": delta, "orders": [n]}), &output)
        }
        Command::Manifold(ManifoldCmd::Grow { orbit, stable, negative, levels, max_length, chord_tol, output }) => single(
            "manifold_grow",
            json!({"orbit": orbit.spec(0)?, "stable": stable, "positive": !negative, "levels": levels, "max_length": max_length, "chord_tol": chord_tol}),
            &output,
        ),
        Command::Tangency(TangencyCmd::Scan { domain, family, window, samples, output }) => {
            let mut p = json!({"samples": samples});
            if let Some(w) = window {
                p["window"] = json!([w[0], w[1]]);
            }
            if family {
                if domain.is_some() {
                    return Err(HarnessError::Schema("--family uses its own base domain".into()));
                }
                single("tangency_family", p, &output)
            } else {
                let d = domain.ok_or_else(|| HarnessError::Schema("a domain is required without --family".into()))?;
                p["domain"] = serde_json::to_value(domain_spec(&d)?).unwrap();
                single("tangency_scan", p, &output)
            }
        }
        Command::Injectivity { domain, delta, output } => {
            single("injectivity", json!({"domain": domain_spec(&domain)?, "delta": delta}), &output)
        }
        Command::Verify(VerifyCmd::All { output }) => execute(&bjl_cli::scenario::acceptance_scenario(), &output),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(report) => {
            print!("{}", report.to_json());
            for s in &report.steps {
                for f in &s.failures {
                    eprintln!("FAIL step {} {f}", s.index);
                }
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(HarnessError::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
