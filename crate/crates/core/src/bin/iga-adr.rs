use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use iga_adr::config::RunConfig;
use iga_adr::norms::{convergence_study, DtRule};
use iga_adr::output::write_snapshot;
use iga_adr::problems::{ProblemKind, ProblemSpec};
use iga_adr::time_integration::run_simulation;
use iga_adr::Error;

#[derive(Parser)]
#[command(
    name = "iga-adr",
    version,
    about = "Isogeometric semi-Lagrangian solver for advection-diffusion-reaction systems",
    after_help = "Set IGA_THREADS to cap the number of worker threads."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation described by a config file and write snapshots.
    #[command(after_help = CONFIG_HELP)]
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mesh-convergence study on a problem with an exact solution.
    Converge {
        #[arg(long)]
        problem: String,
        /// Comma-separated degrees, e.g. `1,2,3`.
        #[arg(long)]
        degrees: String,
        /// Comma-separated elements per direction, e.g. `8,16,32`.
        #[arg(long)]
        meshes: String,
        /// `default` (0.1 h^((p+1)/2)), `power:C`, `linear:C` or `fixed:DT`.
        #[arg(long, default_value = "default")]
        dt_rule: String,
    },
    /// Print build information and the available problems.
    Info,
}

const CONFIG_HELP: &str = "\
Config file: one `key = value` per line, `#` starts a comment.
  problem         nonlinear-scalar | exact-system | schnakenberg | gray-scott (required)
  geometry        auto | rectangle:x0,x1,y0,y1 | disk:cx,cy,r | annulus:cx,cy,r_in,r_out
  nx, ny          elements per direction
  degree          1..=8
  dt, t_end       time step and final time
  n_substeps      auto | reaction RK4 substeps per half-step
  quad_points     auto (degree + 1) | Gauss points per direction
  bc              auto | neumann-zero | neumann-exact | dirichlet-zero
  out_dir         output directory (default `output`)
  snapshot_every  write a snapshot every N steps; 0 writes the final one only
  sample_n        export grid points per direction (default 4 max(nx, ny) + 1)
  param.NAME      problem parameter override
Defaults: nonlinear-scalar p=4 32x32 dt=0.002 t_end=1; exact-system p=2 16x16 dt=0.01 t_end=1;
schnakenberg p=5 32x32 dt=0.005 t_end=2; gray-scott disk p=5 16x16 dt=1 t_end=500.";

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Simulate { config, out } => simulate(config, out),
        Command::Converge { problem, degrees, meshes, dt_rule } => converge(&problem, &degrees, &meshes, &dt_rule),
        Command::Info => {
            info();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(2)
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("IGA_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("IGA_THREADS must be a positive integer, got `{value}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn simulate(config: PathBuf, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(&config)?;
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    let problem = cfg.problem_spec()?;
    let disc = cfg.discretization(&problem)?;
    let solver_cfg = cfg.solver_config(&problem);
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::Io { path: cfg.out_dir.clone(), source: e })?;
    cfg.save(cfg.out_dir.join("run.cfg"))?;

    println!(
        "problem {} | degree {} | mesh {}x{} | ndof {} | dt {:e} | steps {} | bc {}",
        problem.kind,
        cfg.degree,
        cfg.nx,
        cfg.ny,
        disc.ndof(),
        solver_cfg.effective_dt(),
        solver_cfg.n_steps(),
        solver_cfg.bc
    );
    let start = Instant::now();
    let mut written = 0usize;
    let mut observer = |snap: &iga_adr::time_integration::Snapshot| -> iga_adr::Result<()> {
        let stem = cfg.out_dir.join(format!("snapshot_{:06}", snap.step));
        let title = format!("{} step {} t {:e}", problem.kind, snap.step, snap.time);
        write_snapshot(&disc, &snap.u, &snap.v, cfg.sample_n, stem, &title)?;
        written += 1;
        Ok(())
    };
    let result = run_simulation(&problem, &disc, solver_cfg, &mut observer)?;
    if cfg.snapshot_every == 0 {
        let s = &result.state;
        let stem = cfg.out_dir.join(format!("snapshot_{:06}", s.step));
        let title = format!("{} step {} t {:e}", problem.kind, s.step, s.t);
        write_snapshot(&disc, &s.u, &s.v, cfg.sample_n, stem, &title)?;
        written += 1;
    }
    if let Some(last) = result.diagnostics.last() {
        println!(
            "t = {:.6e}: u in [{:.6e}, {:.6e}], v in [{:.6e}, {:.6e}]",
            last.time, last.u_min, last.u_max, last.v_min, last.v_max
        );
    }
    let c = result.counts;
    println!(
        "factorizations: mass {}, bdf1 {}, bdf2 {} | snapshots {} | wall {:.2} s",
        c.mass,
        c.bdf1,
        c.bdf2,
        written,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn parse_list(name: &str, s: &str) -> Result<Vec<usize>, Failure> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("--{name} expects a comma-separated list of positive integers, got `{s}`")))?;
    if v.is_empty() || v.contains(&0) {
        return Err(Failure::Usage(format!("--{name} entries must be positive, got `{s}`")));
    }
    Ok(v)
}

fn converge(problem: &str, degrees: &str, meshes: &str, dt_rule: &str) -> Result<(), Failure> {
    let kind: ProblemKind = problem.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let degrees = parse_list("degrees", degrees)?;
    if let Some(&p) = degrees.iter().find(|&&p| p > iga_adr::config::MAX_DEGREE) {
        return Err(Failure::Usage(format!("degree {p} exceeds {}", iga_adr::config::MAX_DEGREE)));
    }
    let meshes = parse_list("meshes", meshes)?;
    let rule: DtRule = dt_rule.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let spec = ProblemSpec::new(kind, &Default::default())?;
    if !spec.has_exact() {
        return Err(Failure::Usage(format!("problem {kind} has no exact solution")));
    }
    let report = convergence_study(&spec, &degrees, &meshes, rule)?;
    print!("{report}");
    Ok(())
}

fn info() {
    println!("iga-adr {}", env!("CARGO_PKG_VERSION"));
    println!("threads: {}", rayon::current_num_threads());
    println!("max degree: {}", iga_adr::config::MAX_DEGREE);
    println!("problems:");
    for kind in ProblemKind::ALL {
        let params: Vec<String> = kind.parameters().iter().map(|(k, v)| format!("{k}={v}")).collect();
        let exact = ProblemSpec::new(kind, &Default::default()).map(|p| p.has_exact()).unwrap_or(false);
        println!(
            "  {:<17} exact solution: {:<3} parameters: {}",
            kind.name(),
            if exact { "yes" } else { "no" },
            if params.is_empty() { "-".into() } else { params.join(", ") }
        );
    }
}
