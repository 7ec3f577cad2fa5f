use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fracocp::harness::selftest::run_selftest;
use fracocp::harness::{run_experiment, ExperimentConfig};
use fracocp::mesh::{make_initial_mesh, DomainSpec};
use fracocp::Error;

#[derive(Parser)]
#[command(name = "fracocp", version, about = "Adaptive FEM for sparse optimal control with the fractional Laplacian")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file with `key = value` lines; defaults are used when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set alpha=1.5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    example: Option<u8>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    max_dofs: Option<usize>,
    #[arg(short, long)]
    output_dir: Option<String>,
    /// Serial assembly and evaluation; output files are bitwise reproducible.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    Gamma,
    Theta,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Disk,
    Square,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(ConfigArgs),
    /// Run one experiment per value of gamma or theta, each in its own
    /// subdirectory of the output directory.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Write an initial (optionally uniformly refined) mesh as JSON.
    MeshExport {
        #[arg(long, value_enum, default_value = "disk")]
        domain: DomainArg,
        /// Boundary segments (disk) or cells per side (square).
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        refine: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run the built-in consistency checks.
    Selftest,
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, Error> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = Vec::new();
    if let Some(v) = args.example {
        overrides.push(format!("example={v}"));
    }
    overrides.extend(args.overrides.iter().cloned());
    for (key, v) in [("alpha", args.alpha), ("theta", args.theta), ("gamma", args.gamma)] {
        if let Some(v) = v {
            overrides.push(format!("{key}={v:?}"));
        }
    }
    if let Some(v) = args.max_dofs {
        overrides.push(format!("max_dofs={v}"));
    }
    if let Some(v) = &args.output_dir {
        overrides.push(format!("output_dir={v:?}"));
    }
    if args.deterministic {
        overrides.push("deterministic=true".into());
    }
    ExperimentConfig::from_toml(&text, &overrides)
}

fn exit_for(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidDomain(_) => ExitCode::from(2),
        _ => ExitCode::from(3),
    }
}

fn run(cfg: &ExperimentConfig) -> Result<(), Error> {
    let res = run_experiment(cfg)?;
    let s = &res.summary;
    println!(
        "example {} alpha {} theta {} gamma {}: {} iterations, {} dofs, E_ocp {:.4e}, zero fraction {:.3}",
        s.example, s.alpha, s.theta, s.gamma, s.iterations, s.final_dofs, s.final_e_ocp, s.zero_fraction
    );
    for (name, fit) in &s.slopes {
        if let Some(f) = fit {
            println!("  slope {name}: {:.3} (r² {:.3})", f.slope, f.r_squared);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => load_config(&args).and_then(|cfg| run(&cfg)),
        Command::Sweep { cfg, param, values } => load_config(&cfg).and_then(|base| {
            let root = PathBuf::from(&base.output_dir);
            for v in values {
                let mut c = base.clone();
                let tag = match param {
                    SweepParam::Gamma => {
                        c.gamma = v;
                        format!("gamma_{v}")
                    }
                    SweepParam::Theta => {
                        c.theta = v;
                        format!("theta_{v}")
                    }
                };
                c.output_dir = root.join(tag).to_string_lossy().into_owned();
                c.validate()?;
                run(&c)?;
            }
            Ok(())
        }),
        Command::MeshExport { domain, n, refine, out } => export_mesh(domain, n, refine, &out),
        Command::Selftest => match run_selftest() {
            Ok(checks) => {
                let mut ok = true;
                for c in &checks {
                    let pass = c.passed();
                    ok &= pass;
                    println!("{} {}: {:.3e} (tolerance {:.1e})", if pass { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
                }
                if !ok {
                    return ExitCode::from(4);
                }
                Ok(())
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}

fn export_mesh(domain: DomainArg, n: usize, refine: usize, out: &Path) -> Result<(), Error> {
    let spec = match domain {
        DomainArg::Disk => DomainSpec::UnitDisk { n_boundary: n },
        DomainArg::Square => DomainSpec::Square { n_per_side: n },
    };
    let mut mesh = make_initial_mesh(spec)?;
    for _ in 0..refine {
        mesh = mesh.refine_uniform().mesh;
    }
    std::fs::write(out, serde_json::to_string(&mesh.to_json())?)?;
    println!("{} elements, {} dofs", mesh.n_elements(), mesh.n_dofs());
    Ok(())
}
