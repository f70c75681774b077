use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ks_dirichlet::cli::{run_trace_diagram, simulate, verify, RunConfig};

#[derive(Parser)]
#[command(name = "ksdir", about = "Kuramoto-Sivashinsky equation on [-1, 1] with Dirichlet conditions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time-step from an initial condition and write spacetime.csv.
    Simulate(Common),
    /// Run the scripted bifurcation diagram.
    TraceDiagram(Common),
    /// Spectrum, Lyapunov-Schmidt and hidden-symmetry checks.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Viscosity: simulation value, diagram start, or spectrum check.
    #[arg(long)]
    nu: Option<f64>,
    /// Grid order above the fine-grid threshold.
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn config(&self) -> ks_dirichlet::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(h) = self.h {
            cfg.h = h;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> ks_dirichlet::Result<bool> {
    match cli.command {
        Command::Simulate(a) => {
            let mut cfg = a.config()?;
            if let Some(nu) = a.nu {
                cfg.nu = nu;
            }
            let out = simulate(&cfg, a.force)?;
            println!(
                "{}: {} snapshots up to t={}, final norm {:.6e}",
                out.path.display(),
                out.snapshots,
                out.final_time,
                out.final_norm
            );
            Ok(true)
        }
        Command::TraceDiagram(a) => {
            let mut cfg = a.config()?;
            if let Some(nu) = a.nu {
                cfg.nu_start = nu;
            }
            let d = run_trace_diagram(&cfg, a.force, &mut |m| eprintln!("{m}"))?;
            println!("{} branches, {} events, {} failures", d.branches.len(), d.records.len(), d.failures.len());
            for f in &d.failures {
                println!("failure: {f}");
            }
            Ok(d.failures.is_empty())
        }
        Command::Verify(a) => {
            let mut cfg = a.config()?;
            if let Some(nu) = a.nu {
                cfg.spectrum_nu = nu;
            }
            let r = verify(&cfg, a.force)?;
            let word = |ok: bool| if ok { "pass" } else { "FAIL" };
            println!("spectrum {}", word(r.spectrum.pass));
            println!("ls {}", word(r.ls.pass));
            println!("hidden symmetry {}", word(r.hidden_symmetry.pass));
            Ok(r.pass)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
