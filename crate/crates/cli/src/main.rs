use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use surface_ns::study::{self, RunConfig};

#[derive(Parser)]
#[command(name = "surface-ns", version, about = "Surface Navier-Stokes finite element studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convergence study: one CSV row per refinement level.
    Converge(Options),
    /// Penalty and Lagrange formulations on the sphere, side by side.
    Compare(Options),
    /// Geometric errors of the discrete surfaces.
    Geomcheck(Options),
    /// Discrete inf-sup constants and a condition estimate per level.
    Infsup(Options),
    /// VTK export of the solution at `--step` on the coarsest level.
    ExportVtk(Options),
}

#[derive(Args)]
struct Options {
    /// Plain-text `key = value` file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for assembly (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    quad_degree: Option<usize>,
    /// sphere | varying
    #[arg(long)]
    surface: Option<String>,
    /// manufactured | zero
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    k_u: Option<usize>,
    #[arg(long)]
    k_pr: Option<usize>,
    #[arg(long)]
    k_lambda: Option<usize>,
    #[arg(long)]
    k_g: Option<usize>,
    #[arg(long)]
    base_refine: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    dt0: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    tau_alpha: Option<f64>,
    /// lagrange | penalty
    #[arg(long)]
    formulation: Option<String>,
    /// discrete | improved (penalty normal)
    #[arg(long)]
    normal: Option<String>,
    /// plain | skew
    #[arg(long)]
    inertia: Option<String>,
    /// interpolation | ritz
    #[arg(long)]
    initial_condition: Option<String>,
    /// full | tangential
    #[arg(long)]
    forcing_mode: Option<String>,
    #[arg(long)]
    zeroth_order: Option<bool>,
    #[arg(long)]
    step: Option<usize>,
    #[arg(long, visible_alias = "out")]
    out_path: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Options {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        fn push<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<T>) {
            if let Some(v) = v {
                out.push((key, v.to_string()));
            }
        }
        let mut out = Vec::new();
        push(&mut out, "quad_degree", &self.quad_degree);
        push(&mut out, "surface", &self.surface);
        push(&mut out, "problem", &self.problem);
        push(&mut out, "k_u", &self.k_u);
        push(&mut out, "k_pr", &self.k_pr);
        push(&mut out, "k_lambda", &self.k_lambda);
        push(&mut out, "k_g", &self.k_g);
        push(&mut out, "base_refine", &self.base_refine);
        push(&mut out, "levels", &self.levels);
        push(&mut out, "dt0", &self.dt0);
        push(&mut out, "t_end", &self.t_end);
        push(&mut out, "mu", &self.mu);
        push(&mut out, "tau_alpha", &self.tau_alpha);
        push(&mut out, "formulation", &self.formulation);
        push(&mut out, "normal", &self.normal);
        push(&mut out, "inertia", &self.inertia);
        push(&mut out, "initial_condition", &self.initial_condition);
        push(&mut out, "forcing_mode", &self.forcing_mode);
        push(&mut out, "zeroth_order", &self.zeroth_order);
        push(&mut out, "step", &self.step);
        push(&mut out, "out_path", &self.out_path.as_ref().map(|p| p.display().to_string()));
        push(&mut out, "seed", &self.seed);
        out
    }

    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        for (key, value) in self.overrides() {
            cfg.set(key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_output(cfg: &RunConfig, text: &str) -> Result<()> {
    std::fs::write(&cfg.out_path, text)
        .with_context(|| format!("writing {}", cfg.out_path.display()))?;
    eprintln!("wrote {}", cfg.out_path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (Command::Converge(opts)
    | Command::Compare(opts)
    | Command::Geomcheck(opts)
    | Command::Infsup(opts)
    | Command::ExportVtk(opts)) = &cli.command;
    if let Some(threads) = opts.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring thread pool")?;
    }
    let cfg = opts.run_config()?;
    match cli.command {
        Command::Converge(_) => {
            let results = study::converge(&cfg)?;
            let rows: Vec<_> = results.iter().map(|r| r.row).collect();
            write_output(&cfg, &study::convergence_csv(&rows))
        }
        Command::Compare(_) => {
            let results = study::compare(&cfg)?;
            let tables: Vec<_> = results
                .iter()
                .map(|(name, levels)| (*name, levels.iter().map(|r| r.row).collect::<Vec<_>>()))
                .collect();
            write_output(&cfg, &study::compare_csv(&tables))
        }
        Command::Geomcheck(_) => write_output(&cfg, &study::geometry_csv(&study::geomcheck(&cfg)?)),
        Command::Infsup(_) => write_output(&cfg, &study::infsup_csv(&study::infsup(&cfg)?)),
        Command::ExportVtk(_) => {
            study::export_vtk(&cfg, &cfg.out_path)?;
            eprintln!("wrote {}", cfg.out_path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
