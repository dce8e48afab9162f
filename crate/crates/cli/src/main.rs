mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wavebranch_core::error::WaveError;

use config::{RunConfig, UsageError};

#[derive(Parser, Debug)]
#[command(name = "wavebranch", version, about = "Solitary water waves on a vorticity-carrying stream")]
struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Vorticity coefficients c0,c1,... of ω(p) = Σ c_k p^k.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    omega: Option<Vec<f64>>,

    /// Output directory (else the config, else $WAVEBRANCH_OUT, else
    /// ./wavebranch-out). For `pairs` this is the JSON file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// CSV table theta,d,R,F,S on stdout.
    Stream {
        #[arg(long)]
        theta_min: f64,
        #[arg(long)]
        theta_max: f64,
        #[arg(long, default_value_t = 50)]
        n: usize,
    },
    /// θ₀, θ_c, R_c, F(θ_c) and R₀ of the dispersion relation.
    Critical,
    /// Spectral edge ν₀ and Robin coefficient ρ₀ of the far-field stream.
    Spectrum1d {
        #[arg(long = "R")]
        r: f64,
        #[arg(long, default_value_t = 512)]
        grid_n: usize,
    },
    /// Solves one solitary wave; writes solution.txt and profile.csv.
    Solve {
        #[arg(long = "R")]
        r: f64,
        /// Amplitude of a seeded random perturbation of the initial guess.
        #[arg(long, default_value_t = 0.0)]
        perturb: f64,
    },
    /// Continues the branch from R-start; writes checkpoints and branch.csv.
    Continue {
        #[arg(long = "R-start")]
        r_start: f64,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        ds: Option<f64>,
        /// Skip eigenvalue computations.
        #[arg(long)]
        no_spectra: bool,
    },
    /// Lyapunov–Schmidt reduction across a crossing bracketed by two checkpoints.
    LsReduce {
        #[arg(long)]
        checkpoint_a: PathBuf,
        #[arg(long)]
        checkpoint_b: PathBuf,
    },
    /// Local bifurcation analysis of a finite-dimensional model family.
    ModelBifurcate {
        /// pitchfork, triple, cubic or vertical.
        #[arg(long)]
        case: String,
        #[arg(long, default_value_t = 0.3)]
        s_max: f64,
        #[arg(long, default_value_t = 0.5)]
        lambda_max: f64,
    },
    /// Same-R wave pairs on a computed branch.
    Pairs {
        #[arg(long)]
        branch: PathBuf,
        /// Secondary branch directory (pairs across the two branches).
        #[arg(long)]
        secondary: Option<PathBuf>,
        /// R levels per fold.
        #[arg(long, default_value_t = 5)]
        levels: usize,
    },
    /// Replays every checkpoint in a branch directory and re-checks invariants.
    Verify { dir: PathBuf },
}

fn effective_config(cli: &Cli) -> Result<RunConfig, UsageError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(w) = &cli.omega {
        cfg.omega = w.clone();
    }
    if let Some(o) = &cli.out {
        cfg.output = Some(o.clone());
    }
    if cfg.output.is_none() {
        cfg.output = Some(std::env::var_os("WAVEBRANCH_OUT").map(PathBuf::from).unwrap_or_else(|| "wavebranch-out".into()));
    }
    if let Command::Continue { steps, ds, no_spectra, .. } = &cli.command {
        if let Some(s) = steps {
            cfg.continuation.steps = *s;
        }
        if let Some(d) = ds {
            cfg.continuation.ds = *d;
        }
        if *no_spectra {
            cfg.continuation.spectra = false;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = effective_config(&cli)?;
    use commands as c;
    match cli.command {
        Command::Stream { theta_min, theta_max, n } => c::stream(&cfg, theta_min, theta_max, n),
        Command::Critical => c::critical(&cfg),
        Command::Spectrum1d { r, grid_n } => c::spectrum1d(&cfg, r, grid_n),
        Command::Solve { r, perturb } => c::solve(&cfg, r, perturb),
        Command::Continue { r_start, .. } => c::continue_branch(&cfg, r_start),
        Command::LsReduce { checkpoint_a, checkpoint_b } => c::ls_reduce(&cfg, &checkpoint_a, &checkpoint_b),
        Command::ModelBifurcate { case, s_max, lambda_max } => c::model_bifurcate(&case, s_max, lambda_max),
        Command::Pairs { branch, secondary, levels } => {
            c::pairs(&branch, secondary.as_deref(), levels, cli.out.as_deref(), cfg.solver.tol)
        }
        Command::Verify { dir } => c::verify(&cfg, &dir),
    }
}

/// Stable identifier of a numerical failure, one per error variant.
fn error_code(e: &WaveError) -> &'static str {
    match e {
        WaveError::Domain(_) => "domain",
        WaveError::Singularity { .. } => "singularity",
        WaveError::BelowCritical { .. } => "below-critical",
        WaveError::NoRoot { .. } => "no-root",
        WaveError::UnboundedSearch(_) => "unbounded-search",
        WaveError::SurfaceStagnation(_) => "surface-stagnation",
        WaveError::Numerical(_) => "numerical",
        WaveError::StagnationBreach { .. } => "stagnation-breach",
        WaveError::NonConvergence { .. } => "non-convergence",
        WaveError::Stalled { .. } => "stalled",
        WaveError::DegenerateTangent => "degenerate-tangent",
        WaveError::BranchStall { .. } => "branch-stall",
        WaveError::IllPosedProjector(_) => "ill-posed-projector",
        WaveError::OutsideChart { .. } => "outside-chart",
        WaveError::Resolution(_) => "resolution",
        WaveError::NoSecondaryBranch => "no-secondary-branch",
        WaveError::Precondition(_) => "precondition",
        WaveError::Singular(_) => "singular",
        WaveError::Format(_) => "format",
        WaveError::Io(_) => "io",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<UsageError>() {
                eprintln!("usage error: {u}");
                return ExitCode::from(2);
            }
            match e.chain().find_map(|c| c.downcast_ref::<WaveError>()) {
                Some(w) => eprintln!("error[{}]: {e:#}", error_code(w)),
                None => eprintln!("error[io]: {e:#}"),
            }
            ExitCode::from(1)
        }
    }
}
