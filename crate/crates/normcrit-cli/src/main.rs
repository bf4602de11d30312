use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use normcrit::profiles::ProfileCache;
use normcrit::solvers::{PathSpec, Side, SweepMode};
use normcrit_cli::config::{geometric_grid, Command, Limit, RunConfig};
use normcrit_cli::output::SUMMARY_HELP;
use normcrit_cli::run::{cache_admin, execute, exit_code, CacheAction, EXIT_USAGE};

/// Normalized solutions of a coupled Sobolev-critical Schrödinger system in R^4.
///
/// Writes result.json, summary.csv and profile_*.tsv into the output directory.
/// Exit status: 0 success, 1 usage error, 2 nonconvergence, 3 admissibility or
/// geometry refusal. Profiles are cached in $NORMCRIT_CACHE (default ./cache).
#[derive(Parser, Debug)]
#[command(name = "normcrit", version, after_long_help = SUMMARY_HELP)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum sweep workers.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    #[arg(long, global = true)]
    p: Option<f64>,
    #[arg(long, global = true)]
    mu1: Option<f64>,
    #[arg(long, global = true)]
    mu2: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    alpha1: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    alpha2: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Prescribed L2 norm of the first component.
    #[arg(long, global = true)]
    a1: Option<f64>,
    #[arg(long, global = true)]
    a2: Option<f64>,
    /// Relative tolerance on the constrained gradient.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Grid nodes; needs --r-max.
    #[arg(long, global = true, requires = "r_max")]
    n: Option<usize>,
    /// Grid radius; needs --n.
    #[arg(long, global = true, requires = "n")]
    r_max: Option<f64>,
    /// Smallest positive node of the geometric grid (default 1e-6 R_max).
    #[arg(long, global = true)]
    r_min: Option<f64>,
    /// Skip the Newton polish.
    #[arg(long, global = true)]
    no_newton: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SideArg {
    Plus,
    Minus,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Ground,
    Mp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LimitArg {
    Auto,
    SmallMass,
    LargeMass,
    P3Threshold,
    Bubble,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CacheArg {
    List,
    Clear,
    Warm,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Model constants: gamma_p, k1, k2, S, C_p and the geometry of the fiber maps.
    Constants,
    /// Single-component solution with mu1, alpha1 and a1.
    Scalar {
        #[arg(long, value_enum)]
        side: Option<SideArg>,
    },
    /// Local minimizer (ground state) for 2 < p < 3.
    Ground,
    /// Mountain-pass solution.
    Mp,
    /// Solves along a mass path a1 = a0 f^k, a2 = ratio a1, k = 0..=steps.
    Sweep {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        a0: Option<f64>,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        factor: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Same as --factor 0.5 --steps N.
        #[arg(long, conflicts_with_all = ["factor", "steps"])]
        halvings: Option<usize>,
        /// Start each point from the previous solution (runs sequentially).
        #[arg(long)]
        warm: bool,
    },
    /// Asymptotic analysis of a sweep written by `sweep`.
    Asym {
        /// Sweep JSON (default <out>/sweep.json).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        limit: Option<LimitArg>,
    },
    /// Multiplier sign diagnostic along the mountain-pass descent.
    Probe,
    /// Manages the profile cache.
    Cache {
        #[arg(value_enum)]
        action: CacheArg,
        /// Exponents to precompute with `warm`.
        #[arg(long = "p-list", value_delimiter = ',', default_values_t = [2.5, 3.0, 3.5])]
        p_list: Vec<f64>,
    },
}

fn build_config(cli: &Cli) -> normcrit::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let m = &cli.model;
    let prm = &mut cfg.params;
    for (slot, v) in [
        (&mut prm.p, m.p),
        (&mut prm.mu1, m.mu1),
        (&mut prm.mu2, m.mu2),
        (&mut prm.alpha1, m.alpha1),
        (&mut prm.alpha2, m.alpha2),
        (&mut prm.beta, m.beta),
        (&mut cfg.masses.0, m.a1),
        (&mut cfg.masses.1, m.a2),
        (&mut cfg.solver.tol, m.tol),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    if let Some(v) = m.max_iter {
        cfg.solver.max_iter = v;
    }
    if let Some(v) = m.seeds {
        cfg.solver.seeds = v;
    }
    if let (Some(n), Some(r)) = (m.n, m.r_max) {
        cfg.solver.grid = Some(geometric_grid(n, r, m.r_min));
    }
    if m.no_newton {
        cfg.solver.newton = false;
    }
    if let Some(s) = cli.seed {
        cfg.solver.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    cfg.command = Some(match &cli.command {
        Cmd::Constants => Command::Constants,
        Cmd::Scalar { side } => {
            if let Some(s) = side {
                cfg.side = match s {
                    SideArg::Plus => Side::Plus,
                    SideArg::Minus => Side::Minus,
                };
            }
            Command::Scalar
        }
        Cmd::Ground => Command::Ground,
        Cmd::Mp => Command::Mp,
        Cmd::Sweep { mode, a0, ratio, factor, steps, halvings, warm } => {
            if let Some(md) = mode {
                cfg.mode = match md {
                    ModeArg::Ground => SweepMode::Ground,
                    ModeArg::Mp => SweepMode::MountainPass,
                };
            }
            let touched = a0.is_some() || ratio.is_some() || factor.is_some() || steps.is_some() || halvings.is_some();
            if touched {
                let (d_a0, d_ratio, d_factor, d_steps) = match cfg.path {
                    PathSpec::Geometric { a0, ratio, factor, steps } => (a0, ratio, factor, steps),
                    PathSpec::Threshold { .. } => (2.0, 1.0, 0.5, 5),
                };
                cfg.path = PathSpec::Geometric {
                    a0: a0.unwrap_or(d_a0),
                    ratio: ratio.unwrap_or(d_ratio),
                    factor: if halvings.is_some() { 0.5 } else { factor.unwrap_or(d_factor) },
                    steps: halvings.or(*steps).unwrap_or(d_steps),
                };
            }
            cfg.warm |= warm;
            Command::Sweep
        }
        Cmd::Asym { input, limit } => {
            if input.is_some() {
                cfg.input = input.clone();
            }
            if let Some(l) = limit {
                cfg.limit = match l {
                    LimitArg::Auto => Limit::Auto,
                    LimitArg::SmallMass => Limit::SmallMass,
                    LimitArg::LargeMass => Limit::LargeMass,
                    LimitArg::P3Threshold => Limit::P3Threshold,
                    LimitArg::Bubble => Limit::Bubble,
                };
            }
            Command::Asym
        }
        Cmd::Probe => Command::Probe,
        Cmd::Cache { .. } => unreachable!("cache is handled before configuration"),
    });
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let cache_dir = ProfileCache::default_dir();
    let code = if let Cmd::Cache { action, p_list } = &cli.command {
        let action = match action {
            CacheArg::List => CacheAction::List,
            CacheArg::Clear => CacheAction::Clear,
            CacheArg::Warm => CacheAction::Warm,
        };
        cache_admin(cache_dir, action, p_list)
    } else {
        ProfileCache::install_global(ProfileCache::on_disk(cache_dir));
        build_config(&cli).and_then(|cfg| execute(&cfg))
    };
    match code {
        Ok(c) => ExitCode::from(c as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
