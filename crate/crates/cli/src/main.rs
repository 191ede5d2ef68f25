use clap::{Args, Parser, Subcommand};
use critepi_cli::config::{CouplingSpec, LawSpec, Reference, VariantSpec};
use critepi_cli::{run_experiment, CliError, ExperimentConfig, Kind};
use std::path::PathBuf;
use std::process::ExitCode;

/// Simulate critical spatial epidemics and their branching envelopes.
#[derive(Parser)]
#[command(name = "critepi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct Model {
    /// Village size N.
    #[arg(long)]
    n: Option<u32>,
    #[arg(long, value_enum)]
    variant: Option<VariantSpec>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Initial profile, e.g. `point(0, 1)`, `tent(2, 256)`, `threshold(0.667)`, `file(init.csv)`.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    max_gens: Option<usize>,
    #[arg(long, value_enum)]
    law: Option<LawSpec>,
    /// Write per-generation output as well.
    #[arg(long)]
    trajectories: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Branching random walk envelope.
    Envelope {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: Model,
    },
    /// Spatial SIS/SIR epidemic.
    Epidemic {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: Model,
    },
    /// Coloured coupling of epidemic and envelope.
    Coupling {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: Model,
        #[arg(long, value_enum)]
        coupling: Option<CouplingSpec>,
    },
    /// Log likelihood ratios along envelope paths.
    Likelihood {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: Model,
    },
    /// Mean-field (single village) epidemics.
    Meanfield {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: Model,
        /// Initially infected.
        #[arg(long)]
        j0: Option<u64>,
        #[arg(long, value_enum)]
        reference: Option<Reference>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Exact and Monte Carlo moments of site counts.
    Moments {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long)]
        m_max: Option<u32>,
        /// Sites, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        xs: Option<Vec<i64>>,
    },
    /// Probability that the scaled envelope leaves (-a, a).
    Extent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        a: Option<f64>,
        #[arg(long)]
        c: Option<f64>,
        /// Point masses `x:m`, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_parser = parse_mass)]
        masses: Option<Vec<(f64, f64)>>,
        /// Also write the profile on this many grid points.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Epidemic on an explicit random graph.
    Graphs {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: Model,
        /// Number of sites.
        #[arg(long)]
        length: Option<i64>,
        /// Edge probability (default 1/(3N)).
        #[arg(long)]
        p: Option<f64>,
    },
    /// Attrition table over N and α.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: Model,
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<u32>>,
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[arg(long)]
        horizon_factor: Option<f64>,
        #[arg(long, value_enum)]
        coupling: Option<CouplingSpec>,
    },
}

fn parse_mass(s: &str) -> Result<(f64, f64), String> {
    let (x, m) = s.split_once(':').ok_or_else(|| format!("expected x:m, got '{s}'"))?;
    let x = x.trim().parse().map_err(|_| format!("bad position '{x}'"))?;
    let m = m.trim().parse().map_err(|_| format!("bad mass '{m}'"))?;
    Ok((x, m))
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn base(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    set(&mut cfg.seed, common.seed);
    set(&mut cfg.replicates, common.reps);
    Ok(cfg)
}

fn apply_model(cfg: &mut ExperimentConfig, m: Model) {
    set(&mut cfg.n, m.n);
    set(&mut cfg.variant, m.variant);
    if m.alpha.is_some() {
        cfg.alpha = m.alpha;
    }
    set(&mut cfg.init, m.init);
    if m.max_gens.is_some() {
        cfg.max_gens = m.max_gens;
    }
    set(&mut cfg.law, m.law);
    cfg.trajectories |= m.trajectories;
}

fn build(command: Command) -> Result<(Kind, ExperimentConfig, Common), CliError> {
    Ok(match command {
        Command::Envelope { common, model } => {
            let mut cfg = base(&common)?;
            apply_model(&mut cfg, model);
            (Kind::Envelope, cfg, common)
        }
        Command::Epidemic { common, model } => {
            let mut cfg = base(&common)?;
            apply_model(&mut cfg, model);
            (Kind::Epidemic, cfg, common)
        }
        Command::Coupling { common, model, coupling } => {
            let mut cfg = base(&common)?;
            apply_model(&mut cfg, model);
            set(&mut cfg.coupling, coupling);
            (Kind::Coupling, cfg, common)
        }
        Command::Likelihood { common, model } => {
            let mut cfg = base(&common)?;
            apply_model(&mut cfg, model);
            (Kind::Likelihood, cfg, common)
        }
        Command::Meanfield { common, model, j0, reference, dt, horizon } => {
            let mut cfg = base(&common)?;
            apply_model(&mut cfg, model);
            if j0.is_some() {
                cfg.j0 = j0;
            }
            set(&mut cfg.reference, reference);
            set(&mut cfg.dt, dt);
            set(&mut cfg.horizon, horizon);
            (Kind::Meanfield, cfg, common)
        }
        Command::Moments { common, model, n_max, m_max, xs } => {
            let mut cfg = base(&common)?;
            apply_model(&mut cfg, model);
            set(&mut cfg.n_max, n_max);
            set(&mut cfg.m_max, m_max);
            set(&mut cfg.xs, xs);
            (Kind::Moments, cfg, common)
        }
        Command::Extent { common, a, c, masses, grid } => {
            let mut cfg = base(&common)?;
            set(&mut cfg.a, a);
            set(&mut cfg.c, c);
            set(&mut cfg.masses, masses);
            set(&mut cfg.grid, grid);
            (Kind::Extent, cfg, common)
        }
        Command::Graphs { common, model, length, p } => {
            let mut cfg = base(&common)?;
            apply_model(&mut cfg, model);
            set(&mut cfg.length, length);
            if p.is_some() {
                cfg.p = p;
            }
            (Kind::Graphs, cfg, common)
        }
        Command::Sweep { common, model, ns, alphas, horizon_factor, coupling } => {
            let mut cfg = base(&common)?;
            apply_model(&mut cfg, model);
            set(&mut cfg.ns, ns);
            set(&mut cfg.alphas, alphas);
            set(&mut cfg.horizon_factor, horizon_factor);
            set(&mut cfg.coupling, coupling);
            (Kind::ThresholdSweep, cfg, common)
        }
    })
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let (kind, mut cfg, common) = build(cli.command)?;
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    cfg.out = Some(common.out.clone());
    let report = run_experiment(&cfg, kind, &common.out)?;
    let results = &report.summary["results"];
    println!("{}", serde_json::to_string_pretty(results).expect("json"));
    if report.failures > 0 {
        eprintln!("critepi: {} replicates failed, see errors.csv", report.failures);
        return Ok(3);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("critepi: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
