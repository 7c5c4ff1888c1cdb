use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xql_core::harness::config::Experiment;
use xql_core::harness::{run_experiment, ExperimentConfig};
use xql_core::XqlError;

/// Tabular Extreme Q-Learning experiments.
#[derive(Debug, Parser)]
#[command(name = "xql", version)]
struct Cli {
    #[command(subcommand)]
    group: Group,
}

#[derive(Debug, Subcommand)]
enum Group {
    /// Gumbel distribution fitting and Gumbel regression.
    Gumbel {
        #[command(subcommand)]
        cmd: GumbelCmd,
    },
    /// Value iteration on the serpentine maze.
    Maze {
        #[command(subcommand)]
        cmd: MazeCmd,
    },
    /// Offline and online X-QL training.
    Xql {
        #[command(subcommand)]
        cmd: XqlCmd,
    },
    /// Noise propagation through max backups.
    Gem {
        #[command(subcommand)]
        cmd: GemCmd,
    },
    /// Divergence identities.
    Diag {
        #[command(subcommand)]
        cmd: DiagCmd,
    },
    /// Concentration and bias bounds.
    Bounds {
        #[command(subcommand)]
        cmd: BoundsCmd,
    },
}

#[derive(Debug, Subcommand)]
enum GumbelCmd {
    Fit(Common),
    Regress(Common),
}

#[derive(Debug, Subcommand)]
enum MazeCmd {
    ValueIter(Common),
}

#[derive(Debug, Subcommand)]
enum XqlCmd {
    Offline(Common),
    Online(Common),
}

#[derive(Debug, Subcommand)]
enum GemCmd {
    Simulate(Common),
}

#[derive(Debug, Subcommand)]
enum DiagCmd {
    KlDual(Common),
    CqlChi2(Common),
}

#[derive(Debug, Subcommand)]
enum BoundsCmd {
    Pac {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        xmax: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        /// Sample size.
        #[arg(long)]
        n: Option<usize>,
        /// Empirical partition function for the log-partition bound.
        #[arg(long)]
        z_hat: Option<f64>,
    },
    Bias {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        qmax: Option<f64>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    /// Run a single seed instead of the config's list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<XqlError> for Failure {
    fn from(e: XqlError) -> Self {
        if e.is_numerical_failure() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
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
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<String, Failure> {
    let (kind, common, bounds) = match cli.group {
        Group::Gumbel { cmd: GumbelCmd::Fit(c) } => ("gumbel-fit", c, None),
        Group::Gumbel { cmd: GumbelCmd::Regress(c) } => ("gumbel-regress", c, None),
        Group::Maze { cmd: MazeCmd::ValueIter(c) } => ("maze-value-iter", c, None),
        Group::Xql { cmd: XqlCmd::Offline(c) } => ("xql-offline", c, None),
        Group::Xql { cmd: XqlCmd::Online(c) } => ("xql-online", c, None),
        Group::Gem { cmd: GemCmd::Simulate(c) } => ("gem-simulate", c, None),
        Group::Diag { cmd: DiagCmd::KlDual(c) } => ("diag-kl-dual", c, None),
        Group::Diag { cmd: DiagCmd::CqlChi2(c) } => ("diag-cql-chi2", c, None),
        Group::Bounds { cmd } => match cmd {
            BoundsCmd::Pac { common, xmax, delta, n, z_hat } => {
                ("bounds-pac", common, Some(BoundFlags { xmax, delta, n, z_hat, qmax: None }))
            }
            BoundsCmd::Bias { common, qmax } => {
                ("bounds-bias", common, Some(BoundFlags { qmax, ..BoundFlags::default() }))
            }
        },
    };

    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(Experiment::default_for(kind)?),
    };
    if cfg.experiment.kind() != kind {
        return Err(Failure::Usage(format!(
            "config describes a `{}` experiment, not `{kind}`",
            cfg.experiment.kind()
        )));
    }
    if let Some(beta) = common.beta {
        cfg.experiment.set_beta(beta)?;
    }
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(flags) = bounds {
        flags.apply(&mut cfg.experiment);
    }
    let out = common
        .out
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os("XQL_OUT_DIR").map(|root| PathBuf::from(root).join(kind)))
        .unwrap_or_else(|| PathBuf::from("xql-runs").join(kind));
    Ok(run_experiment(&cfg, &out)?.summary)
}

#[derive(Debug, Default)]
struct BoundFlags {
    xmax: Option<f64>,
    delta: Option<f64>,
    n: Option<usize>,
    z_hat: Option<f64>,
    qmax: Option<f64>,
}

impl BoundFlags {
    fn apply(self, experiment: &mut Experiment) {
        match experiment {
            Experiment::BoundsPac(spec) => {
                spec.x_max = self.xmax.unwrap_or(spec.x_max);
                spec.delta = self.delta.unwrap_or(spec.delta);
                spec.n = self.n.unwrap_or(spec.n);
                spec.z_hat = self.z_hat.or(spec.z_hat);
            }
            Experiment::BoundsBias(spec) => spec.q_max = self.qmax.unwrap_or(spec.q_max),
            _ => {}
        }
    }
}
