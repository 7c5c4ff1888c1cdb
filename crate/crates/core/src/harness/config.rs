//! Experiment configuration files.
//!
//! A config is a JSON object with a `kind` field naming the experiment, the
//! kind-specific fields, an optional `output_dir` and a list of `seeds`.
//! Relative paths are resolved against the directory holding the config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, XqlError};
use crate::gem::GemConfig;
use crate::mdp::{build_gridworld, Gridworld, GRID_5X5, SERPENTINE_MAZE};
use crate::regression::RegressionConfig;
use crate::xql::{Mode, XqlConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinLayout {
    Grid5x5,
    SerpentineMaze,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutSource {
    Builtin(BuiltinLayout),
    /// ASCII layout given in the config itself.
    Inline(String),
    /// ASCII maze file.
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub layout: LayoutSource,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub slip: f64,
    pub gamma: f64,
}

impl GridSpec {
    pub fn room() -> Self {
        Self {
            layout: LayoutSource::Builtin(BuiltinLayout::Grid5x5),
            step_reward: -1.0,
            goal_reward: 10.0,
            slip: 0.1,
            gamma: 0.9,
        }
    }

    pub fn maze() -> Self {
        Self {
            layout: LayoutSource::Builtin(BuiltinLayout::SerpentineMaze),
            step_reward: -1.0,
            goal_reward: 10.0,
            slip: 0.0,
            gamma: 0.99,
        }
    }

    pub fn build(&self) -> Result<Gridworld> {
        let text;
        let layout = match &self.layout {
            LayoutSource::Builtin(BuiltinLayout::Grid5x5) => GRID_5X5,
            LayoutSource::Builtin(BuiltinLayout::SerpentineMaze) => SERPENTINE_MAZE,
            LayoutSource::Inline(s) => s.as_str(),
            LayoutSource::Path(p) => {
                text = fs::read_to_string(p)?;
                text.as_str()
            }
        };
        build_gridworld(layout, self.step_reward, self.goal_reward, self.slip, self.gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum BehaviorSpec {
    Uniform,
    /// Greedy with respect to the hard-max oracle, uniform with probability
    /// `epsilon`.
    EpsilonOptimal { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DatasetSpec {
    Rollouts { behavior: BehaviorSpec, n: usize, episode_cap: usize },
    UniformCoverage { n: usize },
    File { path: PathBuf },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Rollouts { behavior: BehaviorSpec::Uniform, n: 10_000, episode_cap: crate::harness::DEFAULT_EPISODE_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GumbelFitSpec {
    /// CSV with a single column `x`; when absent, `n` samples are drawn from
    /// `Gumbel(loc, scale)`.
    pub input: Option<PathBuf>,
    pub loc: f64,
    pub scale: f64,
    pub n: usize,
    /// Temperature of the reported log-sum-exp.
    pub beta: f64,
}

impl Default for GumbelFitSpec {
    fn default() -> Self {
        Self { input: None, loc: 0.0, scale: 1.0, n: 10_000, beta: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GumbelRegressSpec {
    pub regression: RegressionConfig,
    /// One state per entry; targets are `Normal(mean, target_std)`.
    pub target_means: Vec<f64>,
    pub target_std: f64,
    pub samples_per_state: usize,
}

impl Default for GumbelRegressSpec {
    fn default() -> Self {
        Self { regression: RegressionConfig::default(), target_means: vec![0.0], target_std: 1.0, samples_per_state: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MazeSpec {
    pub grid: GridSpec,
    pub n_transitions: usize,
    pub xql: XqlConfig,
}

impl Default for MazeSpec {
    fn default() -> Self {
        Self {
            grid: GridSpec::maze(),
            n_transitions: 20_000,
            xql: XqlConfig {
                beta: 0.1,
                gumbel_lr: 1.0,
                lr: 0.5,
                v_updates: 1,
                total_steps: 100_000,
                tol: 1e-9,
                ..XqlConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XqlOfflineSpec {
    pub grid: GridSpec,
    pub dataset: DatasetSpec,
    pub xql: XqlConfig,
}

impl Default for XqlOfflineSpec {
    fn default() -> Self {
        Self { grid: GridSpec::room(), dataset: DatasetSpec::default(), xql: XqlConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XqlOnlineSpec {
    pub grid: GridSpec,
    pub xql: XqlConfig,
}

impl Default for XqlOnlineSpec {
    fn default() -> Self {
        Self { grid: GridSpec::room(), xql: XqlConfig { mode: Mode::Online, ..XqlConfig::default() } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GemSpec {
    pub grid: GridSpec,
    pub gem: GemConfig,
}

impl Default for GemSpec {
    fn default() -> Self {
        Self { grid: GridSpec::room(), gem: GemConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagSpec {
    /// Number of random `(π, μ)` pairs.
    pub pairs: usize,
    pub n_actions: usize,
}

impl Default for DiagSpec {
    fn default() -> Self {
        Self { pairs: 100, n_actions: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PacSpec {
    pub x_max: f64,
    pub beta: f64,
    pub delta: f64,
    pub n: usize,
    /// Empirical partition function; enables the log-partition bound.
    pub z_hat: Option<f64>,
}

impl Default for PacSpec {
    fn default() -> Self {
        Self { x_max: 1.0, beta: 1.0, delta: 0.05, n: 10, z_hat: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasSpec {
    pub q_max: f64,
    pub beta: f64,
}

impl Default for BiasSpec {
    fn default() -> Self {
        Self { q_max: 1.0, beta: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    GumbelFit(GumbelFitSpec),
    GumbelRegress(GumbelRegressSpec),
    MazeValueIter(MazeSpec),
    XqlOffline(XqlOfflineSpec),
    XqlOnline(XqlOnlineSpec),
    GemSimulate(GemSpec),
    DiagKlDual(DiagSpec),
    DiagCqlChi2(DiagSpec),
    BoundsPac(PacSpec),
    BoundsBias(BiasSpec),
}

impl Experiment {
    pub const KINDS: [&'static str; 10] = [
        "gumbel-fit",
        "gumbel-regress",
        "maze-value-iter",
        "xql-offline",
        "xql-online",
        "gem-simulate",
        "diag-kl-dual",
        "diag-cql-chi2",
        "bounds-pac",
        "bounds-bias",
    ];

    /// Default experiment of the given kind.
    pub fn default_for(kind: &str) -> Result<Self> {
        Ok(match kind {
            "gumbel-fit" => Experiment::GumbelFit(Default::default()),
            "gumbel-regress" => Experiment::GumbelRegress(Default::default()),
            "maze-value-iter" => Experiment::MazeValueIter(Default::default()),
            "xql-offline" => Experiment::XqlOffline(Default::default()),
            "xql-online" => Experiment::XqlOnline(Default::default()),
            "gem-simulate" => Experiment::GemSimulate(Default::default()),
            "diag-kl-dual" => Experiment::DiagKlDual(Default::default()),
            "diag-cql-chi2" => Experiment::DiagCqlChi2(Default::default()),
            "bounds-pac" => Experiment::BoundsPac(Default::default()),
            "bounds-bias" => Experiment::BoundsBias(Default::default()),
            other => return Err(XqlError::Config(format!("unknown experiment kind `{other}`"))),
        })
    }

    pub fn kind(&self) -> &'static str {
        let i = match self {
            Experiment::GumbelFit(_) => 0,
            Experiment::GumbelRegress(_) => 1,
            Experiment::MazeValueIter(_) => 2,
            Experiment::XqlOffline(_) => 3,
            Experiment::XqlOnline(_) => 4,
            Experiment::GemSimulate(_) => 5,
            Experiment::DiagKlDual(_) => 6,
            Experiment::DiagCqlChi2(_) => 7,
            Experiment::BoundsPac(_) => 8,
            Experiment::BoundsBias(_) => 9,
        };
        Self::KINDS[i]
    }

    /// Override the temperature; errors for kinds without one.
    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        match self {
            Experiment::GumbelFit(s) => s.beta = beta,
            Experiment::GumbelRegress(s) => s.regression.beta = beta,
            Experiment::MazeValueIter(s) => s.xql.beta = beta,
            Experiment::XqlOffline(s) => s.xql.beta = beta,
            Experiment::XqlOnline(s) => s.xql.beta = beta,
            Experiment::BoundsPac(s) => s.beta = beta,
            Experiment::BoundsBias(s) => s.beta = beta,
            other => return Err(XqlError::Config(format!("`{}` has no temperature", other.kind()))),
        }
        Ok(())
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        let mut out = Vec::new();
        let grid = match self {
            Experiment::MazeValueIter(s) => Some(&mut s.grid),
            Experiment::XqlOffline(s) => {
                if let DatasetSpec::File { path } = &mut s.dataset {
                    out.push(path);
                }
                Some(&mut s.grid)
            }
            Experiment::XqlOnline(s) => Some(&mut s.grid),
            Experiment::GemSimulate(s) => Some(&mut s.grid),
            Experiment::GumbelFit(s) => {
                out.extend(s.input.as_mut());
                None
            }
            _ => None,
        };
        if let Some(GridSpec { layout: LayoutSource::Path(p), .. }) = grid {
            out.push(p);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self { experiment, output_dir: None, seeds: default_seeds() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| XqlError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Read a config file, resolve relative paths against its directory and
    /// check that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| XqlError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in self.experiment.paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(dir) = self.output_dir.as_mut().filter(|d| d.is_relative()) {
            *dir = base.join(&*dir);
        }
    }

    pub fn validate(&mut self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(XqlError::Config("seeds must not be empty".into()));
        }
        for p in self.experiment.paths_mut() {
            if !p.exists() {
                return Err(XqlError::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }
}
