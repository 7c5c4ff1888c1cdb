//! Experiment runner behind the command line.
//!
//! Each run writes its artifacts into one directory (one sub-directory per
//! seed when several are given) together with `manifest.json`. Outputs are a
//! pure function of the config: no timestamps, no host information.

use std::fs;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::{BehaviorSpec, DatasetSpec, Experiment, ExperimentConfig, GridSpec};
use super::io::{load_dataset, save_dataset, write_csv, write_json, write_trace_csv};
use super::{empirical_behavior_policy, generate_dataset, generate_uniform_coverage, TransitionDataset};
use crate::error::{Result, XqlError};
use crate::gem::noisy_q_iteration;
use crate::gumbel::{
    fit_gaussian_mle, fit_gumbel_mle, gumbel_sample, log_likelihood, lse_operator, skewness, GumbelParams, Model,
    SampleBatch,
};
use crate::mdp::{argmax, backup_from_values, solve_hard_mdp, PolicyTable, TabularMdp, DEFAULT_TOL};
use crate::policy::{evaluate_policy, kl_divergence, policy_kl};
use crate::regression::{bias_bound, gumbel_regress_closed_form, gumbel_regress_sgd, pac_bound_log_partition, pac_bound_partition, LinearModel};
use crate::rng;
use crate::xql::{
    chi_square_divergence, d_cql, kl_dual_maximizer, kl_dual_objective, value_iteration_with_loss, xql_offline,
    xql_online, Mode, ValueLoss,
};

pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// One-line human-readable summary.
    pub summary: String,
    /// Written files, relative to the output directory.
    pub artifacts: Vec<PathBuf>,
}

/// Hex SHA-256 of the compact JSON encoding of `cfg`.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// `x` to five significant digits, trailing zeros removed.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&exp) {
        return format!("{x:.4e}");
    }
    let s = format!("{:.*}", (4 - exp).max(0) as usize, x);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Run every seed of `cfg` into `out_dir` and write the manifest.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput> {
    fs::create_dir_all(out_dir)?;
    let mut artifacts = Vec::new();
    let mut summaries = Vec::new();
    for &seed in &cfg.seeds {
        let sub = if cfg.seeds.len() == 1 { PathBuf::new() } else { PathBuf::from(format!("seed-{seed}")) };
        let dir = out_dir.join(&sub);
        fs::create_dir_all(&dir)?;
        let mut run = SeedRun { dir: &dir, files: Vec::new() };
        let (summary, results) = run.execute(&cfg.experiment, seed)?;
        run.json("tables.json", &json!({ "config": cfg, "seed": seed, "results": results }))?;
        artifacts.extend(run.files.into_iter().map(|f| sub.join(f)));
        summaries.push(summary);
    }
    artifacts.push(PathBuf::from("manifest.json"));
    let manifest = json!({
        "kind": cfg.experiment.kind(),
        "config_sha256": config_hash(cfg)?,
        "config": cfg,
        "seeds": cfg.seeds,
        "versions": { "xql-core": env!("CARGO_PKG_VERSION"), "manifest_format": MANIFEST_FORMAT },
        "artifacts": artifacts,
    });
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    let summary = if summaries.len() == 1 {
        summaries.remove(0)
    } else {
        format!("{} [seed {}; {} seeds]", summaries[0], cfg.seeds[0], cfg.seeds.len())
    };
    Ok(RunOutput { summary, artifacts })
}

struct SeedRun<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl SeedRun<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(PathBuf::from(name));
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        write_json(&p, value)
    }

    fn csv<S: Serialize>(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = S>) -> Result<()> {
        let p = self.path(name);
        write_csv(&p, header, rows)
    }

    fn execute(&mut self, experiment: &Experiment, seed: u64) -> Result<(String, Value)> {
        match experiment {
            Experiment::GumbelFit(spec) => {
                let batch = match &spec.input {
                    Some(path) => read_samples(path)?,
                    None => gumbel_sample(&GumbelParams::new(spec.loc, spec.scale)?, spec.n, seed)?,
                };
                self.csv("samples.csv", &["x"], batch.values().iter().map(|x| (x,)))?;
                let gumbel = fit_gumbel_mle(&batch)?;
                let gaussian = fit_gaussian_mle(&batch)?;
                let ll_gumbel = log_likelihood(&batch, &Model::Gumbel(gumbel))?;
                let ll_gaussian = log_likelihood(&batch, &Model::Gaussian(gaussian))?;
                let lse = lse_operator(&batch, spec.beta)?;
                let summary = format!(
                    "gumbel fit: loc={} scale={} loglik gumbel={} gaussian={} lse={}",
                    fmt_sig(gumbel.loc),
                    fmt_sig(gumbel.scale),
                    fmt_sig(ll_gumbel),
                    fmt_sig(ll_gaussian),
                    fmt_sig(lse)
                );
                let results = json!({
                    "n": batch.len(),
                    "gumbel": gumbel,
                    "gaussian": gaussian,
                    "loglik_gumbel": ll_gumbel,
                    "loglik_gaussian": ll_gaussian,
                    "skewness": skewness(&batch),
                    "lse": lse,
                });
                Ok((summary, results))
            }
            Experiment::GumbelRegress(spec) => {
                let mut rcfg = spec.regression.clone();
                rcfg.seed = rng::derive_seed(seed, 1);
                let noise = Normal::new(0.0, spec.target_std)
                    .map_err(|e| XqlError::Argument(format!("target_std: {e}")))?;
                let mut r = rng::seeded(seed);
                let n_states = spec.target_means.len();
                if n_states == 0 {
                    return Err(XqlError::Config("target_means must not be empty".into()));
                }
                let mut data = Vec::with_capacity(n_states * spec.samples_per_state);
                for (s, &m) in spec.target_means.iter().enumerate() {
                    data.extend((0..spec.samples_per_state).map(|_| (s, m + noise.sample(&mut r))));
                }
                let model = gumbel_regress_sgd(&data, LinearModel::one_hot(n_states), &rcfg)?;
                let mut rows = Vec::new();
                for s in 0..n_states {
                    let ys: Vec<f64> = data.iter().filter(|d| d.0 == s).map(|d| d.1).collect();
                    let exact = gumbel_regress_closed_form(&SampleBatch::new(ys)?, rcfg.beta)?;
                    let fit = model.predict(s);
                    rows.push((s, exact, fit, (fit - exact).abs()));
                }
                let worst = rows.iter().map(|r| r.3).fold(0.0, f64::max);
                self.csv("predictions.csv", &["state", "closed_form", "sgd", "abs_error"], &rows)?;
                let summary = format!("gumbel regress: {n_states} states, max |sgd - closed form| = {}", fmt_sig(worst));
                Ok((summary, json!({ "weights": model.weights, "max_abs_error": worst })))
            }
            Experiment::MazeValueIter(spec) => {
                let grid = spec.grid.build()?;
                let mdp = &grid.mdp;
                let dataset = generate_uniform_coverage(mdp, spec.n_transitions, rng::derive_seed(seed, 1))?;
                let mut xcfg = spec.xql.clone();
                xcfg.seed = seed;
                let gamma = mdp.gamma();
                let gumbel = value_iteration_with_loss(&dataset, LinearModel::one_hot(mdp.n_states()), gamma, &xcfg, ValueLoss::Gumbel)?;
                let squared = value_iteration_with_loss(&dataset, LinearModel::one_hot(mdp.n_states()), gamma, &xcfg, ValueLoss::Squared)?;
                let oracle = solve_hard_mdp(mdp, DEFAULT_TOL)?;
                let q_gumbel = backup_from_values(mdp, &gumbel)?;
                let corridor: Vec<usize> = (0..mdp.n_states()).filter(|&s| !mdp.is_terminal(s)).collect();
                let mut matches = 0;
                let mut rows = Vec::new();
                for s in 0..mdp.n_states() {
                    let ok = optimal_action(&oracle.q, s, argmax(q_gumbel.row(s)));
                    if !mdp.is_terminal(s) && ok {
                        matches += 1;
                    }
                    let (row, col) = grid.cells[s];
                    rows.push((s, row, col, oracle.v.get(s), gumbel.get(s), squared.get(s), u8::from(ok)));
                }
                self.csv("values.csv", &["state", "row", "col", "oracle", "gumbel", "squared", "greedy_match"], &rows)?;
                let match_rate = matches as f64 / corridor.len() as f64;
                let gap_gumbel = (gumbel.get(grid.start) - oracle.v.get(grid.start)).abs();
                let gap_squared = (squared.get(grid.start) - oracle.v.get(grid.start)).abs();
                let summary = format!(
                    "maze value-iter: greedy_match={} gap_gumbel={} gap_squared={}",
                    fmt_sig(match_rate),
                    fmt_sig(gap_gumbel),
                    fmt_sig(gap_squared)
                );
                let results = json!({
                    "greedy_match_rate": match_rate,
                    "start_gap_gumbel": gap_gumbel,
                    "start_gap_squared": gap_squared,
                    "v_oracle": oracle.v.values(),
                    "v_gumbel": gumbel.values(),
                    "v_squared": squared.values(),
                });
                Ok((summary, results))
            }
            Experiment::XqlOffline(spec) => {
                let grid = spec.grid.build()?;
                let mdp = &grid.mdp;
                let dataset = build_dataset(&spec.dataset, &spec.grid, mdp, rng::derive_seed(seed, 1))?;
                let p = self.path("dataset.csv");
                save_dataset(&dataset, &p)?;
                self.files.push(PathBuf::from("dataset.csv.meta.json"));
                let mut xcfg = spec.xql.clone();
                xcfg.seed = seed;
                xcfg.mode = Mode::Offline;
                let out = xql_offline(&dataset, mdp, &xcfg)?;
                let p = self.path("trace.csv");
                write_trace_csv(&p, &out.trace)?;
                let start = mdp.start_distribution();
                let ret = evaluate_policy(mdp, &out.pi, start)?;
                let behavior_ret = evaluate_policy(mdp, &out.mu, start)?;
                let kl = policy_kl(&out.pi, &out.mu, &dataset.state_marginal(mdp.n_states()))?;
                let gap = out.trace.last().map_or(f64::NAN, |r| r.oracle_gap);
                let summary = format!(
                    "xql offline: return={} behavior={} oracle_gap={} kl={}",
                    fmt_sig(ret),
                    fmt_sig(behavior_ret),
                    fmt_sig(gap),
                    fmt_sig(kl)
                );
                let results = json!({
                    "return": ret,
                    "behavior_return": behavior_ret,
                    "dataset_kl": kl,
                    "q": out.q.rows(),
                    "v": out.v.values(),
                    "pi": out.pi.rows(),
                    "mu": out.mu.rows(),
                });
                Ok((summary, results))
            }
            Experiment::XqlOnline(spec) => {
                let grid = spec.grid.build()?;
                let mdp = &grid.mdp;
                let mut xcfg = spec.xql.clone();
                xcfg.seed = seed;
                xcfg.mode = Mode::Online;
                let out = xql_online(mdp, &xcfg)?;
                let p = self.path("trace.csv");
                write_trace_csv(&p, &out.trace)?;
                let ret = evaluate_policy(mdp, &out.pi, mdp.start_distribution())?;
                let gap = out.trace.last().map_or(f64::NAN, |r| r.oracle_gap);
                let summary = format!("xql online: return={} oracle_gap={}", fmt_sig(ret), fmt_sig(gap));
                Ok((summary, json!({ "return": ret, "q": out.q.rows(), "v": out.v.values(), "pi": out.pi.rows() })))
            }
            Experiment::GemSimulate(spec) => {
                let grid = spec.grid.build()?;
                let mut gcfg = spec.gem.clone();
                gcfg.seed = seed;
                let trace = noisy_q_iteration(&grid.mdp, &gcfg)?;
                let rows: Vec<_> = trace
                    .iterations
                    .iter()
                    .map(|it| {
                        let f = &it.fit;
                        (
                            it.iteration,
                            f.gumbel.map(|g| g.loc),
                            f.gumbel.map(|g| g.scale),
                            f.gaussian.map(|g| g.mean),
                            f.gaussian.map(|g| g.std),
                            f.gumbel_loglik,
                            f.gaussian_loglik,
                            f.skewness,
                        )
                    })
                    .collect();
                self.csv(
                    "iterations.csv",
                    &["iteration", "gumbel_loc", "gumbel_scale", "gaussian_mean", "gaussian_std", "gumbel_loglik", "gaussian_loglik", "skewness"],
                    &rows,
                )?;
                self.csv(
                    "residuals.csv",
                    &["iteration", "residual", "target_error"],
                    trace.iterations.iter().flat_map(|it| {
                        it.residuals.iter().zip(&it.target_errors).map(move |(r, e)| (it.iteration, r, e))
                    }),
                )?;
                let pooled = trace.pooled_fit()?;
                let summary = format!(
                    "gem simulate: pooled loglik gumbel={} gaussian={} skewness={}",
                    pooled.gumbel_loglik.map_or("n/a".into(), fmt_sig),
                    pooled.gaussian_loglik.map_or("n/a".into(), fmt_sig),
                    fmt_sig(pooled.skewness)
                );
                Ok((summary, json!({ "pooled": pooled, "q_final": trace.final_q().rows() })))
            }
            Experiment::DiagKlDual(spec) => {
                let mut r = rng::seeded(seed);
                let mut rows = Vec::new();
                for i in 0..spec.pairs {
                    let (pi, mu) = (random_distribution(&mut r, spec.n_actions), random_distribution(&mut r, spec.n_actions));
                    let x = kl_dual_maximizer(&pi, &mu)?;
                    let kl = kl_divergence(&pi, &mu)?;
                    let dual = kl_dual_objective(&x, &pi, &mu)?;
                    let err = x.iter().zip(pi.iter().zip(&mu)).map(|(x, (p, m))| (x + (p / m).ln()).abs()).fold(0.0, f64::max);
                    rows.push((i, kl, dual, dual - kl, err));
                }
                self.csv("pairs.csv", &["pair", "kl", "dual_at_max", "offset", "maximizer_error"], &rows)?;
                let lo = rows.iter().map(|r| r.3).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r.3).fold(f64::NEG_INFINITY, f64::max);
                let err = rows.iter().map(|r| r.4).fold(0.0, f64::max);
                let summary = format!("diag kl-dual: offset in [{}, {}], max maximizer error {}", fmt_sig(lo), fmt_sig(hi), fmt_sig(err));
                Ok((summary, json!({ "offset_min": lo, "offset_max": hi, "max_maximizer_error": err })))
            }
            Experiment::DiagCqlChi2(spec) => {
                let mut r = rng::seeded(seed);
                let mut rows = Vec::new();
                for i in 0..spec.pairs {
                    let (pi, mu) = (random_distribution(&mut r, spec.n_actions), random_distribution(&mut r, spec.n_actions));
                    let (chi2, cql) = (chi_square_divergence(&pi, &mu)?, d_cql(&pi, &mu)?);
                    rows.push((i, chi2, cql, (chi2 - cql).abs()));
                }
                self.csv("pairs.csv", &["pair", "chi2", "d_cql", "abs_diff"], &rows)?;
                let worst = rows.iter().map(|r| r.3).fold(0.0, f64::max);
                let summary = format!("diag cql-chi2: max |chi2 - d_cql| = {} over {} pairs", fmt_sig(worst), spec.pairs);
                Ok((summary, json!({ "max_abs_diff": worst })))
            }
            Experiment::BoundsPac(spec) => {
                let eps = pac_bound_partition(spec.x_max, spec.beta, spec.delta, spec.n)?;
                let log_eps = spec
                    .z_hat
                    .map(|z| pac_bound_log_partition(spec.x_max, spec.beta, spec.delta, spec.n, z))
                    .transpose()?;
                let mut summary = format!("bounds pac: partition {}", fmt_sig(eps));
                if let Some(l) = log_eps {
                    summary += &format!(", log-partition {}", fmt_sig(l));
                }
                Ok((summary, json!({ "partition": eps, "log_partition": log_eps })))
            }
            Experiment::BoundsBias(spec) => {
                let b = bias_bound(spec.q_max, spec.beta)?;
                Ok((format!("bounds bias: {}", fmt_sig(b)), json!({ "bias_bound": b })))
            }
        }
    }
}

fn optimal_action(q: &crate::mdp::QTable, s: usize, a: usize) -> bool {
    let best = q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    q.get(s, a) >= best - 1e-9 * best.abs().max(1.0)
}

fn random_distribution<R: rand::Rng + ?Sized>(r: &mut R, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| r.random::<f64>() + 1e-3).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

fn read_samples(path: &Path) -> Result<SampleBatch> {
    let mut reader = csv::Reader::from_path(path)?;
    if reader.headers()?.iter().ne(["x"]) {
        return Err(XqlError::Parse { line: 1, column: None, message: "expected header `x`".into() });
    }
    let mut xs = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let x = record
            .get(0)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| XqlError::Parse { line, column: Some(1), message: "not a number".into() })?;
        xs.push(x);
    }
    SampleBatch::new(xs)
}

fn build_dataset(spec: &DatasetSpec, grid: &GridSpec, mdp: &TabularMdp, seed: u64) -> Result<TransitionDataset> {
    let ds = match spec {
        DatasetSpec::UniformCoverage { n } => generate_uniform_coverage(mdp, *n, seed)?,
        DatasetSpec::File { path } => load_dataset(path)?,
        DatasetSpec::Rollouts { behavior, n, episode_cap } => {
            let policy = match behavior {
                BehaviorSpec::Uniform => PolicyTable::uniform(mdp.n_states(), mdp.n_actions()),
                BehaviorSpec::EpsilonOptimal { epsilon } => epsilon_optimal(mdp, *epsilon)?,
            };
            generate_dataset(mdp, &policy, *n, seed, *episode_cap)?
        }
    };
    ds.validate(mdp.n_states(), mdp.n_actions())
        .map_err(|e| XqlError::Config(format!("dataset does not fit the {:?} grid: {e}", grid.layout)))?;
    Ok(ds)
}

fn epsilon_optimal(mdp: &TabularMdp, epsilon: f64) -> Result<PolicyTable> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(XqlError::Argument(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    let q = solve_hard_mdp(mdp, DEFAULT_TOL)?.q;
    let na = mdp.n_actions();
    let probs = (0..mdp.n_states())
        .flat_map(|s| {
            let best = argmax(q.row(s));
            (0..na).map(move |a| epsilon / na as f64 + if a == best { 1.0 - epsilon } else { 0.0 })
        })
        .collect();
    PolicyTable::new(mdp.n_states(), na, probs)
}

/// Dataset-weighted `KL(π ‖ μ̂)` of an offline run, exposed for callers that
/// want the conservatism diagnostic without the runner.
pub fn dataset_kl(pi: &PolicyTable, dataset: &TransitionDataset) -> Result<f64> {
    let mu = empirical_behavior_policy(dataset, pi.n_states(), pi.n_actions(), 0.0)?;
    policy_kl(pi, &mu, &dataset.state_marginal(pi.n_states()))
}
