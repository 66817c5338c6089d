//! MLMC and MPML estimators: per-level sample statistics, the effective
//! precision schedule, the adaptive sampling loop, and replicate
//! experiments.
//!
//! Determinism contract: every sample draw is addressed by
//! `(master seed, replicate, level, sample index)` through the
//! counter-based stream, samples are merged in sample-index order, and
//! replicate results are merged in replicate order — so results are
//! bitwise identical for any worker count.

use rayon::prelude::*;
use thiserror::Error;

use crate::cost::CostReceipt;
use crate::ir::{quad_for_level, PrecisionPolicy};
use crate::pde::{coupled_sample, Problem, SampleError, SolverSpec};
use crate::rng::normal_quantile;

/// Bias/variance/cost decay rates of the level hierarchy, plus the
/// split rates of the computational-error model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecayRates {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for DecayRates {
    /// The finite element model problem: alpha = alpha1 = 2, beta =
    /// beta1 = 4, alpha2 = 1, beta2 = 2, and gamma = 2 for an
    /// optimal-complexity solver.
    fn default() -> DecayRates {
        DecayRates {
            alpha: 2.0,
            beta: 4.0,
            gamma: 2.0,
            alpha1: 2.0,
            alpha2: 1.0,
            beta1: 4.0,
            beta2: 2.0,
        }
    }
}

/// Effective precision per level for a hierarchy with finest level
/// `levels`: `eps_l = (k_p h_l^beta1)^(1/beta2)` below the finest level,
/// and on the finest level additionally capped by
/// `(k_p h_L^alpha1)^(1/alpha2)`.
pub fn precision_schedule(
    levels: usize,
    h0: f64,
    m: usize,
    k_p: f64,
    rates: &DecayRates,
) -> Vec<f64> {
    assert!(levels >= 1, "schedule needs at least two levels");
    assert!(k_p > 0.0 && k_p < 1.0, "k_p must lie in (0, 1)");
    let mut eps = Vec::with_capacity(levels + 1);
    for l in 0..=levels {
        let h = h0 / (m as f64).powi(l as i32);
        let var_term = (k_p * h.powf(rates.beta1)).powf(1.0 / rates.beta2);
        if l < levels {
            eps.push(var_term);
        } else {
            let bias_term = (k_p * h.powf(rates.alpha1)).powf(1.0 / rates.alpha2);
            eps.push(var_term.min(bias_term));
        }
    }
    eps
}

/// Optimal per-level sample counts for the target tolerance:
/// `N_l = ceil( sqrt(V_l / C_l) * (2 / TOL^2) * sum_k sqrt(V_k C_k) )`.
///
/// Callers never decrease an existing count; only additional samples are
/// drawn.
pub fn optimal_samples(variances: &[f64], costs: &[f64], tol: f64) -> Vec<u64> {
    assert_eq!(variances.len(), costs.len());
    assert!(tol > 0.0);
    assert!(costs.iter().all(|&c| c > 0.0), "costs must be positive");
    assert!(variances.iter().all(|&v| v >= 0.0));
    let budget: f64 = variances
        .iter()
        .zip(costs)
        .map(|(&v, &c)| (v * c).sqrt())
        .sum();
    variances
        .iter()
        .zip(costs)
        .map(|(&v, &c)| ((v / c).sqrt() * 2.0 / (tol * tol) * budget).ceil() as u64)
        .collect()
}

/// Master seed plus replicate index; every stream address derives from
/// these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SeedSpec {
    pub master: u64,
    pub replicate: u32,
}

/// Replicate index reserved for reference computations so they never
/// collide with experiment replicates.
pub const REFERENCE_REPLICATE: u32 = 0xFFFF;

/// Worker pool wrapper: `new(0)` uses the global rayon pool.
pub struct Workers {
    pool: Option<rayon::ThreadPool>,
}

impl Workers {
    pub fn new(threads: usize) -> Workers {
        let pool = (threads > 0).then(|| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .expect("failed to build worker pool")
        });
        Workers { pool }
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }
}

impl Default for Workers {
    fn default() -> Workers {
        Workers { pool: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mlmc,
    Mpml,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mlmc => "mlmc",
            Method::Mpml => "mpml",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Minres,
    CholeskyIr,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Minres => "minres",
            SolverKind::CholeskyIr => "cholesky_ir",
        }
    }
}

/// Which ledger column estimates the per-sample cost `C_l` in the
/// sample-count formula (and in cost reports).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMetric {
    Flops,
    MemBits,
    /// Degrees of freedom of the coupled sample: the optimal-complexity
    /// cost model with gamma = 2 in two dimensions.
    Dof,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RunConfig {
    pub tol_sq: f64,
    pub method: Method,
    pub solver: SolverKind,
    pub policy: PrecisionPolicy,
    /// Safety fraction of the precision schedule (MPML mode).
    pub k_p: f64,
    /// Fixed MINRES tolerance for the standard MLMC estimator.
    pub fixed_tol: f64,
    pub rates: DecayRates,
    /// The `r` constant of the bias-extension test.
    pub bias_r: f64,
    pub n_init: u64,
    pub l_max: usize,
    pub cost_metric: CostMetric,
}

impl RunConfig {
    pub fn new(tol_sq: f64, method: Method, solver: SolverKind) -> RunConfig {
        RunConfig {
            tol_sq,
            method,
            solver,
            policy: PrecisionPolicy::Default,
            k_p: 0.05,
            fixed_tol: 1e-6,
            rates: DecayRates::default(),
            bias_r: 1.0,
            n_init: 100,
            l_max: 6,
            cost_metric: match solver {
                SolverKind::Minres => CostMetric::Flops,
                SolverKind::CholeskyIr => CostMetric::MemBits,
            },
        }
    }

    fn solver_spec(&self, level: usize, eps_l: f64) -> SolverSpec {
        match (self.method, self.solver) {
            (Method::Mlmc, SolverKind::Minres) => SolverSpec::Minres {
                tol: self.fixed_tol,
                iter_factor: crate::pde::MINRES_EXPERIMENT_ITER_FACTOR,
            },
            (Method::Mpml, SolverKind::Minres) => SolverSpec::Minres {
                tol: eps_l,
                iter_factor: crate::pde::MINRES_EXPERIMENT_ITER_FACTOR,
            },
            (Method::Mlmc, SolverKind::CholeskyIr) => SolverSpec::DirectDouble,
            (Method::Mpml, SolverKind::CholeskyIr) => SolverSpec::CholeskyIr {
                quad: quad_for_level(level, self.policy),
                eps: eps_l,
            },
        }
    }

    fn schedule(&self, levels: usize, h0: f64, m: usize) -> Vec<f64> {
        match self.method {
            Method::Mpml => precision_schedule(levels, h0, m, self.k_p, &self.rates),
            Method::Mlmc => vec![self.fixed_tol; levels + 1],
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LevelStats {
    pub level: usize,
    pub n: u64,
    pub mean: f64,
    pub var: f64,
    /// Effective precision used on this level (the fixed solver
    /// tolerance for standard MLMC with MINRES).
    pub eps: f64,
    pub cost: CostReceipt,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RunResult {
    pub method: Method,
    pub solver: SolverKind,
    pub tol_sq: f64,
    pub estimate: f64,
    pub levels: Vec<LevelStats>,
    pub total_cost: CostReceipt,
}

impl RunResult {
    pub fn finest_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn n_per_level(&self) -> Vec<u64> {
        self.levels.iter().map(|l| l.n).collect()
    }

    pub fn metric_total(&self, metric: CostMetric, problem: &Problem) -> f64 {
        match metric {
            CostMetric::Flops => self.total_cost.flops as f64,
            CostMetric::MemBits => self.total_cost.mem_bits as f64,
            CostMetric::Dof => self
                .levels
                .iter()
                .map(|l| l.n as f64 * dof_cost(problem, l.level))
                .sum(),
        }
    }

    /// Per-level totals of the chosen metric, for cost-decay studies.
    pub fn level_metric_totals(&self, metric: CostMetric, problem: &Problem) -> Vec<f64> {
        self.levels
            .iter()
            .map(|l| match metric {
                CostMetric::Flops => l.cost.flops as f64,
                CostMetric::MemBits => l.cost.mem_bits as f64,
                CostMetric::Dof => l.n as f64 * dof_cost(problem, l.level),
            })
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("finest level would exceed L_max = {l_max} before meeting the bias test")]
    LmaxExceeded { l_max: usize, partial: Box<RunResult> },
    #[error(transparent)]
    Sample(#[from] SampleError),
}

fn dof_cost(problem: &Problem, level: usize) -> f64 {
    let fine = problem.n_unknowns(level) as f64;
    let coarse = if level > 0 {
        problem.n_unknowns(level - 1) as f64
    } else {
        0.0
    };
    fine + coarse
}

#[derive(Debug, Clone, Default)]
struct LevelAcc {
    drawn: u64,
    target: u64,
    sum: f64,
    sumsq: f64,
    cost: CostReceipt,
}

impl LevelAcc {
    fn with_target(target: u64) -> LevelAcc {
        LevelAcc { target, ..LevelAcc::default() }
    }

    fn mean(&self) -> f64 {
        if self.drawn == 0 {
            0.0
        } else {
            self.sum / self.drawn as f64
        }
    }

    /// Sample variance with the 1/N normalisation.
    fn var(&self) -> f64 {
        if self.drawn == 0 {
            return 0.0;
        }
        let n = self.drawn as f64;
        let m = self.sum / n;
        (self.sumsq / n - m * m).max(0.0)
    }

    fn cost_per_sample(&self, metric: CostMetric, problem: &Problem, level: usize) -> f64 {
        match metric {
            CostMetric::Dof => dof_cost(problem, level),
            CostMetric::Flops => self.cost.flops as f64 / self.drawn.max(1) as f64,
            CostMetric::MemBits => self.cost.mem_bits as f64 / self.drawn.max(1) as f64,
        }
    }
}

/// Draw samples `drawn..target` of the level, in parallel, merged in
/// sample-index order.
fn draw_level(
    problem: &Problem,
    spec: &SolverSpec,
    level: usize,
    acc: &mut LevelAcc,
    seed: SeedSpec,
) -> Result<(), SampleError> {
    if acc.target <= acc.drawn {
        return Ok(());
    }
    let samples: Result<Vec<_>, SampleError> = (acc.drawn..acc.target)
        .into_par_iter()
        .map(|k| {
            let omega = problem.draw_omega(seed, level, k);
            coupled_sample(problem, level, &omega, spec)
        })
        .collect();
    for s in samples? {
        acc.sum += s.y;
        acc.sumsq += s.y * s.y;
        acc.cost.merge(&s.cost);
        acc.drawn += 1;
    }
    Ok(())
}

fn build_result(
    cfg: &RunConfig,
    levels: &[LevelAcc],
    eps: &[f64],
) -> RunResult {
    let mut total = CostReceipt::default();
    let stats: Vec<LevelStats> = levels
        .iter()
        .enumerate()
        .map(|(l, acc)| {
            total.merge(&acc.cost);
            LevelStats {
                level: l,
                n: acc.drawn,
                mean: acc.mean(),
                var: acc.var(),
                eps: eps[l],
                cost: acc.cost,
            }
        })
        .collect();
    RunResult {
        method: cfg.method,
        solver: cfg.solver,
        tol_sq: cfg.tol_sq,
        estimate: stats.iter().map(|s| s.mean).sum(),
        levels: stats,
        total_cost: total,
    }
}

fn run_adaptive_inner(
    problem: &Problem,
    cfg: &RunConfig,
    seed: SeedSpec,
) -> Result<RunResult, EngineError> {
    let tol = cfg.tol_sq.sqrt();
    let h0 = 1.0 / problem.h0_inv as f64;
    let bias_bound =
        (cfg.bias_r * (problem.m as f64).powf(cfg.rates.alpha) - 1.0) / 2f64.sqrt() * tol;

    let mut levels = vec![
        LevelAcc::with_target(cfg.n_init),
        LevelAcc::with_target(cfg.n_init),
    ];
    loop {
        let finest = levels.len() - 1;
        let eps = cfg.schedule(finest, h0, problem.m);
        for (l, acc) in levels.iter_mut().enumerate() {
            let spec = cfg.solver_spec(l, eps[l]);
            draw_level(problem, &spec, l, acc, seed)?;
        }
        let variances: Vec<f64> = levels.iter().map(|a| a.var()).collect();
        let costs: Vec<f64> = levels
            .iter()
            .enumerate()
            .map(|(l, a)| a.cost_per_sample(cfg.cost_metric, problem, l))
            .collect();
        for (acc, req) in levels.iter_mut().zip(optimal_samples(&variances, &costs, tol)) {
            acc.target = acc.target.max(req);
        }

        let bias_ok = levels[finest].mean().abs() <= bias_bound;
        let sampling_err: f64 = levels
            .iter()
            .map(|a| a.var() / a.drawn.max(1) as f64)
            .sum();
        let var_ok = sampling_err <= cfg.tol_sq / 2.0;
        let need_more = levels.iter().any(|a| a.target > a.drawn);
        if bias_ok && var_ok && !need_more {
            return Ok(build_result(cfg, &levels, &eps));
        }
        if !bias_ok {
            if finest == cfg.l_max {
                return Err(EngineError::LmaxExceeded {
                    l_max: cfg.l_max,
                    partial: Box::new(build_result(cfg, &levels, &eps)),
                });
            }
            levels.push(LevelAcc::with_target(cfg.n_init));
        }
    }
}

/// The adaptive algorithm: starts at one coupled level, redistributes
/// samples by the variance/cost formula, extends the hierarchy while the
/// bias test fails, and terminates once both the bias and the sampling
/// error meet the tolerance split.
pub fn run_adaptive(
    problem: &Problem,
    cfg: &RunConfig,
    seed: SeedSpec,
    workers: &Workers,
) -> Result<RunResult, EngineError> {
    workers.install(|| run_adaptive_inner(problem, cfg, seed))
}

fn run_fixed_inner(
    problem: &Problem,
    cfg: &RunConfig,
    n_per_level: &[u64],
    seed: SeedSpec,
) -> Result<RunResult, EngineError> {
    assert!(n_per_level.len() >= 2, "need at least two levels");
    let finest = n_per_level.len() - 1;
    let h0 = 1.0 / problem.h0_inv as f64;
    let eps = cfg.schedule(finest, h0, problem.m);
    let mut levels: Vec<LevelAcc> = n_per_level
        .iter()
        .map(|&n| LevelAcc::with_target(n.max(1)))
        .collect();
    for (l, acc) in levels.iter_mut().enumerate() {
        let spec = cfg.solver_spec(l, eps[l]);
        draw_level(problem, &spec, l, acc, seed)?;
    }
    Ok(build_result(cfg, &levels, &eps))
}

/// Run with forced per-level sample counts (no adaptivity); used for the
/// same-samples same-seeds comparisons between the two estimators.
pub fn run_fixed(
    problem: &Problem,
    cfg: &RunConfig,
    n_per_level: &[u64],
    seed: SeedSpec,
    workers: &Workers,
) -> Result<RunResult, EngineError> {
    workers.install(|| run_fixed_inner(problem, cfg, n_per_level, seed))
}

/// Independent adaptive replicates `0..replicates`, merged in replicate
/// order.
pub fn replicate_runs(
    problem: &Problem,
    cfg: &RunConfig,
    replicates: u32,
    master: u64,
    workers: &Workers,
) -> Result<Vec<RunResult>, EngineError> {
    workers.install(|| {
        (0..replicates)
            .into_par_iter()
            .map(|r| run_adaptive_inner(problem, cfg, SeedSpec { master, replicate: r }))
            .collect()
    })
}

/// Forced-sample replicates; both estimators can be run with identical
/// seeds and counts by calling this twice with the same arguments.
pub fn replicate_runs_forced(
    problem: &Problem,
    cfg: &RunConfig,
    n_per_level: &[u64],
    replicates: u32,
    master: u64,
    workers: &Workers,
) -> Result<Vec<RunResult>, EngineError> {
    workers.install(|| {
        (0..replicates)
            .into_par_iter()
            .map(|r| run_fixed_inner(problem, cfg, n_per_level, SeedSpec { master, replicate: r }))
            .collect()
    })
}

/// High-accuracy reference estimate of the quantity of interest:
/// adaptive standard MLMC with the double-precision direct solver.
pub fn reference_value(
    problem: &Problem,
    tol_sq: f64,
    master: u64,
    workers: &Workers,
) -> Result<(f64, RunResult), EngineError> {
    let cfg = RunConfig::new(tol_sq, Method::Mlmc, SolverKind::CholeskyIr);
    let seed = SeedSpec { master, replicate: REFERENCE_REPLICATE };
    let run = run_adaptive(problem, &cfg, seed, workers)?;
    Ok((run.estimate, run))
}

/// Mean squared error of a replicate set against a reference value, with
/// a normal-approximation 95% confidence interval.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct MseSummary {
    pub replicates: u32,
    pub mse: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean total cost in the chosen metric.
    pub mean_cost: f64,
}

pub fn summarize_mse(
    runs: &[RunResult],
    reference: f64,
    metric: CostMetric,
    problem: &Problem,
) -> MseSummary {
    assert!(runs.len() >= 2, "need at least two replicates");
    let r = runs.len() as f64;
    let errs: Vec<f64> = runs.iter().map(|x| (x.estimate - reference).powi(2)).collect();
    let mse = errs.iter().sum::<f64>() / r;
    let var = errs.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (r - 1.0);
    let half = normal_quantile(0.975) * (var / r).sqrt();
    let mean_cost = runs
        .iter()
        .map(|x| x.metric_total(metric, problem))
        .sum::<f64>()
        / r;
    MseSummary {
        replicates: runs.len() as u32,
        mse,
        ci_low: (mse - half).max(0.0),
        ci_high: mse + half,
        mean_cost,
    }
}

/// Average per-level sample counts across replicates (runs that never
/// reached a level contribute zero), with 95% confidence half-widths.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LevelSampleAverage {
    pub level: usize,
    pub mean_n: f64,
    pub ci_half: f64,
    /// Number of replicates whose hierarchy included this level.
    pub reached: u32,
}

pub fn avg_level_samples(runs: &[RunResult]) -> Vec<LevelSampleAverage> {
    let max_l = runs.iter().map(|r| r.finest_level()).max().unwrap_or(0);
    let r = runs.len() as f64;
    (0..=max_l)
        .map(|l| {
            let ns: Vec<f64> = runs
                .iter()
                .map(|run| run.levels.get(l).map_or(0.0, |s| s.n as f64))
                .collect();
            let mean = ns.iter().sum::<f64>() / r;
            let var = ns.iter().map(|n| (n - mean).powi(2)).sum::<f64>() / (r - 1.0).max(1.0);
            LevelSampleAverage {
                level: l,
                mean_n: mean,
                ci_half: normal_quantile(0.975) * (var / r).sqrt(),
                reached: runs.iter().filter(|run| run.levels.len() > l).count() as u32,
            }
        })
        .collect()
}

pub fn intervals_overlap(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

/// One row of an MSE experiment table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MseRow {
    pub tol_sq: f64,
    pub method: Method,
    pub solver: SolverKind,
    pub summary: MseSummary,
    pub avg_n: Vec<f64>,
}

/// Replicate sets of both methods at one tolerance.
#[derive(Debug, Clone)]
pub struct TolReplicates {
    pub tol_sq: f64,
    pub mlmc: Vec<RunResult>,
    pub mpml: Vec<RunResult>,
    /// Per-level counts used when the same-samples protocol was active.
    pub forced_n: Option<Vec<u64>>,
}

#[derive(Debug, Clone)]
pub struct MseExperimentOutput {
    pub rows: Vec<MseRow>,
    pub replicates: Vec<TolReplicates>,
}

/// Per-level sample counts for the same-samples protocol: the average
/// hierarchy of a set of adaptive runs, truncated where levels stop
/// being reached.
pub fn forced_counts(probe: &[RunResult]) -> Vec<u64> {
    let mut n: Vec<u64> = avg_level_samples(probe)
        .iter()
        .map(|a| a.mean_n.ceil() as u64)
        .take_while(|&x| x >= 1)
        .collect();
    if n.len() < 2 {
        n.resize(2, 1);
    }
    n
}

/// Run replicated MLMC and MPML estimators at every tolerance and
/// summarize their mean squared error against the reference value.
///
/// With `forced` set, per-level sample counts are first determined by
/// adaptive standard-MLMC runs and then both estimators are re-run with
/// those identical counts and identical seeds (the direct-solver
/// comparison protocol).
#[allow(clippy::too_many_arguments)]
pub fn mse_experiment(
    problem: &Problem,
    base: &RunConfig,
    tol_sq_list: &[f64],
    replicates: u32,
    forced: bool,
    reference: f64,
    master: u64,
    workers: &Workers,
) -> Result<MseExperimentOutput, EngineError> {
    let mut rows = Vec::new();
    let mut sets = Vec::new();
    for &tol_sq in tol_sq_list {
        let cfg_of = |method: Method| {
            let mut c = base.clone();
            c.tol_sq = tol_sq;
            c.method = method;
            c
        };
        let (mlmc, mpml, forced_n) = if forced {
            let probe =
                replicate_runs(problem, &cfg_of(Method::Mlmc), replicates, master, workers)?;
            let n = forced_counts(&probe);
            let a = replicate_runs_forced(
                problem,
                &cfg_of(Method::Mlmc),
                &n,
                replicates,
                master,
                workers,
            )?;
            let b = replicate_runs_forced(
                problem,
                &cfg_of(Method::Mpml),
                &n,
                replicates,
                master,
                workers,
            )?;
            (a, b, Some(n))
        } else {
            let a = replicate_runs(problem, &cfg_of(Method::Mlmc), replicates, master, workers)?;
            let b = replicate_runs(problem, &cfg_of(Method::Mpml), replicates, master, workers)?;
            (a, b, None)
        };
        for (method, set) in [(Method::Mlmc, &mlmc), (Method::Mpml, &mpml)] {
            rows.push(MseRow {
                tol_sq,
                method,
                solver: base.solver,
                summary: summarize_mse(set, reference, base.cost_metric, problem),
                avg_n: avg_level_samples(set).iter().map(|a| a.mean_n).collect(),
            });
        }
        sets.push(TolReplicates { tol_sq, mlmc, mpml, forced_n });
    }
    Ok(MseExperimentOutput { rows, replicates: sets })
}

/// Moments of `Y_l` (and of the fine-level value) over `n` samples drawn
/// from the replicate's streams; used by the decay studies.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Moments {
    pub level: usize,
    pub n: u64,
    pub mean_y: f64,
    pub var_y: f64,
    pub mean_q: f64,
    pub var_q: f64,
    pub cost: CostReceipt,
}

pub fn sample_moments(
    problem: &Problem,
    level: usize,
    solver: &SolverSpec,
    n: u64,
    seed: SeedSpec,
    workers: &Workers,
) -> Result<Moments, SampleError> {
    assert!(n >= 2);
    let samples: Result<Vec<_>, SampleError> = workers.install(|| {
        (0..n)
            .into_par_iter()
            .map(|k| {
                let omega = problem.draw_omega(seed, level, k);
                coupled_sample(problem, level, &omega, solver)
            })
            .collect()
    });
    let samples = samples?;
    let nf = n as f64;
    let mut cost = CostReceipt::default();
    let (mut sy, mut syy, mut sq, mut sqq) = (0.0, 0.0, 0.0, 0.0);
    for s in &samples {
        sy += s.y;
        syy += s.y * s.y;
        sq += s.q_fine;
        sqq += s.q_fine * s.q_fine;
        cost.merge(&s.cost);
    }
    Ok(Moments {
        level,
        n,
        mean_y: sy / nf,
        var_y: (syy / nf - (sy / nf).powi(2)).max(0.0),
        mean_q: sq / nf,
        var_q: (sqq / nf - (sq / nf).powi(2)).max(0.0),
        cost,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
