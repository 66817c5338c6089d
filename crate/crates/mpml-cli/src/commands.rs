//! The experiment subcommands.

use std::path::PathBuf;

use mpml::cost::CostReceipt;
use mpml::engine::{
    self, avg_level_samples, precision_schedule, Method, RunConfig, SeedSpec, Workers,
};
use mpml::ir::quad_for_level;
use mpml::pde::{assemble, Problem, SolverSpec};
use mpml::report;
use mpml::rng::normal_quantile;

use crate::config::ExperimentConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    LmaxExceeded(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::LmaxExceeded(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Solver(m)
            | CliError::LmaxExceeded(m)
            | CliError::Io(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Io(e.to_string())
    }
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub workers: Workers,
}

impl Context {
    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        std::fs::write(&path, contents)?;
        Ok(path)
    }

    fn run_config(&self, tol_sq: f64, method: Method) -> RunConfig {
        let c = &self.cfg;
        let mut rc = RunConfig::new(tol_sq, method, c.solver);
        rc.policy = c.policy;
        rc.k_p = c.k_p;
        rc.fixed_tol = c.fixed_tol;
        rc.rates = c.rates;
        rc.bias_r = c.bias_r;
        rc.n_init = c.n_init;
        rc.l_max = c.l_max;
        rc.cost_metric = c.cost_metric();
        rc
    }

    fn handle_engine(&self, e: engine::EngineError) -> CliError {
        match e {
            engine::EngineError::LmaxExceeded { l_max, partial } => {
                let flushed = self
                    .write("partial_run.json", &report::run_result_json(&partial))
                    .map(|p| format!(" (partial results flushed to {})", p.display()))
                    .unwrap_or_default();
                CliError::LmaxExceeded(format!(
                    "finest level would exceed l_max = {l_max}{flushed}"
                ))
            }
            engine::EngineError::Sample(s) => CliError::Solver(s.to_string()),
        }
    }
}

/// Print (and save) the effective-precision schedule for hierarchies of
/// depth 1 through `schedule_levels`.
pub fn cmd_schedule(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.cfg;
    let h0 = 1.0 / c.h0_inv as f64;
    let table: Vec<(usize, Vec<f64>)> = (1..=c.schedule_levels)
        .map(|levels| (levels, precision_schedule(levels, h0, c.m, c.k_p, &c.rates)))
        .collect();
    let csv = report::schedule_csv(&table);
    print!("{csv}");
    ctx.write("schedule.csv", &csv)?;
    Ok(())
}

/// Variance and bias of the coupled estimators against the solver
/// accuracy, per level.
pub fn cmd_decay(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.cfg;
    if c.decay_levels.is_empty() {
        return Err(CliError::Config("decay_levels must not be empty".into()));
    }
    if c.decay_eps.is_empty() || c.decay_eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(CliError::Config("decay_eps must contain values in (0, 1)".into()));
    }
    let problem = c.problem();
    let reference = load_or_compute_reference(ctx, &problem)?;
    let mut rows = Vec::new();
    for &level in &c.decay_levels {
        for &eps in &c.decay_eps {
            let m = engine::sample_moments(
                &problem,
                level,
                &SolverSpec::Minres { tol: eps, iter_factor: mpml::pde::MINRES_EXPERIMENT_ITER_FACTOR },
                c.decay_samples,
                SeedSpec { master: c.master_seed, replicate: 0 },
                &ctx.workers,
            )
            .map_err(|e| CliError::Solver(e.to_string()))?;
            let bias = (m.mean_q - reference).abs();
            let ci = normal_quantile(0.975) * (m.var_q / m.n as f64).sqrt();
            rows.push((m, eps, bias, ci));
        }
    }
    let csv = report::decay_csv(&rows);
    print!("{csv}");
    ctx.write("decay.csv", &csv)?;
    Ok(())
}

/// The full experiment: replicated MLMC and MPML runs at every
/// tolerance, MSE against the reference, cost gains, sample counts.
pub fn cmd_run(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.cfg;
    let problem = c.problem();
    let reference = load_or_compute_reference(ctx, &problem)?;
    let metric = c.cost_metric();

    let experiment = engine::mse_experiment(
        &problem,
        &ctx.run_config(c.tol_sq_list[0], Method::Mlmc),
        &c.tol_sq_list,
        c.replicates,
        c.use_forced_samples(),
        reference,
        c.master_seed,
        &ctx.workers,
    )
    .map_err(|e| ctx.handle_engine(e))?;
    let mse_rows = experiment.rows;
    let all = experiment.replicates;

    let metric_name = match metric {
        engine::CostMetric::Flops => "flops",
        engine::CostMetric::MemBits => "mem_bits",
        engine::CostMetric::Dof => "dof",
    };
    let mut gain_rows = Vec::new();
    for runs in &all {
        let mean_cost = |set: &[engine::RunResult]| {
            set.iter().map(|r| r.metric_total(metric, &problem)).sum::<f64>() / set.len() as f64
        };
        let (ml_cost, mp_cost) = (mean_cost(&runs.mlmc), mean_cost(&runs.mpml));
        println!(
            "tol_sq={:>8.1e}  cost gain ({metric_name}) = {:.3}",
            runs.tol_sq,
            ml_cost / mp_cost
        );
        gain_rows.push((runs.tol_sq, metric_name, ml_cost, mp_cost));
    }

    let mse_csv = report::mse_table_csv(&mse_rows);
    ctx.write("mse.csv", &mse_csv)?;
    ctx.write("mse.json", &report::mse_rows_json(&mse_rows))?;
    ctx.write("gain.csv", &report::gain_csv(&gain_rows))?;

    // per-level sample parity and cost report at the tightest tolerance
    if let Some(runs) = all.last() {
        let samples_csv = report::samples_csv(&[
            (Method::Mlmc, avg_level_samples(&runs.mlmc)),
            (Method::Mpml, avg_level_samples(&runs.mpml)),
        ]);
        ctx.write("samples.csv", &samples_csv)?;
        let cost_csv = report::cost_report_csv(&[
            (Method::Mlmc, runs.mlmc[0].clone()),
            (Method::Mpml, runs.mpml[0].clone()),
        ]);
        ctx.write("cost_report.csv", &cost_csv)?;
        ctx.write("run_mlmc.json", &report::run_result_json(&runs.mlmc[0]))?;
        ctx.write("run_mpml.json", &report::run_result_json(&runs.mpml[0]))?;
    }
    print!("{mse_csv}");
    Ok(())
}

/// Per-level ledger report for one run of each method at the first
/// configured tolerance.
pub fn cmd_cost_report(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.cfg;
    let problem = c.problem();
    let reference = load_or_compute_reference(ctx, &problem)?;
    let tol_sq = [c.tol_sq_list[0]];
    let experiment = engine::mse_experiment(
        &problem,
        &ctx.run_config(tol_sq[0], Method::Mlmc),
        &tol_sq,
        c.replicates.min(8),
        c.use_forced_samples(),
        reference,
        c.master_seed,
        &ctx.workers,
    )
    .map_err(|e| ctx.handle_engine(e))?;
    let runs = &experiment.replicates[0];
    let csv = report::cost_report_csv(&[
        (Method::Mlmc, runs.mlmc[0].clone()),
        (Method::Mpml, runs.mpml[0].clone()),
    ]);
    print!("{csv}");
    ctx.write("cost_report.csv", &csv)?;
    Ok(())
}

/// Residual trace of one iterative-refinement solve.
pub fn cmd_ir_trace(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.cfg;
    let problem = c.problem();
    let level = c.trace_level;
    let omega = problem.draw_omega(
        SeedSpec { master: c.master_seed, replicate: 0 },
        level,
        c.trace_sample,
    );
    let system = assemble(problem.mesh(level), &omega, &problem.params);
    let h0 = 1.0 / c.h0_inv as f64;
    // the below-finest schedule value for this level
    let eps = precision_schedule(level + 1, h0, c.m, c.k_p, &c.rates)[level];
    let quad = quad_for_level(level, c.policy);
    println!("# level {level}, n = {}, quad = {quad}, eps = {eps:.2e}", system.a.n());
    match mpml::ir::ir_solve(&system.a, &system.b, quad, eps, mpml::ir::IR_DEFAULT_MAX_STEPS) {
        Ok(rep) => {
            let csv = report::ir_trace_csv(&rep.residual_history);
            print!("{csv}");
            ctx.write("ir_trace.csv", &csv)?;
            Ok(())
        }
        Err(e) => Err(CliError::Solver(e.to_string())),
    }
}

/// Matrix market export of one assembled system.
pub fn cmd_dump_system(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.cfg;
    let problem = c.problem();
    let level = c.dump_level;
    let omega = problem.draw_omega(
        SeedSpec { master: c.master_seed, replicate: 0 },
        level,
        0,
    );
    let system = assemble(problem.mesh(level), &omega, &problem.params);
    let mut buf = Vec::new();
    system
        .a
        .write_matrix_market(&mut buf)
        .map_err(|e| CliError::Io(e.to_string()))?;
    let mtx = String::from_utf8(buf).expect("matrix market output is ascii");
    let matrix_path = ctx.write(&format!("system_level{level}.mtx"), &mtx)?;
    let rhs: String = system.b.iter().map(|v| format!("{v:e}\n")).collect();
    let rhs_path = ctx.write(&format!("rhs_level{level}.txt"), &rhs)?;
    println!("wrote {} and {}", matrix_path.display(), rhs_path.display());
    Ok(())
}

fn reference_cache_path(ctx: &Context) -> PathBuf {
    ctx.out.join("reference.json")
}

fn reference_key(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::json!({
        "s": cfg.terms,
        "q": cfg.decay,
        "sigma": cfg.sigma,
        "h0_inv": cfg.h0_inv,
        "m": cfg.m,
        "tol_sq": cfg.reference_tol_sq,
        "master_seed": cfg.master_seed,
    })
}

fn load_or_compute_reference(ctx: &Context, problem: &Problem) -> Result<f64, CliError> {
    let path = reference_cache_path(ctx);
    let key = reference_key(&ctx.cfg);
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) {
            if v.get("key") == Some(&key) {
                if let Some(value) = v.get("value").and_then(|x| x.as_f64()) {
                    return Ok(value);
                }
            }
        }
    }
    let (value, run) = engine::reference_value(
        problem,
        ctx.cfg.reference_tol_sq,
        ctx.cfg.master_seed,
        &ctx.workers,
    )
    .map_err(|e| ctx.handle_engine(e))?;
    let receipt: CostReceipt = run.total_cost;
    let cached = serde_json::json!({
        "key": key,
        "value": value,
        "levels": run.n_per_level(),
        "cost": receipt,
    });
    ctx.write(
        "reference.json",
        &serde_json::to_string_pretty(&cached).expect("json"),
    )?;
    Ok(value)
}

/// Compute (or re-use) and print the high-accuracy reference estimate.
pub fn cmd_reference_qoi(ctx: &Context) -> Result<(), CliError> {
    let problem = ctx.cfg.problem();
    let value = load_or_compute_reference(ctx, &problem)?;
    println!("{value:.10e}");
    Ok(())
}

