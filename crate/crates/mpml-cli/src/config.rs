//! Flat key-value experiment configuration.
//!
//! The format is INI-style without sections: one `key = value` per line,
//! `#` starts a comment. Unknown keys are rejected so typos surface
//! immediately. Every key has a default, so an empty (or absent) config
//! runs the standard desk-scale experiment.

use std::path::Path;

use mpml::engine::{CostMetric, DecayRates, SolverKind};
use mpml::ir::PrecisionPolicy;
use mpml::pde::{Problem, RandomFieldParams};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Whether the per-sample cost estimate comes from the ledger or from
/// the optimal-complexity DOF model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostModelChoice {
    Empirical,
    Dof,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    // random field
    pub terms: usize,
    pub decay: f64,
    pub sigma: f64,
    // discretisation
    pub h0_inv: usize,
    pub m: usize,
    // solver
    pub solver: SolverKind,
    pub fixed_tol: f64,
    pub policy: PrecisionPolicy,
    // estimator
    pub tol_sq_list: Vec<f64>,
    pub k_p: f64,
    pub n_init: u64,
    pub l_max: usize,
    pub replicates: u32,
    pub bias_r: f64,
    pub cost_model: CostModelChoice,
    pub rates: DecayRates,
    pub forced_samples: Option<bool>,
    // seeds and reference
    pub master_seed: u64,
    pub reference_tol_sq: f64,
    // command-specific knobs
    pub schedule_levels: usize,
    pub decay_levels: Vec<usize>,
    pub decay_eps: Vec<f64>,
    pub decay_samples: u64,
    pub trace_level: usize,
    pub trace_sample: u64,
    pub dump_level: usize,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            terms: 4,
            decay: 2.0,
            sigma: 2.0,
            h0_inv: 8,
            m: 2,
            solver: SolverKind::Minres,
            fixed_tol: 1e-6,
            policy: PrecisionPolicy::Default,
            tol_sq_list: vec![8e-6, 4e-6, 2e-6, 1e-6],
            k_p: 0.05,
            n_init: 100,
            l_max: 6,
            replicates: 100,
            bias_r: 1.0,
            cost_model: CostModelChoice::Empirical,
            rates: DecayRates::default(),
            forced_samples: None,
            master_seed: 0,
            reference_tol_sq: 2e-8,
            schedule_levels: 4,
            decay_levels: vec![0, 1, 2],
            decay_eps: vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4, 1e-6],
            decay_samples: 200,
            trace_level: 0,
            trace_sample: 0,
            dump_level: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError(format!("invalid value `{value}` for key `{key}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "s" => self.terms = parse(key, value)?,
            "q" => self.decay = parse(key, value)?,
            "sigma" => self.sigma = parse(key, value)?,
            "h0_inv" => self.h0_inv = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "solver" => {
                self.solver = match value {
                    "minres" => SolverKind::Minres,
                    "cholesky_ir" => SolverKind::CholeskyIr,
                    _ => return Err(ConfigError(format!("unknown solver `{value}`"))),
                }
            }
            "fixed_tol" => self.fixed_tol = parse(key, value)?,
            "policy" => {
                self.policy = PrecisionPolicy::parse(value)
                    .ok_or_else(|| ConfigError(format!("unknown policy `{value}`")))?
            }
            "tol_sq_list" => self.tol_sq_list = parse_list(key, value)?,
            "k_p" => self.k_p = parse(key, value)?,
            "n_init" => self.n_init = parse(key, value)?,
            "l_max" => self.l_max = parse(key, value)?,
            "replicates" => self.replicates = parse(key, value)?,
            "r_bias" => self.bias_r = parse(key, value)?,
            "cost_model" => {
                self.cost_model = match value {
                    "empirical" => CostModelChoice::Empirical,
                    "dof" => CostModelChoice::Dof,
                    _ => return Err(ConfigError(format!("unknown cost model `{value}`"))),
                }
            }
            "alpha" => self.rates.alpha = parse(key, value)?,
            "beta" => self.rates.beta = parse(key, value)?,
            "gamma" => self.rates.gamma = parse(key, value)?,
            "alpha1" => self.rates.alpha1 = parse(key, value)?,
            "alpha2" => self.rates.alpha2 = parse(key, value)?,
            "beta1" => self.rates.beta1 = parse(key, value)?,
            "beta2" => self.rates.beta2 = parse(key, value)?,
            "forced_samples" => self.forced_samples = Some(parse(key, value)?),
            "master_seed" => self.master_seed = parse(key, value)?,
            "reference_tol_sq" => self.reference_tol_sq = parse(key, value)?,
            "schedule_levels" => self.schedule_levels = parse(key, value)?,
            "decay_levels" => self.decay_levels = parse_list(key, value)?,
            "decay_eps" => self.decay_eps = parse_list(key, value)?,
            "decay_samples" => self.decay_samples = parse(key, value)?,
            "trace_level" => self.trace_level = parse(key, value)?,
            "trace_sample" => self.trace_sample = parse(key, value)?,
            "dump_level" => self.dump_level = parse(key, value)?,
            _ => return Err(ConfigError(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |msg: &str| Err(ConfigError(msg.to_string()));
        if self.terms < 1 {
            return err("s must be at least 1");
        }
        if !(self.decay > 0.0) {
            return err("q must be positive");
        }
        if !(self.sigma > 0.0) {
            return err("sigma must be positive");
        }
        if self.h0_inv < 2 {
            return err("h0_inv must be at least 2");
        }
        if self.m < 2 {
            return err("m must be at least 2");
        }
        if self.tol_sq_list.is_empty() || self.tol_sq_list.iter().any(|&t| !(t > 0.0)) {
            return err("tol_sq_list must contain positive values");
        }
        if !(self.k_p > 0.0 && self.k_p < 1.0) {
            return err("k_p must lie in (0, 1)");
        }
        if !(self.fixed_tol > 0.0 && self.fixed_tol < 1.0) {
            return err("fixed_tol must lie in (0, 1)");
        }
        if self.replicates < 2 {
            return err("replicates must be at least 2");
        }
        if self.n_init < 2 {
            return err("n_init must be at least 2");
        }
        if self.l_max < 1 || self.l_max + 1 >= mpml::pde::MAX_MESH_LEVELS {
            return err("l_max out of range");
        }
        if self.schedule_levels < 1 {
            return err("schedule_levels must be at least 1");
        }
        if !(self.reference_tol_sq > 0.0) {
            return err("reference_tol_sq must be positive");
        }
        if !(self.bias_r > 0.0) {
            return err("r_bias must be positive");
        }
        Ok(())
    }

    pub fn problem(&self) -> Problem {
        Problem::new(
            RandomFieldParams {
                terms: self.terms,
                decay: self.decay,
                sigma: self.sigma,
            },
            self.h0_inv,
            self.m,
        )
    }

    /// Ledger column used for `C_l` estimates under this configuration.
    pub fn cost_metric(&self) -> CostMetric {
        match (self.cost_model, self.solver) {
            (CostModelChoice::Dof, _) => CostMetric::Dof,
            (CostModelChoice::Empirical, SolverKind::Minres) => CostMetric::Flops,
            (CostModelChoice::Empirical, SolverKind::CholeskyIr) => CostMetric::MemBits,
        }
    }

    /// The same-samples same-seeds protocol is the default for the
    /// direct-solver comparison.
    pub fn use_forced_samples(&self) -> bool {
        self.forced_samples
            .unwrap_or(self.solver == SolverKind::CholeskyIr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn parses_known_keys_and_comments() {
        let cfg = ExperimentConfig::from_str(
            "# experiment\nsigma = 1.0\ns = 1\nh0_inv = 4\nk_p = 0.4\npolicy = quarter\nsolver = cholesky_ir\ntol_sq_list = 8e-6, 2e-6\n",
        )
        .unwrap();
        assert_eq!(cfg.sigma, 1.0);
        assert_eq!(cfg.terms, 1);
        assert_eq!(cfg.h0_inv, 4);
        assert_eq!(cfg.policy, PrecisionPolicy::Quarter);
        assert_eq!(cfg.solver, SolverKind::CholeskyIr);
        assert_eq!(cfg.tol_sq_list, vec![8e-6, 2e-6]);
        assert!(cfg.use_forced_samples());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_str("nosuchkey = 1\n").is_err());
        assert!(ExperimentConfig::from_str("k_p = 1.5\n").is_err());
        assert!(ExperimentConfig::from_str("solver = lu\n").is_err());
        assert!(ExperimentConfig::from_str("s = zero\n").is_err());
        assert!(ExperimentConfig::from_str("schedule_levels = 0\n").is_err());
    }
}
