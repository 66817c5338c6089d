//! Mixed-precision iterative refinement around the sparse Cholesky
//! solver, with relative-residual stopping at a prescribed effective
//! precision.
//!
//! The algorithm factorises once in the factorisation precision, solves
//! the initial system by substitution in that precision, stores the
//! iterate in the working precision, and then loops: residual in the
//! residual precision (rounded to working storage), relative-residual
//! test, correction solve through the retained factor in the solve
//! precision, iterate update in working precision.
//!
//! The residual is rounded to the working precision `u`; rounding it to
//! the solve precision instead would be the other admissible reading of
//! the algorithm and makes no difference here because `u` is always at
//! least as fine as the solve precision in the shipped policies.
//!
//! Memory-bit accounting: the factor non-zeros are charged once at the
//! factorisation width, plus one n-vector at the storage width per solve
//! and per refinement step (the retained state; intermediate reads are
//! treated as cache traffic). Ratios between solver configurations are
//! the contract, absolute counts are an implementation detail.

use thiserror::Error;

use crate::cholesky::{self, CholFactor, FactorError};
use crate::cost::CostReceipt;
use crate::fp::{self, Format, FpError};
use crate::sparse::{norm2, SparseSpd};

/// The four iterative-refinement precisions, in the conventional order
/// (factorisation, correction solve, working/storage, residual).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PrecisionQuad {
    pub factor: Format,
    pub solve: Format,
    pub working: Format,
    pub residual: Format,
}

impl PrecisionQuad {
    pub fn new(
        factor: Format,
        solve: Format,
        working: Format,
        residual: Format,
    ) -> Option<PrecisionQuad> {
        let q = PrecisionQuad { factor, solve, working, residual };
        q.is_valid().then_some(q)
    }

    /// Unit roundoffs must satisfy `u_r <= u <= u_s <= u_f`.
    pub fn is_valid(&self) -> bool {
        self.residual.at_least_as_fine_as(self.working)
            && self.working.at_least_as_fine_as(self.solve)
            && self.solve.at_least_as_fine_as(self.factor)
    }

    /// Parse a four-letter code like `hhss` in (factor, solve, working,
    /// residual) order.
    pub fn parse(s: &str) -> Option<PrecisionQuad> {
        let mut it = s.chars();
        let f = Format::from_letter(it.next()?)?;
        let sv = Format::from_letter(it.next()?)?;
        let w = Format::from_letter(it.next()?)?;
        let r = Format::from_letter(it.next()?)?;
        if it.next().is_some() {
            return None;
        }
        PrecisionQuad::new(f, sv, w, r)
    }

    pub fn code(&self) -> String {
        [self.factor, self.solve, self.working, self.residual]
            .iter()
            .map(|f| f.letter())
            .collect()
    }
}

impl std::fmt::Display for PrecisionQuad {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.code())
    }
}

/// Level-to-quad table for the mixed-precision estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionPolicy {
    /// hhss on level 0, ssss on level 1, ssdd from level 2 on.
    Default,
    /// qhhh on level 0, hhss on every finer level.
    Quarter,
}

impl PrecisionPolicy {
    pub fn parse(s: &str) -> Option<PrecisionPolicy> {
        match s {
            "default" => Some(PrecisionPolicy::Default),
            "quarter" => Some(PrecisionPolicy::Quarter),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrecisionPolicy::Default => "default",
            PrecisionPolicy::Quarter => "quarter",
        }
    }
}

/// Precision quadruple used for level `l` under the given policy.
pub fn quad_for_level(level: usize, policy: PrecisionPolicy) -> PrecisionQuad {
    let code = match policy {
        PrecisionPolicy::Default => match level {
            0 => "hhss",
            1 => "ssss",
            _ => "ssdd",
        },
        PrecisionPolicy::Quarter => match level {
            0 => "qhhh",
            _ => "hhss",
        },
    };
    PrecisionQuad::parse(code).expect("built-in policy codes are valid")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IrError {
    #[error(
        "iterative refinement did not converge in {steps} steps (relative residual {rel_res:e}, requested {eps:e})"
    )]
    NoConvergence { steps: usize, rel_res: f64, eps: f64 },
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Fp(#[from] FpError),
}

/// Result of a converged iterative-refinement solve.
#[derive(Debug, Clone)]
pub struct IrReport {
    /// Solution values (working-precision values in binary64 carriers).
    pub x: Vec<f64>,
    /// Relative residual from the stopping test (residual-precision
    /// computation, working-precision storage, binary64 norms).
    pub rel_res: f64,
    /// Number of correction solves performed.
    pub refinement_steps: usize,
    pub converged: bool,
    pub cost: CostReceipt,
    /// Relative residual observed at every test, including the final one.
    pub residual_history: Vec<f64>,
}

pub const IR_DEFAULT_MAX_STEPS: usize = 50;

/// Solve `A x = b` to effective precision `eps` by iterative refinement.
///
/// The factor is computed once in `quad.factor` and reused for every
/// correction; the ledger charges the factorisation once.
pub fn ir_solve(
    a: &SparseSpd,
    b: &[f64],
    quad: PrecisionQuad,
    eps: f64,
    max_steps: usize,
) -> Result<IrReport, IrError> {
    assert!(eps > 0.0 && eps < 1.0, "eps must lie in (0, 1)");
    assert!(quad.is_valid(), "invalid precision quadruple {quad}");
    let n = a.n();
    assert_eq!(b.len(), n, "dimension mismatch");

    let mut cost = CostReceipt::default();
    let factor: CholFactor = cholesky::cholesky(a, quad.factor, &mut cost)?;

    let x0 = cholesky::solve_with_factor(&factor, b, quad.factor, &mut cost)?;
    let mut x = fp::round_vec(&x0, quad.working)?;
    cost.charge_array(n, quad.working);

    let bnorm = norm2(b);
    let mut history = Vec::new();
    for step in 0..=max_steps {
        let r_raw = crate::sparse::residual_in_format(a, &x, b, quad.residual)?;
        let r = fp::round_vec(&r_raw, quad.working)?;
        cost.flops += 2 * a.nnz() as u64 + n as u64;
        let rel_res = norm2(&r) / bnorm;
        history.push(rel_res);
        if rel_res < eps {
            return Ok(IrReport {
                x,
                rel_res,
                refinement_steps: step,
                converged: true,
                cost,
                residual_history: history,
            });
        }
        if step == max_steps {
            break;
        }
        let d = cholesky::solve_with_factor(&factor, &r, quad.solve, &mut cost)?;
        for i in 0..n {
            x[i] = fp::fp_add(x[i], fp::round_to(d[i], quad.working)?, quad.working)?;
        }
        cost.flops += n as u64;
        cost.charge_array(n, quad.working);
        cost.solver_iters += 1;
    }
    Err(IrError::NoConvergence {
        steps: max_steps,
        rel_res: *history.last().unwrap(),
        eps,
    })
}
