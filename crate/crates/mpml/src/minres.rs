//! MINRES for symmetric positive definite systems, with stopping on the
//! relative residual.
//!
//! All calculations run in binary64. The Lanczos recurrence provides a
//! cheap residual-norm estimate; whenever it signals convergence the true
//! residual `||b - A x_k||` is recomputed and the iteration only stops
//! once the true relative residual meets the tolerance. The returned
//! `rel_res` is always the recomputed one.

use thiserror::Error;

use crate::cost::CostReceipt;
use crate::sparse::{norm2, SparseSpd};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MinresError {
    #[error("minres did not converge in {iters} iterations (relative residual {rel_res:e})")]
    NoConvergence { iters: usize, rel_res: f64 },
    #[error("right-hand side is zero")]
    ZeroRhs,
    #[error("tolerance {0} outside (0, 1)")]
    BadTolerance(f64),
}

#[derive(Debug, Clone)]
pub struct MinresResult {
    pub x: Vec<f64>,
    /// True relative residual, recomputed from `b - A x`.
    pub rel_res: f64,
    pub iters: usize,
}

pub fn minres(
    a: &SparseSpd,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    receipt: &mut CostReceipt,
) -> Result<MinresResult, MinresError> {
    minres_inner(a, b, tol, max_iter, receipt, None)
}

/// MINRES variant that records the true relative residual after every
/// iteration (diagnostics and tests; extra matvecs are charged too).
pub fn minres_history(
    a: &SparseSpd,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    receipt: &mut CostReceipt,
    history: &mut Vec<f64>,
) -> Result<MinresResult, MinresError> {
    minres_inner(a, b, tol, max_iter, receipt, Some(history))
}

fn true_rel_res(a: &SparseSpd, x: &[f64], b: &[f64], bnorm: f64, receipt: &mut CostReceipt) -> f64 {
    let n = a.n();
    let mut ax = vec![0.0; n];
    a.matvec_counted(x, &mut ax, receipt);
    let mut ss = 0.0;
    for i in 0..n {
        let d = b[i] - ax[i];
        ss += d * d;
    }
    receipt.flops += 3 * n as u64;
    ss.sqrt() / bnorm
}

fn minres_inner(
    a: &SparseSpd,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    receipt: &mut CostReceipt,
    mut history: Option<&mut Vec<f64>>,
) -> Result<MinresResult, MinresError> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(MinresError::BadTolerance(tol));
    }
    let n = a.n();
    assert_eq!(b.len(), n, "dimension mismatch");
    let beta1 = norm2(b);
    receipt.flops += 2 * n as u64;
    if beta1 == 0.0 {
        return Err(MinresError::ZeroRhs);
    }

    let mut x = vec![0.0; n];
    let mut y = b.to_vec();
    let mut r1 = b.to_vec();
    let mut r2 = b.to_vec();
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];

    let mut beta = beta1;
    let mut oldb = 0.0;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let (mut cs, mut sn) = (-1.0, 0.0);

    let mut iters = 0;
    let mut rel = 1.0;
    while iters < max_iter {
        iters += 1;
        // Lanczos step
        let s = 1.0 / beta;
        for i in 0..n {
            v[i] = s * y[i];
        }
        a.matvec_counted(&v, &mut y, receipt);
        if iters >= 2 {
            let f = beta / oldb;
            for i in 0..n {
                y[i] -= f * r1[i];
            }
            receipt.flops += 2 * n as u64 + 1;
        }
        let alfa: f64 = v.iter().zip(&y).map(|(a, b)| a * b).sum();
        let f = alfa / beta;
        for i in 0..n {
            y[i] -= f * r2[i];
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        oldb = beta;
        beta = norm2(&y);
        receipt.flops += 7 * n as u64 + 2;

        // plane rotation applied to the tridiagonal factorisation
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = (gbar * gbar + beta * beta).sqrt().max(f64::MIN_POSITIVE);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        receipt.flops += 14;

        // direction and solution update
        let denom = 1.0 / gamma;
        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }
        receipt.flops += 7 * n as u64 + 1;
        receipt.solver_iters += 1;

        if let Some(h) = history.as_deref_mut() {
            h.push(true_rel_res(a, &x, b, beta1, receipt));
        }

        // cheap estimate first, true residual confirms
        if phibar / beta1 <= tol || beta <= f64::MIN_POSITIVE {
            rel = true_rel_res(a, &x, b, beta1, receipt);
            if rel <= tol {
                return Ok(MinresResult { x, rel_res: rel, iters });
            }
            if beta <= f64::MIN_POSITIVE {
                break; // Krylov space exhausted
            }
        }
    }
    rel = true_rel_res(a, &x, b, beta1, receipt).min(rel);
    Err(MinresError::NoConvergence { iters, rel_res: rel })
}

/// Simple memory-traffic model for MINRES (documented implementation
/// detail; FLOPs are the contract metric for this solver): per iteration
/// the matrix entries are read once and roughly ten working vectors are
/// touched, all in binary64.
pub fn charge_minres_memory(a: &SparseSpd, iters: usize, receipt: &mut CostReceipt) {
    let per_iter = a.nnz() as u64 + 10 * a.n() as u64;
    receipt.mem_bits += 64 * (3 * a.n() as u64 + per_iter * iters as u64);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::SparseSpd;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn identity(n: usize) -> SparseSpd {
        SparseSpd::from_triplets(n, (0..n).map(|i| (i, i, 1.0))).unwrap()
    }

    pub fn random_band_spd(n: usize, rng: &mut ChaCha8Rng) -> SparseSpd {
        let band = 1 + rng.random_range(0..5usize);
        let mut t = Vec::new();
        let mut rowsum = vec![0.0f64; n];
        for i in 0..n {
            for j in i + 1..(i + band + 1).min(n) {
                let v: f64 = rng.random_range(-1.0..1.0);
                if v.abs() > 0.05 {
                    t.push((i, j, v));
                    t.push((j, i, v));
                    rowsum[i] += v.abs();
                    rowsum[j] += v.abs();
                }
            }
        }
        for (i, s) in rowsum.iter().enumerate() {
            t.push((i, i, s + 0.5 + rng.random_range(0.0..1.0)));
        }
        SparseSpd::from_triplets(n, t).unwrap()
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let a = identity(8);
        let b: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        let mut rc = CostReceipt::default();
        let r = minres(&a, &b, 1e-6, 80, &mut rc).unwrap();
        assert_eq!(r.iters, 1);
        for (xi, bi) in r.x.iter().zip(&b) {
            assert_relative_eq!(xi, bi, epsilon = 1e-12);
        }
    }

    #[test]
    fn diagonal_system_exact() {
        let a = SparseSpd::from_triplets(2, vec![(0, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let mut rc = CostReceipt::default();
        let r = minres(&a, &[1.0, 2.0], 1e-10, 20, &mut rc).unwrap();
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(r.x[1], 1.0, epsilon = 1e-9);
        assert!(r.rel_res <= 1e-10);
    }

    #[test]
    fn matches_dense_oracle_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.random_range(5..60);
            let a = random_band_spd(n, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut rc = CostReceipt::default();
            let r = minres(&a, &b, 1e-12, 20 * n, &mut rc).unwrap();
            let dense = nalgebra::DMatrix::from_fn(n, n, |i, j| a.to_dense()[i][j]);
            let oracle = dense.lu().solve(&nalgebra::DVector::from_vec(b)).unwrap();
            let err = r
                .x
                .iter()
                .zip(oracle.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(err / oracle.amax() < 1e-8, "n = {n}, err = {err:e}");
        }
    }

    #[test]
    fn true_residuals_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_band_spd(40, &mut rng);
        let b: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut rc = CostReceipt::default();
        let mut hist = Vec::new();
        minres_history(&a, &b, 1e-11, 800, &mut rc, &mut hist).unwrap();
        for w in hist.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 10.0 * f64::EPSILON), "{w:?}");
        }
    }

    #[test]
    fn tighter_tolerance_takes_more_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_band_spd(50, &mut rng);
        let b: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut rc = CostReceipt::default();
        let loose = minres(&a, &b, 3.5e-3, 500, &mut rc).unwrap();
        let tight = minres(&a, &b, 1e-6, 500, &mut rc).unwrap();
        assert!(loose.iters < tight.iters);
    }

    #[test]
    fn error_cases() {
        let a = identity(3);
        let mut rc = CostReceipt::default();
        assert!(matches!(
            minres(&a, &[0.0; 3], 1e-6, 10, &mut rc),
            Err(MinresError::ZeroRhs)
        ));
        assert!(matches!(
            minres(&a, &[1.0; 3], 1.5, 10, &mut rc),
            Err(MinresError::BadTolerance(_))
        ));
        // an SPD system that cannot converge in one iteration
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let hard = random_band_spd(30, &mut rng);
        let b = vec![1.0; 30];
        match minres(&hard, &b, 1e-14, 1, &mut rc) {
            Err(MinresError::NoConvergence { iters: 1, rel_res }) => {
                assert!(rel_res > 1e-14);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn flops_are_charged() {
        let a = identity(16);
        let mut rc = CostReceipt::default();
        minres(&a, &[1.0; 16], 1e-8, 10, &mut rc).unwrap();
        assert!(rc.flops > 0);
        assert_eq!(rc.solver_iters, 1);
    }
}
