//! Cost accounting: FLOPs, simulated memory bits, and the analytic
//! cost-gain predictions for the mixed-precision estimator.
//!
//! The memory-bit model charges each stored or loaded scalar its format
//! bit-width: the non-zeros of every sparse factor are charged once per
//! factorisation at the factorisation width, and every vector read or
//! written inside a solver step is charged at its storage width. FLOPs
//! count scalar add/sub/mul/div (and sqrt) inside solvers only; assembly
//! is identical across methods and cancels in ratios.

use thiserror::Error;

use crate::fp::Format;

/// Additive cost record attached to every solve and sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CostReceipt {
    pub flops: u64,
    pub mem_bits: u64,
    pub factor_nnz: u64,
    pub solver_iters: u64,
}

impl CostReceipt {
    pub fn merge(&mut self, other: &CostReceipt) {
        self.flops += other.flops;
        self.mem_bits += other.mem_bits;
        self.factor_nnz += other.factor_nnz;
        self.solver_iters += other.solver_iters;
    }

    /// Charge `n` scalars stored or loaded in format `fmt`.
    pub fn charge_array(&mut self, n: usize, fmt: Format) {
        self.mem_bits += n as u64 * fmt.bit_width() as u64;
    }
}

impl std::ops::Add for CostReceipt {
    type Output = CostReceipt;
    fn add(mut self, rhs: CostReceipt) -> CostReceipt {
        self.merge(&rhs);
        self
    }
}

impl std::iter::Sum for CostReceipt {
    fn sum<I: Iterator<Item = CostReceipt>>(iter: I) -> CostReceipt {
        iter.fold(CostReceipt::default(), |acc, r| acc + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum CostError {
    /// The asymptotic gain bound requires variance to decay faster than
    /// cost grows.
    #[error("predicted_gain requires beta > gamma (got beta = {beta}, gamma = {gamma})")]
    BetaNotAboveGamma { beta: f64, gamma: f64 },
}

/// Asymptotic bound on the mixed-precision/full-precision total cost
/// ratio when the coarsest-level cost is reduced by the factor `q`:
/// `q + m^((gamma - beta)/2) * (1 - q)`.
pub fn predicted_gain(q: f64, m: u32, beta: f64, gamma: f64) -> Result<f64, CostError> {
    assert!(q > 0.0 && q < 1.0, "q must lie in (0, 1)");
    if beta <= gamma {
        return Err(CostError::BetaNotAboveGamma { beta, gamma });
    }
    Ok(q + (m as f64).powf((gamma - beta) / 2.0) * (1.0 - q))
}

/// Empirical per-level total-cost decay: `(C_{l+1} N_{l+1}) / (C_l N_l)`
/// for each consecutive level pair, from per-level cost totals.
pub fn level_cost_ratio(level_totals: &[f64]) -> Vec<f64> {
    level_totals
        .windows(2)
        .map(|w| w[1] / w[0])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn charge_array_uses_bit_widths() {
        let mut r = CostReceipt::default();
        r.charge_array(10, Format::Double);
        assert_eq!(r.mem_bits, 640);
        r.charge_array(10, Format::Half);
        assert_eq!(r.mem_bits, 800);
        r.charge_array(0, Format::Q43);
        assert_eq!(r.mem_bits, 800);
        // half is 2x cheaper than single, 4x cheaper than double
        assert_eq!(Format::Single.bit_width(), 2 * Format::Half.bit_width());
        assert_eq!(Format::Double.bit_width(), 4 * Format::Half.bit_width());
    }

    #[test]
    fn predicted_gain_values() {
        // q = 1/4, m = 2, beta = 4, gamma = 2: ratio bound 0.625 (gain 1.6)
        assert_eq!(predicted_gain(0.25, 2, 4.0, 2.0).unwrap(), 0.625);
        assert_eq!(predicted_gain(0.5, 2, 4.0, 2.0).unwrap(), 0.75);
        let near_one = predicted_gain(0.999999, 2, 4.0, 2.0).unwrap();
        assert!((near_one - 1.0).abs() < 1e-5);
        assert!(predicted_gain(0.25, 2, 2.0, 2.0).is_err());
        assert!(predicted_gain(0.25, 2, 1.0, 2.0).is_err());
    }

    #[test]
    fn level_cost_ratio_synthetic() {
        // C_l = 4^l, N_l = N0 / 16^l: totals decay by 1/4 per level
        let totals: Vec<f64> = (0..4)
            .map(|l| 4f64.powi(l) * 1024.0 / 16f64.powi(l))
            .collect();
        let ratios = level_cost_ratio(&totals);
        assert_eq!(ratios.len(), 3);
        for r in ratios {
            assert!((r - 0.25).abs() < 1e-12);
        }
        assert!(level_cost_ratio(&[1.0]).is_empty());
    }

    proptest! {
        #[test]
        fn merge_is_commutative_and_associative(
            a in any::<[u32; 4]>(), b in any::<[u32; 4]>(), c in any::<[u32; 4]>()
        ) {
            let mk = |v: [u32; 4]| CostReceipt {
                flops: v[0] as u64,
                mem_bits: v[1] as u64,
                factor_nnz: v[2] as u64,
                solver_iters: v[3] as u64,
            };
            let (a, b, c) = (mk(a), mk(b), mk(c));
            prop_assert_eq!(a + b, b + a);
            prop_assert_eq!((a + b) + c, a + (b + c));
        }
    }
}
