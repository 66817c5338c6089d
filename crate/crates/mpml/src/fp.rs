//! Emulation of reduced-precision floating point arithmetic.
//!
//! Values are carried in binary64 throughout; "computing in precision p"
//! means rounding the inputs to p, performing the operation in binary64,
//! and rounding the result back to p. All rounding is round-to-nearest,
//! ties-to-even, with gradual underflow (subnormals) in every format.
//!
//! The quarter-precision format `q43` has 4 exponent bits and 3 stored
//! significand bits. Its exponent bias is fixed at 7 (IEEE style, top
//! exponent reserved), giving `max_abs = 240` and `min_normal = 2^-6`.

use thiserror::Error;

/// Errors raised by emulated floating point operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FpError {
    /// The nearest representable value exceeds the format's range.
    #[error("overflow in format {0}")]
    Overflow(Format),
    #[error("division by zero in format {0}")]
    DivisionByZero(Format),
}

/// An emulated floating point format, ordered from coarsest to finest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Q43,
    Half,
    Single,
    Double,
}

impl Format {
    pub const ALL: [Format; 4] = [Format::Q43, Format::Half, Format::Single, Format::Double];

    /// Number of exponent bits.
    pub fn exp_bits(self) -> u32 {
        match self {
            Format::Q43 => 4,
            Format::Half => 5,
            Format::Single => 8,
            Format::Double => 11,
        }
    }

    /// Number of stored significand bits (excluding the implicit bit).
    pub fn sig_bits(self) -> u32 {
        match self {
            Format::Q43 => 3,
            Format::Half => 10,
            Format::Single => 23,
            Format::Double => 52,
        }
    }

    /// Unit roundoff `u = 2^-(sig_bits + 1)` for round-to-nearest.
    pub fn unit_roundoff(self) -> f64 {
        exp2i(-(self.sig_bits() as i32) - 1)
    }

    /// Largest finite magnitude representable in the format.
    pub fn max_abs(self) -> f64 {
        match self {
            Format::Q43 => 240.0,
            Format::Half => 65504.0,
            Format::Single => f32::MAX as f64,
            Format::Double => f64::MAX,
        }
    }

    /// Smallest positive normal number.
    pub fn min_normal(self) -> f64 {
        exp2i(self.min_exp())
    }

    /// Exponent of the smallest normal number (`1 - bias`).
    fn min_exp(self) -> i32 {
        match self {
            Format::Q43 => -6,
            Format::Half => -14,
            Format::Single => -126,
            Format::Double => -1022,
        }
    }

    /// Storage width in bits, including the sign bit.
    pub fn bit_width(self) -> u32 {
        match self {
            Format::Q43 => 8,
            Format::Half => 16,
            Format::Single => 32,
            Format::Double => 64,
        }
    }

    /// True if `self` carries at least as much precision as `other`.
    pub fn at_least_as_fine_as(self, other: Format) -> bool {
        self.unit_roundoff() <= other.unit_roundoff()
    }

    /// Canonical name used in config files and CLI flags.
    pub fn name(self) -> &'static str {
        match self {
            Format::Q43 => "q43",
            Format::Half => "half",
            Format::Single => "single",
            Format::Double => "double",
        }
    }

    pub fn parse(s: &str) -> Option<Format> {
        match s {
            "q43" => Some(Format::Q43),
            "half" => Some(Format::Half),
            "single" => Some(Format::Single),
            "double" => Some(Format::Double),
            _ => None,
        }
    }

    /// Single-letter abbreviation used in precision-quad strings like `hhss`.
    pub fn letter(self) -> char {
        match self {
            Format::Q43 => 'q',
            Format::Half => 'h',
            Format::Single => 's',
            Format::Double => 'd',
        }
    }

    pub fn from_letter(c: char) -> Option<Format> {
        match c {
            'q' => Some(Format::Q43),
            'h' => Some(Format::Half),
            's' => Some(Format::Single),
            'd' => Some(Format::Double),
            _ => None,
        }
    }
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// 2^e as f64, for exponents in the normal binary64 range.
#[inline]
fn exp2i(e: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&e));
    f64::from_bits(((e + 1023) as u64) << 52)
}

/// Round a finite binary64 value to the nearest representable value of
/// `fmt` (ties to even), re-expressed in binary64.
///
/// Underflow is gradual and silent; magnitudes beyond `fmt.max_abs()`
/// are an overflow error.
#[inline]
pub fn round_to(x: f64, fmt: Format) -> Result<f64, FpError> {
    if fmt == Format::Double {
        return if x.is_finite() {
            Ok(x)
        } else {
            Err(FpError::Overflow(fmt))
        };
    }
    if x == 0.0 {
        return Ok(x);
    }
    if !x.is_finite() {
        return Err(FpError::Overflow(fmt));
    }
    let ebits = ((x.to_bits() >> 52) & 0x7ff) as i32;
    let e = if ebits == 0 { -1022 } else { ebits - 1023 };
    // Quantum of the target format at this magnitude; fixed below the
    // normal range so that underflow is gradual.
    let q = exp2i(e.max(fmt.min_exp()) - fmt.sig_bits() as i32);
    // x/q is an exact power-of-two scaling, so the division itself
    // introduces no rounding.
    let y = (x / q).round_ties_even() * q;
    if y.abs() > fmt.max_abs() {
        return Err(FpError::Overflow(fmt));
    }
    Ok(y)
}

/// A basic arithmetic operation of the standard floating point model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Perform `a op b` in the emulated format `fmt`.
///
/// Inputs are expected to be representable in `fmt` already; the exact
/// binary64 result is rounded into `fmt`, which satisfies the standard
/// model `fl(a op b) = (1 + nu)(a op b)` with `|nu| <= fmt.unit_roundoff()`.
#[inline]
pub fn fp_op(a: f64, b: f64, op: FpOp, fmt: Format) -> Result<f64, FpError> {
    let exact = match op {
        FpOp::Add => a + b,
        FpOp::Sub => a - b,
        FpOp::Mul => a * b,
        FpOp::Div => {
            if b == 0.0 {
                return Err(FpError::DivisionByZero(fmt));
            }
            a / b
        }
    };
    round_to(exact, fmt)
}

#[inline]
pub fn fp_add(a: f64, b: f64, fmt: Format) -> Result<f64, FpError> {
    fp_op(a, b, FpOp::Add, fmt)
}

#[inline]
pub fn fp_sub(a: f64, b: f64, fmt: Format) -> Result<f64, FpError> {
    fp_op(a, b, FpOp::Sub, fmt)
}

#[inline]
pub fn fp_mul(a: f64, b: f64, fmt: Format) -> Result<f64, FpError> {
    fp_op(a, b, FpOp::Mul, fmt)
}

#[inline]
pub fn fp_div(a: f64, b: f64, fmt: Format) -> Result<f64, FpError> {
    fp_op(a, b, FpOp::Div, fmt)
}

/// Emulated square root: binary64 sqrt of the operand, rounded to `fmt`.
///
/// Not part of the four-op standard model, but needed by Cholesky; the
/// standard model covers it in the same `(1 + nu)` form.
#[inline]
pub fn fp_sqrt(a: f64, fmt: Format) -> Result<f64, FpError> {
    round_to(a.sqrt(), fmt)
}

/// Round every element of a vector into `fmt`.
pub fn round_vec(xs: &[f64], fmt: Format) -> Result<Vec<f64>, FpError> {
    xs.iter().map(|&x| round_to(x, fmt)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force oracle: enumerate every q43 value (8 exponent codes +
    /// subnormals, 3 stored bits, both signs) and return the nearest one,
    /// ties to even significand.
    fn q43_grid() -> Vec<f64> {
        let mut grid = vec![0.0];
        for sign in [1.0, -1.0] {
            // subnormals: 0.frac * 2^-6
            for frac in 1..8u32 {
                grid.push(sign * (frac as f64 / 8.0) * exp2i(-6));
            }
            // normals: 1.frac * 2^e, e in [-6, 7]
            for e in -6..=7i32 {
                for frac in 0..8u32 {
                    grid.push(sign * (1.0 + frac as f64 / 8.0) * exp2i(e));
                }
            }
        }
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid
    }

    fn q43_nearest_oracle(x: f64) -> Option<f64> {
        let grid = q43_grid();
        let mut best: Option<f64> = None;
        let mut best_d = f64::INFINITY;
        for &g in &grid {
            let d = (g - x).abs();
            if d < best_d {
                best_d = d;
                best = Some(g);
            } else if d == best_d {
                // tie: prefer even significand = value whose quotient by
                // its quantum is even
                if let Some(b) = best {
                    let quantum = |v: f64| {
                        let e = if v == 0.0 {
                            -6
                        } else {
                            (v.abs().log2().floor() as i32).max(-6)
                        };
                        exp2i(e - 3)
                    };
                    let even = |v: f64| ((v / quantum(v)).round() as i64) % 2 == 0;
                    if even(g) && !even(b) {
                        best = Some(g);
                    }
                }
            }
        }
        best
    }

    #[test]
    fn q43_parameters() {
        let f = Format::Q43;
        assert_eq!(f.exp_bits(), 4);
        assert_eq!(f.sig_bits(), 3);
        assert_eq!(f.unit_roundoff(), 0.0625);
        assert_eq!(f.max_abs(), 240.0);
        assert_eq!(f.min_normal(), 0.015625);
        assert_eq!(f.bit_width(), 8);
    }

    #[test]
    fn unit_roundoffs_match_interchange_formats() {
        assert_eq!(Format::Half.unit_roundoff(), exp2i(-11));
        assert_eq!(Format::Single.unit_roundoff(), exp2i(-24));
        assert_eq!(Format::Double.unit_roundoff(), exp2i(-53));
        // totally ordered by unit roundoff: q43 > half > single > double
        for w in Format::ALL.windows(2) {
            assert!(w[0].unit_roundoff() > w[1].unit_roundoff());
        }
    }

    #[test]
    fn round_exact_values() {
        assert_eq!(round_to(1.0, Format::Q43).unwrap(), 1.0);
        assert_eq!(round_to(-1.5, Format::Q43).unwrap(), -1.5);
        assert_eq!(round_to(240.0, Format::Q43).unwrap(), 240.0);
        assert_eq!(round_to(65504.0, Format::Half).unwrap(), 65504.0);
    }

    #[test]
    fn round_one_plus_2pow_minus5_down() {
        // 2^-5 < u = 2^-4, and 1 + 2^-5 is the midpoint's lower half
        let x = 1.0 + exp2i(-5) / 2.0; // strictly inside -> 1.0
        assert_eq!(round_to(x, Format::Q43).unwrap(), 1.0);
        let x = 1.0 + exp2i(-5);
        assert_eq!(round_to(x, Format::Q43).unwrap(), 1.0);
        assert_eq!(q43_nearest_oracle(x).unwrap(), 1.0);
    }

    #[test]
    fn tie_at_one_plus_u_goes_to_even() {
        // 1 + 2^-4 = 1.0625 is exactly between 1.0 (even significand) and
        // 1.125 (odd); ties-to-even selects 1.0.
        let exact = 1.0 + exp2i(-4);
        assert_eq!(round_to(exact, Format::Q43).unwrap(), 1.0);
        assert_eq!(fp_add(1.0, exp2i(-4), Format::Q43).unwrap(), 1.0);
    }

    #[test]
    fn fp_op_trivial_cases() {
        assert_eq!(fp_add(1.0, 1.0, Format::Q43).unwrap(), 2.0);
        let a = 1.2345678901234567;
        let b = -9.876543210987654;
        assert_eq!(fp_mul(a, b, Format::Double).unwrap(), a * b);
        assert_eq!(
            fp_div(1.0, 0.0, Format::Half),
            Err(FpError::DivisionByZero(Format::Half))
        );
    }

    #[test]
    fn overflow_detection() {
        assert_eq!(round_to(250.0, Format::Q43), Err(FpError::Overflow(Format::Q43)));
        // 244 rounds down to 240: still in range
        assert_eq!(round_to(244.0, Format::Q43).unwrap(), 240.0);
        assert_eq!(round_to(7e4, Format::Half), Err(FpError::Overflow(Format::Half)));
        assert_eq!(round_to(1e39, Format::Single), Err(FpError::Overflow(Format::Single)));
        assert!(round_to(f64::INFINITY, Format::Double).is_err());
    }

    #[test]
    fn gradual_underflow() {
        // smallest q43 subnormal is 2^-9
        let tiny = exp2i(-9);
        assert_eq!(round_to(tiny, Format::Q43).unwrap(), tiny);
        // 2^-10 is an exact tie between 0 and 2^-9; zero is the even side
        assert_eq!(round_to(tiny / 2.0, Format::Q43).unwrap(), 0.0);
        assert_eq!(round_to(tiny * 0.75, Format::Q43).unwrap(), tiny);
        assert_eq!(round_to(tiny / 4.0, Format::Q43).unwrap(), 0.0);
        // subnormal spacing: 3/8 * 2^-6 representable
        let sub = 3.0 / 8.0 * exp2i(-6);
        assert_eq!(round_to(sub, Format::Q43).unwrap(), sub);
    }

    #[test]
    fn q43_rounding_matches_grid_oracle() {
        // deterministic sweep over magnitudes covering subnormal, normal
        // and near-overflow ranges
        let mut x = 1.1e-3;
        while x < 230.0 {
            for s in [x, -x] {
                let got = round_to(s, Format::Q43).unwrap();
                let want = q43_nearest_oracle(s).unwrap();
                assert_eq!(got, want, "x = {s:e}");
            }
            x *= 1.37;
        }
    }

    #[test]
    fn half_and_single_match_native_casts() {
        // native casts are round-to-nearest-even; spot-check agreement on
        // a sweep (native f32 cast is exactly our single-precision model)
        let mut x = 1.234e-30f64;
        while x < 1e30 {
            let ours = round_to(x, Format::Single).unwrap();
            assert_eq!(ours, (x as f32) as f64, "x = {x:e}");
            x *= 9.73;
        }
    }

    proptest! {
        #[test]
        fn standard_model_bound(x in -1e2f64..1e2, fmt_idx in 0usize..4) {
            let fmt = Format::ALL[fmt_idx];
            prop_assume!(x.abs() >= fmt.min_normal());
            let r = round_to(x, fmt).unwrap();
            prop_assert!((r - x).abs() <= fmt.unit_roundoff() * x.abs());
        }

        #[test]
        fn idempotent(x in -2e2f64..2e2, fmt_idx in 0usize..4) {
            let fmt = Format::ALL[fmt_idx];
            if let Ok(r) = round_to(x, fmt) {
                prop_assert_eq!(round_to(r, fmt).unwrap(), r);
            }
        }

        #[test]
        fn monotone(x in -2e2f64..2e2, y in -2e2f64..2e2, fmt_idx in 0usize..4) {
            let fmt = Format::ALL[fmt_idx];
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            if let (Ok(rl), Ok(rh)) = (round_to(lo, fmt), round_to(hi, fmt)) {
                prop_assert!(rl <= rh);
            }
        }

        #[test]
        fn double_is_identity(x in proptest::num::f64::NORMAL) {
            prop_assert_eq!(round_to(x, Format::Double).unwrap(), x);
        }
    }
}
