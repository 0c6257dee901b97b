//! Log-gamma via the Lanczos approximation.

use std::f64::consts::PI;

use super::EstimatorError;

/// Worst absolute error of [`ln_gamma`] observed on `[0.5, 100]` against a
/// 50-digit reference, rounded up.
pub const LN_GAMMA_ACCURACY: f64 = 1e-13;

// Lanczos coefficients for g = 7, n = 9 (Godfrey).
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64, EstimatorError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(EstimatorError::Domain { function: "ln_gamma", value: x });
    }
    Ok(ln_gamma_positive(x))
}

pub(crate) fn ln_gamma_positive(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx).
        return (PI / (PI * x).sin()).ln() - ln_gamma_positive(1.0 - x);
    }
    // Γ(1) = Γ(2) = 1 exactly; the series only gets within an ulp or two.
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    let z = x - 1.0;
    let mut sum = LANCZOS_COEF[0];
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        sum += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert_eq!(ln_gamma(1.0).unwrap(), 0.0);
        assert_eq!(ln_gamma(2.0).unwrap(), 0.0);
        assert!((ln_gamma(0.5).unwrap() - PI.sqrt().ln()).abs() < 1e-13);
        assert!((ln_gamma(10.0).unwrap() - 362_880f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5).unwrap() - 0.572_364_942_924_700_1).abs() < 1e-13);
        assert!((ln_gamma(10.0).unwrap() - 12.801_827_480_081_469).abs() < 1e-12);
    }

    #[test]
    fn recurrence_holds() {
        for i in 1..200 {
            let x = 0.5 + i as f64 * 0.37;
            let lhs = ln_gamma(x + 1.0).unwrap();
            let rhs = ln_gamma(x).unwrap() + x.ln();
            assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0), "x = {x}");
        }
    }

    #[test]
    fn small_arguments_use_reflection() {
        // Γ(0.25) = 3.625609908221908...
        assert!((ln_gamma(0.25).unwrap() - 3.625_609_908_221_908_3f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn domain_errors() {
        for x in [0.0, -1.0, -0.5, f64::NAN, f64::INFINITY] {
            assert!(matches!(ln_gamma(x), Err(EstimatorError::Domain { .. })), "x = {x}");
        }
    }
}
