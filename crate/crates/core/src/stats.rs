//! Paired significance testing for per-turn metric values.
//!
//! The two-sided paired Student t-test works on the per-turn differences of
//! two systems evaluated on the same turns. The p-value comes from the
//! regularized incomplete beta function, computed in-crate with a Lanczos
//! log-gamma approximation and Lentz's continued-fraction algorithm, so the
//! crate carries no runtime numerics dependency. Degenerate inputs follow
//! the usual conventions: identical systems give p = 1, a constant nonzero
//! difference gives an infinite t and p = 0.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Outcome of a paired t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTestResult {
    /// Test statistic; positive when the first system scores higher.
    pub t: f64,
    /// Degrees of freedom, `n - 1`.
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// Mean of the per-pair differences.
    pub mean_diff: f64,
    /// Number of pairs.
    pub n: usize,
}

/// Paired t-test between two systems' per-turn values keyed by turn.
/// Both maps must cover exactly the same turns.
pub fn paired_t_test(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Result<TTestResult> {
    for key in a.keys() {
        if !b.contains_key(key) {
            return Err(Error::InvalidArgument(format!(
                "paired t-test requires matching turns; {key:?} is only in the first system"
            )));
        }
    }
    for key in b.keys() {
        if !a.contains_key(key) {
            return Err(Error::InvalidArgument(format!(
                "paired t-test requires matching turns; {key:?} is only in the second system"
            )));
        }
    }
    let diffs: Vec<f64> = a.iter().map(|(key, &va)| va - b[key]).collect();
    paired_t_test_diffs(&diffs)
}

/// Paired t-test from precomputed per-pair differences.
pub fn paired_t_test_diffs(diffs: &[f64]) -> Result<TTestResult> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    let n_f = n as f64;
    let mean = diffs.iter().sum::<f64>() / n_f;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n_f - 1.0);
    let df = n_f - 1.0;

    // Exactly constant differences have zero variance mathematically even
    // when the accumulated `var` picks up rounding noise, so detect the
    // degenerate case on the raw values.
    let constant = diffs.iter().all(|&d| d == diffs[0]);
    if constant || var == 0.0 {
        let level = if constant { diffs[0] } else { mean };
        let t = if level == 0.0 {
            0.0
        } else if level > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        let p = if level == 0.0 { 1.0 } else { 0.0 };
        return Ok(TTestResult {
            t,
            df,
            p,
            mean_diff: if constant { diffs[0] } else { mean },
            n,
        });
    }

    let t = mean / (var.sqrt() / n_f.sqrt());
    let p = student_t_two_sided_p(t, df);
    Ok(TTestResult {
        t,
        df,
        p,
        mean_diff: mean,
        n,
    })
}

/// Two-sided p-value of a Student t statistic with `df` degrees of freedom,
/// via `P(|T| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2)`.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    if t == 0.0 {
        return 1.0;
    }
    regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Natural log of the gamma function (Lanczos approximation, g = 7).
fn ln_gamma(x: f64) -> f64 {
    // Coefficient digits as published; the extra precision rounds away.
    #[allow(clippy::excessive_precision)]
    const COEF: [f64; 9] = [
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
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return pi.ln() - (pi * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let tail = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * tail.ln() - tail + acc.ln()
}

/// Regularized incomplete beta function I_x(a, b).
fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // Use the continued fraction where it converges fastest and take the
    // complement on the other side of the split point.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta function, evaluated with
/// Lentz's algorithm.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 200;
    const EPS: f64 = 1e-14;
    const FPMIN: f64 = 1e-30;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m_f = m as f64;
        let m2 = 2.0 * m_f;
        let even = m_f * (b - m_f) * x / ((qam + m2) * (a + m2));
        d = 1.0 + even * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + even / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let odd = -(a + m_f) * (qab + m_f) * x / ((a + m2) * (qap + m2));
        d = 1.0 + odd * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + odd / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    fn keyed(values: &[(&str, f64)]) -> BTreeMap<String, f64> {
        values.iter().map(|&(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn frozen_four_pair_example() {
        let result = paired_t_test_diffs(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_relative_eq!(result.t, 3.872983346207417, epsilon = 1e-12);
        assert_eq!(result.df, 3.0);
        assert!((result.p - 0.0305).abs() < 1e-3);
        assert_relative_eq!(result.p, 0.030466291662170977, epsilon = 1e-9);
        assert_relative_eq!(result.mean_diff, 0.25, epsilon = 1e-15);
        assert_eq!(result.n, 4);
    }

    #[test]
    fn identical_systems_give_p_one() {
        let result = paired_t_test_diffs(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(result.t, 0.0);
        assert_eq!(result.p, 1.0);

        let a = keyed(&[("t1", 0.4), ("t2", 0.7)]);
        let result = paired_t_test(&a, &a.clone()).unwrap();
        assert_eq!(result.t, 0.0);
        assert_eq!(result.p, 1.0);
    }

    #[test]
    fn constant_nonzero_difference_gives_p_zero() {
        let up = paired_t_test_diffs(&[0.2, 0.2, 0.2]).unwrap();
        assert_eq!(up.t, f64::INFINITY);
        assert_eq!(up.p, 0.0);
        let down = paired_t_test_diffs(&[-0.2, -0.2, -0.2]).unwrap();
        assert_eq!(down.t, f64::NEG_INFINITY);
        assert_eq!(down.p, 0.0);
    }

    #[test]
    fn too_few_pairs_and_key_mismatch_are_errors() {
        assert!(paired_t_test_diffs(&[]).is_err());
        assert!(paired_t_test_diffs(&[0.5]).is_err());

        let a = keyed(&[("t1", 0.4), ("t2", 0.7)]);
        let b = keyed(&[("t1", 0.4), ("t3", 0.7)]);
        let err = paired_t_test(&a, &b).unwrap_err();
        assert!(err.to_string().contains("matching turns"));
    }

    #[test]
    fn keyed_test_subtracts_in_key_order() {
        let a = keyed(&[("t1", 0.5), ("t2", 0.9), ("t3", 0.4)]);
        let b = keyed(&[("t1", 0.4), ("t2", 0.7), ("t3", 0.1)]);
        let from_maps = paired_t_test(&a, &b).unwrap();
        let from_diffs = paired_t_test_diffs(&[0.1, 0.2, 0.3]).unwrap();
        assert_relative_eq!(from_maps.t, from_diffs.t, epsilon = 1e-12);
        assert_relative_eq!(from_maps.p, from_diffs.p, epsilon = 1e-12);
    }

    #[test]
    fn p_values_match_reference_distribution() {
        for (diffs, _label) in [
            (vec![0.1, 0.2, 0.3, 0.4], "small n"),
            (vec![0.05, -0.02, 0.11, 0.4, 0.07, 0.01], "mixed sign"),
            (vec![1.0, 2.0, 1.5, 1.7, 2.2, 1.9, 1.4, 2.1], "large t"),
            (vec![0.001, -0.001, 0.002, -0.003, 0.001], "near zero"),
        ] {
            let result = paired_t_test_diffs(&diffs).unwrap();
            let reference = StudentsT::new(0.0, 1.0, result.df).unwrap();
            let expected = 2.0 * (1.0 - reference.cdf(result.t.abs()));
            assert_relative_eq!(result.p, expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn incomplete_beta_identities() {
        // I_x(1, 1) is the identity function.
        for x in [0.1, 0.25, 0.5, 0.9] {
            assert_relative_eq!(regularized_incomplete_beta(1.0, 1.0, x), x, epsilon = 1e-12);
        }
        // I_x(a, b) + I_{1-x}(b, a) = 1.
        for (a, b, x) in [(0.5, 0.5, 0.3), (2.0, 5.0, 0.7), (1.5, 0.5, 0.05)] {
            let lhs = regularized_incomplete_beta(a, b, x)
                + regularized_incomplete_beta(b, a, 1.0 - x);
            assert_relative_eq!(lhs, 1.0, epsilon = 1e-12);
        }
        // I_x(1/2, 1/2) = (2/pi) asin(sqrt(x)).
        for x in [0.2f64, 0.5, 0.8] {
            let expected = 2.0 / std::f64::consts::PI * x.sqrt().asin();
            assert_relative_eq!(
                regularized_incomplete_beta(0.5, 0.5, x),
                expected,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn ln_gamma_matches_known_values() {
        assert_relative_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-13);
        assert_relative_eq!(ln_gamma(2.0), 0.0, epsilon = 1e-13);
        assert_relative_eq!(ln_gamma(5.0), 24.0f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(
            ln_gamma(0.5),
            std::f64::consts::PI.sqrt().ln(),
            epsilon = 1e-12
        );
    }

    proptest! {
        #[test]
        fn swapping_systems_negates_t_and_keeps_p(
            diffs in prop::collection::vec(-1.0f64..1.0, 2..30)
        ) {
            let negated: Vec<f64> = diffs.iter().map(|d| -d).collect();
            let fwd = paired_t_test_diffs(&diffs).unwrap();
            let rev = paired_t_test_diffs(&negated).unwrap();
            prop_assert_eq!(fwd.t.to_bits(), (-rev.t).to_bits());
            prop_assert_eq!(fwd.p.to_bits(), rev.p.to_bits());
        }

        #[test]
        fn p_is_a_probability_and_agrees_with_reference(
            diffs in prop::collection::vec(-1.0f64..1.0, 2..20)
        ) {
            let result = paired_t_test_diffs(&diffs).unwrap();
            prop_assert!((0.0..=1.0).contains(&result.p));
            if result.t.is_finite() {
                let reference = StudentsT::new(0.0, 1.0, result.df).unwrap();
                let expected = 2.0 * (1.0 - reference.cdf(result.t.abs()));
                prop_assert!((result.p - expected).abs() < 1e-9);
            }
        }
    }
}
