//! Standard normal density, distribution and upper tail.
//!
//! The upper tail is evaluated without forming `1 - cdf`: a positive-term
//! series covers the centre and a continued fraction for the Mills ratio
//! covers the tails, so relative accuracy holds far into the tail where the
//! moderate-deviation ratios divide by `1 - Φ(z)`.

use crate::error::{Error, Result};

/// `1 / sqrt(2π)`.
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_677_94;

/// Below this the series for `Φ(x) - 1/2` is used, above it the continued fraction.
const SERIES_CUTOFF: f64 = 2.5;

fn check_finite(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Domain(format!("non-finite argument {x}")))
    }
}

/// `exp(-x²/2)` with the square split into an exactly representable head and
/// a small tail so the exponent does not pick up the rounding error of `x*x`.
fn exp_neg_half_sq(x: f64) -> f64 {
    let x = x.abs();
    let head = (x * 64.0).trunc() / 64.0;
    let tail = x - head;
    (-0.5 * head * head).exp() * (-0.5 * tail * (x + head)).exp()
}

/// Density φ(x), assuming `x` is finite.
#[inline]
pub fn pdf_unchecked(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * exp_neg_half_sq(x)
}

/// Density φ(x).
pub fn pdf(x: f64) -> Result<f64> {
    check_finite(x).map(pdf_unchecked)
}

/// `Φ(x) - 1/2 = φ(x) Σ x^{2k+1} / (2k+1)!!` for moderate `x >= 0`.
fn central_half(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut k = 1.0;
    while term > sum * 1e-18 {
        term *= x2 / (2.0 * k + 1.0);
        sum += term;
        k += 1.0;
    }
    pdf_unchecked(x) * sum
}

/// Mills ratio `(1 - Φ(x)) / φ(x)` for `x >= SERIES_CUTOFF`, by the modified
/// Lentz evaluation of `1/(x + 1/(x + 2/(x + 3/(x + ...))))`.
fn mills_cf(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..5000 {
        let a = k as f64;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// Upper tail for a finite `x`.
pub fn tail_unchecked(x: f64) -> f64 {
    if x < 0.0 {
        return 1.0 - tail_unchecked(-x);
    }
    if x < SERIES_CUTOFF {
        0.5 - central_half(x)
    } else {
        mills_cf(x) * pdf_unchecked(x)
    }
}

/// Upper tail `1 - Φ(x)`.
pub fn tail(x: f64) -> Result<f64> {
    check_finite(x).map(tail_unchecked)
}

/// Distribution function Φ(x).
pub fn cdf(x: f64) -> Result<f64> {
    check_finite(x).map(|x| tail_unchecked(-x))
}

/// Φ(x) for a finite `x`.
#[inline]
pub fn cdf_unchecked(x: f64) -> f64 {
    tail_unchecked(-x)
}

/// Mills ratio `(1 - Φ(x)) / φ(x)`, finite for every real `x`.
///
/// For very negative `x` this grows like `sqrt(2π) e^{x²/2}` and overflows to
/// infinity only where the true value does.
pub fn mills_ratio(x: f64) -> f64 {
    if x >= SERIES_CUTOFF {
        mills_cf(x)
    } else if x >= 0.0 {
        (0.5 - central_half(x)) / pdf_unchecked(x)
    } else {
        let p = pdf_unchecked(x);
        if p == 0.0 {
            f64::INFINITY
        } else {
            (1.0 - tail_unchecked(-x)) / p
        }
    }
}

/// Probability `Φ(b) - Φ(a)` for `a <= b`, formed from tails on the side
/// where they are small.
pub fn interval_prob(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        tail_unchecked(a) - tail_unchecked(b)
    } else if b <= 0.0 {
        tail_unchecked(-b) - tail_unchecked(-a)
    } else {
        1.0 - tail_unchecked(-a) - tail_unchecked(b)
    }
}

/// The classical bracket `φ(x)/(1+x) <= 1 - Φ(x) <= φ(x)/x`, for `x >= 1`.
pub fn mills_bracket(x: f64) -> Result<(f64, f64)> {
    let x = check_finite(x)?;
    if x < 1.0 {
        return Err(Error::Domain(format!("mills bracket needs x >= 1, got {x}")));
    }
    let p = pdf_unchecked(x);
    Ok((p / (1.0 + x), p / x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;

    // Reference values from a 40-digit erfc evaluation.
    const TAIL_REF: &[(f64, f64)] = &[
        (0.5, 0.308_537_538_725_986_9),
        (1.0, 0.158_655_253_931_457_05),
        (2.0, 0.022_750_131_948_179_207),
        (3.0, 0.001_349_898_031_630_094_5),
        (5.0, 2.866_515_718_791_939e-7),
        (8.0, 6.220_960_574_271_784e-16),
        (10.0, 7.619_853_024_160_526e-24),
        (20.0, 2.753_624_118_606_233_7e-89),
        (30.0, 4.906_713_927_148_187e-198),
        (37.0, 5.725_571_222_524_577e-300),
        (-1.0, 0.841_344_746_068_542_9),
        (-3.0, 0.998_650_101_968_369_9),
    ];

    #[test]
    fn pdf_values() {
        assert_eq!(pdf(0.0).unwrap(), FRAC_1_SQRT_2PI);
        assert!((pdf(1.0).unwrap() - 0.241_970_724_519_143).abs() < 1e-15);
        for x in [0.3, 1.7, 5.0, 12.0] {
            assert_eq!(pdf(x).unwrap(), pdf(-x).unwrap());
        }
        assert!(pdf(f64::NAN).is_err());
        assert!(pdf(f64::INFINITY).is_err());
    }

    #[test]
    fn tail_matches_reference() {
        assert_eq!(tail(0.0).unwrap(), 0.5);
        for &(x, want) in TAIL_REF {
            let got = tail(x).unwrap();
            assert!(((got - want) / want).abs() < 1e-12, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn tail_matches_quadrature() {
        for x in [0.25, 1.0, 2.4, 2.6, 4.0, 8.0] {
            let q = integrate(pdf_unchecked, x, x + 40.0, 1e-14 * tail_unchecked(x));
            let got = tail_unchecked(x);
            assert!(((got - q) / q).abs() < 1e-11, "x={x}: {got} vs {q}");
        }
    }

    #[test]
    fn tail_at_eight_against_asymptotic_series() {
        // φ(x)/x Σ (-1)^k (2k-1)!! / x^{2k}, truncated near its smallest term.
        let x: f64 = 8.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..30 {
            term *= -((2 * k - 1) as f64) / (x * x);
            sum += term;
        }
        let asym = pdf_unchecked(x) / x * sum;
        assert!((tail_unchecked(x) - asym).abs() < 1e-20);
        assert!(((tail_unchecked(x) - 6.22096e-16) / 6.22096e-16).abs() < 1e-4);
    }

    #[test]
    fn cdf_plus_tail_is_one() {
        let mut x = -38.0;
        while x <= 38.0 {
            let s = cdf(x).unwrap() + tail(x).unwrap();
            assert!((s - 1.0).abs() <= 1e-14, "x={x}: {s}");
            x += 0.01;
        }
    }

    #[test]
    fn pdf_integrates_to_one() {
        let total = integrate(pdf_unchecked, -12.0, 12.0, 1e-14);
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bracket_encloses_tail() {
        let (lo, hi) = mills_bracket(1.0).unwrap();
        assert!((lo - 0.120_985).abs() < 1e-6 && (hi - 0.241_971).abs() < 1e-6);
        let mut x = 1.0;
        while x < 38.0 {
            let (lo, hi) = mills_bracket(x).unwrap();
            let t = tail_unchecked(x);
            assert!(lo < t && t < hi, "x={x}");
            x += 0.05;
        }
        let (lo, hi) = mills_bracket(30.0).unwrap();
        assert!(hi / lo < 1.05);
        assert!(mills_bracket(0.5).is_err());
    }

    #[test]
    fn mills_ratio_is_continuous_across_branches() {
        for x in [-2.5, 0.0, SERIES_CUTOFF] {
            let a = mills_ratio(x - 1e-9);
            let b = mills_ratio(x + 1e-9);
            assert!(((a - b) / a).abs() < 1e-8, "x={x}");
        }
        assert!(mills_ratio(-30.0).is_finite());
        assert_eq!(mills_ratio(-40.0), f64::INFINITY);
    }

    #[test]
    fn interval_prob_matches_differences() {
        assert!((interval_prob(-1.0, 1.0) - 0.682_689_492_137_085_9).abs() < 1e-15);
        let p = interval_prob(8.0, 9.0);
        assert!(((p - (tail_unchecked(8.0) - tail_unchecked(9.0))) / p).abs() < 1e-14);
    }
}
