//! Bound calculators: the general moderate-deviation bound under condition
//! (A1), its specializations to locally dependent fields and to the
//! combinatorial CLT, and Heinrich's comparator for m-dependent sums.
//!
//! The theorems hold with unspecified absolute constants. Every calculator
//! takes them as explicit arguments (`c_abs` for the multiplier, `c_range`
//! for the range), so outputs describe scaling shape only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralParams {
    pub r: [f64; 5],
    pub tau: [f64; 5],
    pub m0: f64,
    pub rho: f64,
    /// Stand-in for the absolute constant `C`.
    pub c_abs: f64,
}

impl GeneralParams {
    pub fn new(r: [f64; 5], tau: [f64; 5], m0: f64, rho: f64, c_abs: f64) -> Result<Self> {
        let p = Self { r, tau, m0, rho, c_abs };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !self.r.iter().chain(&self.tau).all(|&v| nonneg(v)) || !nonneg(self.rho) {
            return Err(Error::Domain("r_j, tau_j and rho must be finite and non-negative".into()));
        }
        if !(self.m0.is_finite() && self.m0 > 0.0) || !(self.c_abs.is_finite() && self.c_abs > 0.0) {
            return Err(Error::Domain("m0 and the constant C must be finite and positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    General,
    Local,
    Comb,
    Heinrich,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEnvelope {
    pub z: f64,
    pub envelope: f64,
    pub in_range: bool,
    pub theorem: Theorem,
    /// Upper end of the z-range on which the bound is asserted.
    pub range_upper: f64,
    /// `δ_n` (application theorems) or `δ(z)` (general bound).
    pub delta: f64,
}

fn check_z(z: f64) -> Result<()> {
    if z.is_finite() && z >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("z must be finite and non-negative, got {z}")))
    }
}

fn check_at_least_one(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be >= 1, got {v}")))
    }
}

fn check_constants(c_abs: f64, c_range: f64) -> Result<()> {
    if c_abs > 0.0 && c_range > 0.0 && c_abs.is_finite() && c_range.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain("constants C and c must be finite and positive".into()))
    }
}

/// `τ = max{τ₀+1, τ₁+2, τ₂+3, τ₃+1, τ₄+1}`.
pub fn tau_of(p: &GeneralParams) -> f64 {
    let t = &p.tau;
    (t[0] + 1.0).max(t[1] + 2.0).max(t[2] + 3.0).max(t[3] + 1.0).max(t[4] + 1.0)
}

/// `z₀ = min{m₀, 0.02 e^{-τ/2} (r₀^{1/(τ₀+1)} + r₁^{1/(τ₁+2)} + r₂^{1/(τ₂+3)})^{-1}}`.
pub fn z0_of(p: &GeneralParams) -> f64 {
    let roots = p.r[0].powf(1.0 / (p.tau[0] + 1.0)) + p.r[1].powf(1.0 / (p.tau[1] + 2.0)) + p.r[2].powf(1.0 / (p.tau[2] + 3.0));
    if roots == 0.0 {
        return p.m0;
    }
    p.m0.min(0.02 * (-tau_of(p) / 2.0).exp() / roots)
}

/// `δ(z) = r₀(1+z^{τ₀+1}) + r₁(1+z^{τ₁+2}) + r₂(1+z^{τ₂+3}) + r₃(1+z^{τ₃+1}) + √r₄(1+z^{τ₄+1})`.
pub fn delta_of(p: &GeneralParams, z: f64) -> Result<f64> {
    check_z(z)?;
    let (r, t) = (&p.r, &p.tau);
    Ok(r[0] * (1.0 + z.powf(t[0] + 1.0))
        + r[1] * (1.0 + z.powf(t[1] + 2.0))
        + r[2] * (1.0 + z.powf(t[2] + 3.0))
        + r[3] * (1.0 + z.powf(t[3] + 1.0))
        + r[4].sqrt() * (1.0 + z.powf(t[4] + 1.0)))
}

/// `(4/δ(m₀) + C (150^τ + ρ) e^{τ²/2}) δ(z)`, asserted for `0 ≤ z ≤ z₀`.
/// With every `r_j = 0` the envelope is `0`.
pub fn general_bound(p: &GeneralParams, z: f64) -> Result<BoundEnvelope> {
    p.validate()?;
    let dz = delta_of(p, z)?;
    let z0 = z0_of(p);
    let envelope = if p.r.iter().all(|&r| r == 0.0) {
        0.0
    } else {
        let dm = delta_of(p, p.m0)?;
        if dm <= 0.0 {
            return Err(Error::Degenerate("δ(m0) = 0".into()));
        }
        let tau = tau_of(p);
        (4.0 / dm + p.c_abs * (150f64.powf(tau) + p.rho) * (tau * tau / 2.0).exp()) * dz
    };
    Ok(BoundEnvelope { z, envelope, in_range: z <= z0, theorem: Theorem::General, range_upper: z0, delta: dz })
}

/// When `z₀ ≥ 8`, whether `max{r₀, r₁, r₂} ≤ 0.02 e^{-τ/2}`; `None` otherwise.
pub fn z0_diagnostic(p: &GeneralParams) -> Option<bool> {
    (z0_of(p) >= 8.0).then(|| p.r[0].max(p.r[1]).max(p.r[2]) <= 0.02 * (-tau_of(p) / 2.0).exp())
}

/// Locally dependent fields: `δ_n = κ² a_n^{-1} (1 + θ_n⁶)`, `θ_n = √(b n)/a_n`,
/// range `z ≤ c a_n^{1/3} min{1, κ^{-1/3} (1+θ_n)^{-2/3}}`.
pub fn theorem21_bound(kappa: f64, a_n: f64, b: f64, n: f64, z: f64, c_abs: f64, c_range: f64) -> Result<BoundEnvelope> {
    check_z(z)?;
    check_at_least_one("kappa", kappa)?;
    check_at_least_one("a_n", a_n)?;
    check_at_least_one("b", b)?;
    check_at_least_one("n", n)?;
    check_constants(c_abs, c_range)?;
    let theta = (b * n).sqrt() / a_n;
    let delta = kappa * kappa / a_n * (1.0 + theta.powi(6));
    let range_upper = c_range * a_n.cbrt() * 1f64.min(kappa.cbrt().recip() * (1.0 + theta).powf(-2.0 / 3.0));
    Ok(BoundEnvelope {
        z,
        envelope: c_abs * delta * (1.0 + z.powi(3)),
        in_range: z <= range_upper,
        theorem: Theorem::Local,
        range_upper,
        delta,
    })
}

/// Combinatorial CLT: `δ_n = b² (α_n^{-1} + n^{-1/2}) (θ_n^{-2} + θ_n⁶)`,
/// `θ_n = √n/α_n`, range `z ≤ c α_n^{1/3} min{1, b^{-1} (θ_n^{-1/2} + θ_n)^{-1}}`.
pub fn theorem41_bound(alpha_n: f64, b: f64, n: f64, z: f64, c_abs: f64, c_range: f64) -> Result<BoundEnvelope> {
    check_z(z)?;
    check_at_least_one("alpha_n", alpha_n)?;
    check_at_least_one("b", b)?;
    check_at_least_one("n", n)?;
    check_constants(c_abs, c_range)?;
    let theta = n.sqrt() / alpha_n;
    let delta = b * b * (1.0 / alpha_n + 1.0 / n.sqrt()) * (theta.powi(-2) + theta.powi(6));
    let range_upper = c_range * alpha_n.cbrt() * 1f64.min(1.0 / (b * (theta.powf(-0.5) + theta)));
    Ok(BoundEnvelope {
        z,
        envelope: c_abs * delta * (1.0 + z.powi(3)),
        in_range: z <= range_upper,
        theorem: Theorem::Comb,
        range_upper,
        delta,
    })
}

/// Heinrich's bound for m-dependent sums: `C n a_n^{-3} (1 + z³)` for
/// `0 ≤ z ≤ c a_n n^{-1/3}`.
pub fn heinrich_bound(n: f64, a_n: f64, z: f64, c_abs: f64, c_range: f64) -> Result<BoundEnvelope> {
    check_z(z)?;
    check_at_least_one("n", n)?;
    check_at_least_one("a_n", a_n)?;
    check_constants(c_abs, c_range)?;
    let delta = n / a_n.powi(3);
    let range_upper = c_range * a_n / n.cbrt();
    Ok(BoundEnvelope {
        z,
        envelope: c_abs * delta * (1.0 + z.powi(3)),
        in_range: z <= range_upper,
        theorem: Theorem::Heinrich,
        range_upper,
        delta,
    })
}

/// (A1) constants for locally dependent fields with every unspecified
/// constant set to 1 (shape only).
pub fn preset_local(kappa: f64, a_n: f64, b: f64, n: f64, c_abs: f64) -> Result<GeneralParams> {
    check_at_least_one("kappa", kappa)?;
    check_at_least_one("a_n", a_n)?;
    check_at_least_one("b", b)?;
    check_at_least_one("n", n)?;
    let th = (b * n).sqrt() / a_n;
    let q = (kappa * th * th + 1.0).powi(2);
    GeneralParams::new(
        [0.0, kappa * th * (th + 1.0) / a_n, th * th / a_n, q / a_n, q / (a_n * a_n)],
        [0.0, 1.0, 0.0, 2.0, 2.0],
        (a_n.cbrt() / 4.0).min(a_n / 16.0),
        th * th,
        c_abs,
    )
}

/// (A1) constants for the combinatorial CLT with every unspecified constant
/// set to 1 (shape only).
pub fn preset_comb(alpha_n: f64, b: f64, n: f64, c_abs: f64) -> Result<GeneralParams> {
    check_at_least_one("alpha_n", alpha_n)?;
    check_at_least_one("b", b)?;
    check_at_least_one("n", n)?;
    let th = n.sqrt() / alpha_n;
    let q = 2.0 * b * b * (th * th + 1.0).powi(2);
    GeneralParams::new(
        [b / alpha_n, b * ((th * th + th) / alpha_n + 1.0 / n.sqrt()), b * th * th / alpha_n, q / alpha_n, q / (alpha_n * alpha_n)],
        [0.0, 0.0, 0.0, 2.0, 2.0],
        alpha_n.cbrt() / 64.0,
        b * th * th,
        c_abs,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(r: [f64; 5], tau: [f64; 5], m0: f64) -> GeneralParams {
        GeneralParams::new(r, tau, m0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn tau_examples() {
        assert_eq!(tau_of(&params([0.0; 5], [0.0; 5], 1.0)), 3.0);
        assert_eq!(tau_of(&params([0.0; 5], [0.0, 5.0, 0.0, 0.0, 0.0], 1.0)), 7.0);
        assert_eq!(tau_of(&params([0.0; 5], [0.0, 1.0, 0.0, 2.0, 2.0], 1.0)), 3.0);
        let local = preset_local(1.0, 10.0, 1.0, 100.0, 1.0).unwrap();
        assert_eq!(tau_of(&local), 3.0);
        let comb = preset_comb(8.0, 2.0, 64.0, 1.0).unwrap();
        assert_eq!(tau_of(&comb), 3.0);
    }

    #[test]
    fn z0_examples() {
        assert_eq!(z0_of(&params([0.0, 0.0, 0.0, 1.0, 1.0], [0.0; 5], 2.5)), 2.5);
        let p = params([1e-6, 1e-6, 1e-6, 0.0, 0.0], [0.0; 5], 100.0);
        let want = 0.02 * (-1.5f64).exp() / (1e-6 + 1e-3 + 1e-2);
        assert!((z0_of(&p) - want).abs() < 1e-15);
        assert!((z0_of(&p) - 0.405654322604181).abs() < 1e-12);
        let cross = params([1e-6, 1e-6, 1e-6, 0.0, 0.0], [0.0; 5], want);
        assert!((z0_of(&cross) - want).abs() < 1e-15);
    }

    #[test]
    fn delta_examples() {
        let p = params([1.0; 5], [0.0; 5], 1.0);
        assert_eq!(delta_of(&p, 1.0).unwrap(), 10.0);
        let p = params([0.1, 0.2, 0.3, 0.4, 0.25], [0.0, 1.0, 0.0, 2.0, 2.0], 1.0);
        assert!((delta_of(&p, 0.0).unwrap() - (0.1 + 0.2 + 0.3 + 0.4 + 0.5)).abs() < 1e-15);
        assert!(delta_of(&p, -1.0).is_err());
    }

    #[test]
    fn general_bound_examples() {
        let zero = params([0.0; 5], [0.0; 5], 1.0);
        let b = general_bound(&zero, 0.5).unwrap();
        assert_eq!(b.envelope, 0.0);
        assert!(b.in_range);
        let p = params([1e-3, 1e-3, 1e-3, 1e-3, 1e-6], [0.0; 5], 1.0);
        let b = general_bound(&p, 0.1).unwrap();
        let dm = delta_of(&p, 1.0).unwrap();
        let pre = 4.0 / dm + 150f64.powi(3) * 4.5f64.exp();
        assert!((b.envelope - pre * delta_of(&p, 0.1).unwrap()).abs() < 1e-9 * b.envelope);
        assert_eq!(b.range_upper, z0_of(&p));
    }

    #[test]
    fn z0_flag_when_large() {
        let p = params([1e-12; 5], [0.0; 5], 50.0);
        assert!(z0_of(&p) >= 8.0);
        assert_eq!(z0_diagnostic(&p), Some(true));
        let p = params([0.1; 5], [0.0; 5], 50.0);
        assert_eq!(z0_diagnostic(&p), None);
    }

    #[test]
    fn theorem21_examples() {
        let e = std::f64::consts::E;
        let b = theorem21_bound(1.0, 100.0, e, 1e4, 0.0, 1.0, 1.0).unwrap();
        assert!((b.envelope - (1.0 + e.powi(3)) / 100.0).abs() < 1e-15);
        assert!((b.envelope - 0.210855369231877).abs() < 1e-12);
        assert!(b.in_range);
        assert!(!theorem21_bound(1.0, 100.0, e, 1e4, 1e3, 1.0, 1.0).unwrap().in_range);
        assert!(theorem21_bound(1.0, 100.0, e, 1e4, -1.0, 1.0, 1.0).is_err());
        // Range grows like n^{1/6} in the i.i.d. case.
        let r1 = theorem21_bound(1.0, 1e2, 2.0, 1e4, 0.0, 1.0, 1.0).unwrap().range_upper;
        let r2 = theorem21_bound(1.0, 1e3, 2.0, 1e6, 0.0, 1.0, 1.0).unwrap().range_upper;
        assert!(((r2 / r1).ln() / 100f64.ln() - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn theorem21_iid_slope() {
        let env = |n: f64| theorem21_bound(1.0, n.sqrt(), 2.0, n, 1.5, 1.0, 1.0).unwrap().envelope;
        for (a, b) in [(64.0, 256.0), (100.0, 1e6), (16.0, 1e4)] {
            let slope = (env(b) / env(a)).ln() / (b / a).ln();
            assert!((slope + 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn theorem41_examples() {
        for n in [16.0f64, 64.0, 1024.0] {
            let b = 1.7;
            let e = theorem41_bound(n.sqrt(), b, n, 0.0, 1.0, 1.0).unwrap();
            assert!((e.delta - 4.0 * b * b / n.sqrt()).abs() < 1e-12);
        }
        let env = |n: f64| theorem41_bound(n.sqrt(), 1.5, n, 0.7, 1.0, 1.0).unwrap().envelope;
        assert!(((env(1e4) / env(1e2)).ln() / 100f64.ln() + 0.5).abs() < 1e-12);
        assert!(!theorem41_bound(8.0, 1.0, 64.0, 50.0, 1.0, 1.0).unwrap().in_range);
        assert!(theorem41_bound(0.5, 1.0, 64.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn heinrich_examples() {
        let h = heinrich_bound(1e4, 100.0, 0.0, 1.0, 1.0).unwrap();
        assert!((h.envelope - 1e4 / 1e6).abs() < 1e-18);
        let n: f64 = 4096.0;
        let h = heinrich_bound(n, n.sqrt(), 1.0, 1.0, 1.0).unwrap();
        assert!((h.envelope - 2.0 / n.sqrt()).abs() < 1e-15);
        assert!((h.range_upper - n.powf(1.0 / 6.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn delta_monotone_in_z(r in proptest::array::uniform5(0.0..2.0f64), tau in proptest::array::uniform5(0.0..3.0f64), z in 0.0..5.0f64, dz in 0.0..2.0f64) {
            let p = params(r, tau, 1.0);
            prop_assert!(delta_of(&p, z + dz).unwrap() >= delta_of(&p, z).unwrap());
        }

        #[test]
        fn z0_bounded_and_decreasing(r in proptest::array::uniform5(0.0..1.0f64), tau in proptest::array::uniform5(0.0..3.0f64), m0 in 0.01..20.0f64, j in 0usize..3, bump in 0.0..1.0f64) {
            let p = params(r, tau, m0);
            prop_assert!(z0_of(&p) <= m0);
            let mut q = p;
            q.r[j] += bump;
            prop_assert!(z0_of(&q) <= z0_of(&p));
        }

        #[test]
        fn general_bound_monotone_in_r(r in proptest::array::uniform5(1e-4..1.0f64), j in 0usize..5, bump in 0.0..1.0f64, z in 0.0..1.0f64) {
            // δ(m₀) enters as 4/δ(m₀)·δ(z) ≤ 4; the C-term is monotone.
            let p = params(r, [0.0; 5], 1.0);
            let mut q = p;
            q.r[j] += bump;
            let (a, b) = (general_bound(&p, z).unwrap(), general_bound(&q, z).unwrap());
            let strip = |e: &BoundEnvelope, g: &GeneralParams| e.envelope - 4.0 / delta_of(g, 1.0).unwrap() * e.delta;
            prop_assert!(strip(&b, &q) >= strip(&a, &p) * (1.0 - 1e-12));
            prop_assert!(b.delta >= a.delta);
        }
    }
}
