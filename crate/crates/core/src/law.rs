//! Innovation and noise laws.
//!
//! Every law here has a closed-form moment generating function, which the
//! tilted estimator and the moment certificates rely on. Discrete laws also
//! support exact outcome enumeration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss;

/// Finite discrete law given by `(value, probability)` atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct DiscreteDistribution {
    atoms: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for DiscreteDistribution {
    type Error = Error;
    fn try_from(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(atoms)
    }
}

impl From<DiscreteDistribution> for Vec<(f64, f64)> {
    fn from(d: DiscreteDistribution) -> Self {
        d.atoms
    }
}

impl DiscreteDistribution {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidModel("discrete law needs at least one atom".into()));
        }
        let mut total = 0.0;
        for &(v, p) in &atoms {
            if !v.is_finite() || !p.is_finite() || p <= 0.0 {
                return Err(Error::InvalidModel(format!("bad atom ({v}, {p})")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!("atom probabilities sum to {total}")));
        }
        Ok(Self { atoms })
    }

    /// ±1 with probability 1/2 each.
    pub fn rademacher() -> Self {
        Self { atoms: vec![(-1.0, 0.5), (1.0, 0.5)] }
    }

    /// 0/1 with success probability `p`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidModel(format!("bernoulli p must lie in (0,1), got {p}")));
        }
        Self::new(vec![(0.0, 1.0 - p), (1.0, p)])
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(v, p)| v * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.atoms.iter().map(|&(v, p)| (v - m) * (v - m) * p).sum()
    }

    fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { atoms: self.atoms.iter().map(|&(v, p)| (f(v), p)).collect() }
    }

    fn log_mgf(&self, theta: f64) -> f64 {
        let top = self.atoms.iter().map(|&(v, _)| theta * v).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = self.atoms.iter().map(|&(v, p)| p * (theta * v - top).exp()).sum();
        top + s.ln()
    }

    /// Mean and variance under the exponentially tilted law.
    fn tilted_moments(&self, theta: f64) -> (f64, f64) {
        let top = self.atoms.iter().map(|&(v, _)| theta * v).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for &(v, p) in &self.atoms {
            let w = p * (theta * v - top).exp();
            z += w;
            m1 += w * v;
            m2 += w * v * v;
        }
        let mean = m1 / z;
        (mean, (m2 / z - mean * mean).max(0.0))
    }
}

/// A real-valued law with a closed-form MGF.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Law {
    Discrete { atoms: DiscreteDistribution },
    /// Uniform on `[-half_width, half_width]`.
    Uniform { half_width: f64 },
    Gaussian { sd: f64 },
    /// Laplace with density `exp(-|x|/scale) / (2 scale)`.
    Laplace { scale: f64 },
}

impl Law {
    pub fn rademacher() -> Self {
        Law::Discrete { atoms: DiscreteDistribution::rademacher() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Law::Discrete { .. } => true,
            Law::Uniform { half_width: s } | Law::Gaussian { sd: s } | Law::Laplace { scale: s } => {
                s.is_finite() && *s > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("invalid law parameters: {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Law::Discrete { atoms } => atoms.mean(),
            _ => 0.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Law::Discrete { atoms } => atoms.variance(),
            Law::Uniform { half_width: c } => c * c / 3.0,
            Law::Gaussian { sd } => sd * sd,
            Law::Laplace { scale } => 2.0 * scale * scale,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Law::Discrete { .. })
    }

    pub fn atoms(&self) -> Option<&[(f64, f64)]> {
        match self {
            Law::Discrete { atoms } => Some(atoms.atoms()),
            _ => None,
        }
    }

    /// The same law shifted to mean zero.
    pub fn centered(&self) -> Law {
        match self {
            Law::Discrete { atoms } => {
                let m = atoms.mean();
                Law::Discrete { atoms: atoms.map_values(|v| v - m) }
            }
            other => other.clone(),
        }
    }

    /// Law of `factor * X`; `factor` must be positive.
    pub fn scaled(&self, factor: f64) -> Law {
        match self {
            Law::Discrete { atoms } => Law::Discrete { atoms: atoms.map_values(|v| v * factor) },
            Law::Uniform { half_width } => Law::Uniform { half_width: half_width * factor },
            Law::Gaussian { sd } => Law::Gaussian { sd: sd * factor },
            Law::Laplace { scale } => Law::Laplace { scale: scale * factor },
        }
    }

    /// Centered, unit-variance version of this law.
    pub fn standardized(&self) -> Result<Law> {
        let v = self.variance();
        if !(v > 0.0) {
            return Err(Error::Degenerate(format!("law has zero variance: {self:?}")));
        }
        Ok(self.centered().scaled(1.0 / v.sqrt()))
    }

    /// `log E exp(θ X)`, or `None` where the MGF diverges.
    pub fn log_mgf(&self, theta: f64) -> Option<f64> {
        match self {
            Law::Discrete { atoms } => Some(atoms.log_mgf(theta)),
            Law::Uniform { half_width: c } => {
                let x = (c * theta).abs();
                Some(if x < 1e-4 {
                    x * x / 6.0 - x.powi(4) / 180.0
                } else {
                    x + (-(-2.0 * x).exp()).ln_1p() - (2.0 * x).ln()
                })
            }
            Law::Gaussian { sd } => Some(0.5 * sd * sd * theta * theta),
            Law::Laplace { scale } => {
                let u = scale * theta;
                (u.abs() < 1.0).then(|| -(-u * u).ln_1p())
            }
        }
    }

    /// Mean and variance of the law tilted by `exp(θx)`: the first two
    /// derivatives of the cumulant generating function.
    pub fn tilted_moments(&self, theta: f64) -> Option<(f64, f64)> {
        match self {
            Law::Discrete { atoms } => Some(atoms.tilted_moments(theta)),
            Law::Uniform { half_width: c } => {
                let x = c * theta;
                let (l, dl) = if x.abs() < 1e-3 {
                    let x2 = x * x;
                    (x / 3.0 - x * x2 / 45.0, 1.0 / 3.0 - x2 / 15.0)
                } else {
                    let s = x.sinh();
                    (1.0 / x.tanh() - 1.0 / x, 1.0 / (x * x) - 1.0 / (s * s))
                };
                Some((c * l, c * c * dl))
            }
            Law::Gaussian { sd } => Some((sd * sd * theta, sd * sd)),
            Law::Laplace { scale: b } => {
                let u = b * theta;
                if u.abs() >= 1.0 {
                    return None;
                }
                let d = 1.0 - u * u;
                Some((2.0 * b * u / d, 2.0 * b * b * (1.0 + u * u) / (d * d)))
            }
        }
    }

    /// Largest `|θ|` for which the MGF is finite.
    pub fn mgf_radius(&self) -> f64 {
        match self {
            Law::Laplace { scale } => 1.0 / scale,
            _ => f64::INFINITY,
        }
    }

    /// `E exp(a |X + shift|)` together with an exactness flag; when the flag is
    /// false the value is the upper bound `exp(a|shift|) E exp(a|X|)`.
    /// `None` when the expectation diverges.
    pub fn shifted_abs_mgf(&self, shift: f64, a: f64) -> Option<(f64, bool)> {
        match self {
            Law::Discrete { atoms } => {
                Some((atoms.atoms().iter().map(|&(v, p)| p * (a * (v + shift).abs()).exp()).sum(), true))
            }
            Law::Uniform { half_width: c } => {
                if a == 0.0 {
                    return Some((1.0, true));
                }
                // G(x) = sign(x) (e^{a|x|} - 1) / a is an antiderivative of e^{a|x|}.
                let g = |x: f64| x.signum() * (a * x.abs()).exp_m1() / a;
                Some(((g(shift + c) - g(shift - c)) / (2.0 * c), true))
            }
            Law::Gaussian { sd } => {
                if a == 0.0 {
                    return Some((1.0, true));
                }
                let r = shift / sd;
                let half = 0.5 * a * a * sd * sd;
                let v = (a * shift + half).exp() * gauss::cdf_unchecked(r + a * sd)
                    + (-a * shift + half).exp() * gauss::cdf_unchecked(-r + a * sd);
                Some((v, true))
            }
            Law::Laplace { scale } => {
                let u = a * scale;
                (u < 1.0).then(|| ((a * shift.abs()).exp() / (1.0 - u), shift == 0.0))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Sampler::new(self, 0.0).sample(rng)
    }
}

/// A law prepared for repeated draws, optionally tilted by `exp(θx)`.
#[derive(Clone, Debug)]
pub enum Sampler {
    Discrete { values: Vec<f64>, cumulative: Vec<f64> },
    Uniform { c: f64, theta: f64, shrink: f64 },
    Gaussian { mean: f64, sd: f64 },
    /// Two-sided exponential: positive side with rate `rate_pos` chosen with
    /// probability `p_pos`, negative side with rate `rate_neg`.
    TwoSidedExp { p_pos: f64, rate_pos: f64, rate_neg: f64 },
}

impl Sampler {
    /// Sampler for `law` tilted by `θ`; `θ` must lie inside the MGF radius.
    pub fn new(law: &Law, theta: f64) -> Sampler {
        match law {
            Law::Discrete { atoms } => {
                let top = atoms.atoms().iter().map(|&(v, _)| theta * v).fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = atoms.atoms().iter().map(|&(v, p)| p * (theta * v - top).exp()).collect();
                let total: f64 = weights.iter().sum();
                let mut acc = 0.0;
                let mut cumulative: Vec<f64> = weights
                    .iter()
                    .map(|w| {
                        acc += w / total;
                        acc
                    })
                    .collect();
                *cumulative.last_mut().unwrap() = 1.0;
                Sampler::Discrete { values: atoms.atoms().iter().map(|a| a.0).collect(), cumulative }
            }
            Law::Uniform { half_width: c } => {
                let x = (theta * c).abs();
                Sampler::Uniform { c: *c, theta, shrink: (-2.0 * x).exp() }
            }
            Law::Gaussian { sd } => Sampler::Gaussian { mean: sd * sd * theta, sd: *sd },
            Law::Laplace { scale } => {
                let rate_pos = 1.0 / scale - theta;
                let rate_neg = 1.0 / scale + theta;
                let p_pos = (1.0 / rate_pos) / (1.0 / rate_pos + 1.0 / rate_neg);
                Sampler::TwoSidedExp { p_pos, rate_pos, rate_neg }
            }
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Discrete { values, cumulative } => {
                let u: f64 = rng.random();
                let k = cumulative.iter().position(|&c| u < c).unwrap_or(values.len() - 1);
                values[k]
            }
            Sampler::Uniform { c, theta, shrink } => {
                let u: f64 = rng.random();
                let x = theta.abs() * c;
                if x < 1e-9 {
                    c * (2.0 * u - 1.0)
                } else {
                    // Inverse CDF of the density ∝ e^{|θ|x} on [-c, c], written
                    // relative to the upper end to avoid overflow.
                    let v = c + (u + (1.0 - u) * shrink).ln() / theta.abs();
                    v * theta.signum()
                }
            }
            Sampler::Gaussian { mean, sd } => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                mean + sd * z
            }
            Sampler::TwoSidedExp { p_pos, rate_pos, rate_neg } => {
                let u: f64 = rng.random();
                let e: f64 = rng.sample(rand_distr::Exp1);
                if u < *p_pos {
                    e / rate_pos
                } else {
                    -e / rate_neg
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn discrete_validation() {
        assert!(DiscreteDistribution::new(vec![(1.0, 0.5), (2.0, 0.4)]).is_err());
        assert!(DiscreteDistribution::new(vec![(1.0, 0.0), (2.0, 1.0)]).is_err());
        assert!(DiscreteDistribution::new(vec![]).is_err());
        let d = DiscreteDistribution::bernoulli(0.25).unwrap();
        assert!((d.mean() - 0.25).abs() < 1e-15);
        assert!((d.variance() - 0.1875).abs() < 1e-15);
    }

    #[test]
    fn serde_rejects_bad_atoms() {
        let bad: std::result::Result<DiscreteDistribution, _> = serde_json::from_str("[[1.0, 0.7]]");
        assert!(bad.is_err());
        let law: Law = serde_json::from_str(r#"{"law":"uniform","half_width":2.0}"#).unwrap();
        assert_eq!(law, Law::Uniform { half_width: 2.0 });
    }

    #[test]
    fn variances_and_standardization() {
        for law in [
            Law::rademacher(),
            Law::Uniform { half_width: 3.0 },
            Law::Gaussian { sd: 0.5 },
            Law::Laplace { scale: 2.0 },
            Law::Discrete { atoms: DiscreteDistribution::bernoulli(0.3).unwrap() },
        ] {
            let s = law.standardized().unwrap();
            assert!(s.mean().abs() < 1e-15);
            assert!((s.variance() - 1.0).abs() < 1e-14, "{law:?}");
        }
        let point = Law::Discrete { atoms: DiscreteDistribution::new(vec![(2.0, 1.0)]).unwrap() };
        assert!(point.standardized().is_err());
    }

    #[test]
    fn tilted_moments_are_cumulant_derivatives() {
        let h = 1e-5;
        for law in [
            Law::rademacher(),
            Law::Uniform { half_width: 1.7 },
            Law::Gaussian { sd: 1.3 },
            Law::Laplace { scale: 0.5 },
        ] {
            for theta in [-0.9, -0.2, 0.0, 0.3, 1.1] {
                let psi = |t: f64| law.log_mgf(t).unwrap();
                let d1 = (psi(theta + h) - psi(theta - h)) / (2.0 * h);
                let d2 = (psi(theta + h) - 2.0 * psi(theta) + psi(theta - h)) / (h * h);
                let (m, v) = law.tilted_moments(theta).unwrap();
                assert!((m - d1).abs() < 1e-7, "{law:?} θ={theta}");
                assert!((v - d2).abs() < 1e-3 * (1.0 + v), "{law:?} θ={theta}: {v} vs {d2}");
            }
        }
        assert!(Law::Laplace { scale: 1.0 }.log_mgf(1.0).is_none());
    }

    #[test]
    fn uniform_log_mgf_matches_quadrature() {
        let c = 1.5;
        let law = Law::Uniform { half_width: c };
        for theta in [1e-6, 0.01, 0.7, 5.0, 40.0] {
            let m = integrate(|x| (theta * x).exp() / (2.0 * c), -c, c, 1e-14 * (theta * c).exp());
            let got = law.log_mgf(theta).unwrap();
            assert!((got - m.ln()).abs() < 1e-12, "θ={theta}");
        }
    }

    #[test]
    fn shifted_abs_mgf_matches_quadrature() {
        let a = 1.3;
        for shift in [-0.7, 0.0, 0.4] {
            let c = 0.9;
            let (u, exact) = Law::Uniform { half_width: c }.shifted_abs_mgf(shift, a).unwrap();
            let q = integrate(|x| (a * (x + shift).abs()).exp() / (2.0 * c), -c, c, 1e-14);
            assert!(exact && (u - q).abs() < 1e-12);
            let sd = 0.8;
            let (g, _) = Law::Gaussian { sd }.shifted_abs_mgf(shift, a).unwrap();
            let q = integrate(
                |x| (a * (x + shift).abs()).exp() * gauss::pdf_unchecked(x / sd) / sd,
                -12.0,
                12.0,
                1e-14,
            );
            assert!((g - q).abs() < 1e-10);
        }
        assert!(Law::Laplace { scale: 1.0 }.shifted_abs_mgf(0.0, 2.0).is_none());
    }

    #[test]
    fn tilted_samplers_hit_tilted_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        for law in [
            Law::rademacher(),
            Law::Uniform { half_width: 1.0 },
            Law::Gaussian { sd: 1.0 },
            Law::Laplace { scale: 0.5 },
        ] {
            for theta in [-0.8, 0.0, 1.2] {
                let s = Sampler::new(&law, theta);
                let mean: f64 = (0..n).map(|_| s.sample(&mut rng)).sum::<f64>() / n as f64;
                let (m, v) = law.tilted_moments(theta).unwrap();
                assert!((mean - m).abs() < 5.0 * (v / n as f64).sqrt(), "{law:?} θ={theta}");
            }
        }
    }
}
