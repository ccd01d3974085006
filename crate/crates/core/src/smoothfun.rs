//! Smoothed truncated exponential, the smoothed indicator and the explicit
//! solution of the Stein equation `f'(w) - w f(w) = h(w) - E h(Z)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{self, cdf_unchecked, mills_ratio, pdf_unchecked, tail_unchecked};

/// `Ψ_{β,t}`: `e^{tw} + 1` up to the knee `β`, then reflected so that it
/// saturates at `2e^{tβ} + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothedExp {
    beta: f64,
    t: f64,
}

impl SmoothedExp {
    pub fn new(beta: f64, t: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite() && t >= 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!("need finite beta, t >= 0; got beta={beta}, t={t}")));
        }
        Ok(Self { beta, t })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// Supremum of Ψ over the real line.
    pub fn upper(&self) -> f64 {
        2.0 * (self.t * self.beta).exp() + 1.0
    }

    pub fn psi(&self, w: f64) -> f64 {
        let (b, t) = (self.beta, self.t);
        if w <= b {
            (t * w).exp() + 1.0
        } else {
            2.0 * (t * b).exp() - (t * (2.0 * b - w)).exp() + 1.0
        }
    }

    /// ∂Ψ/∂w.
    pub fn psi_dw(&self, w: f64) -> f64 {
        let (b, t) = (self.beta, self.t);
        if w <= b {
            t * (t * w).exp()
        } else {
            t * (t * (2.0 * b - w)).exp()
        }
    }

    /// ∂²Ψ/∂w²; not defined at the knee `w = β`.
    pub fn psi_dww(&self, w: f64) -> Option<f64> {
        let (b, t) = (self.beta, self.t);
        if w < b {
            Some(t * t * (t * w).exp())
        } else if w > b {
            Some(-t * t * (t * (2.0 * b - w)).exp())
        } else {
            None
        }
    }

    /// ∂Ψ/∂t.
    pub fn psi_dt(&self, w: f64) -> f64 {
        let (b, t) = (self.beta, self.t);
        if w <= b {
            w * (t * w).exp()
        } else {
            2.0 * b * (t * b).exp() - (2.0 * b - w) * (t * (2.0 * b - w)).exp()
        }
    }
}

/// Smoothed indicator `h_{z,ε}`: 1 on `(-∞, z]`, 0 on `(z+ε, ∞)`, linear between.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteinTestFn {
    z: f64,
    eps: f64,
}

impl SteinTestFn {
    pub fn new(z: f64, eps: f64) -> Result<Self> {
        if !(z.is_finite() && eps > 0.0 && eps.is_finite()) {
            return Err(Error::Domain(format!("need finite z and eps > 0; got z={z}, eps={eps}")));
        }
        Ok(Self { z, eps })
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn eval(&self, w: f64) -> f64 {
        if w <= self.z {
            1.0
        } else if w > self.z + self.eps {
            0.0
        } else {
            1.0 + (self.z - w) / self.eps
        }
    }

    /// Derivative away from the two kinks.
    pub fn deriv(&self, w: f64) -> f64 {
        if w > self.z && w <= self.z + self.eps {
            -1.0 / self.eps
        } else {
            0.0
        }
    }
}

/// `υ(w) = ∫_0^w s φ(z + ε - εs) ds`.
pub fn upsilon(z: f64, eps: f64, w: f64) -> f64 {
    let c = z + eps;
    if eps * c.abs().max(1.0) * w.abs().max(1.0) <= 0.5 {
        upsilon_series(c, eps, w)
    } else {
        upsilon_closed(c, eps, w)
    }
}

/// Taylor expansion of φ(c - εs) in ε:
/// `υ(w) = φ(c) Σ_k He_k(c) ε^k w^{k+2} / (k! (k+2))`.
fn upsilon_series(c: f64, eps: f64, w: f64) -> f64 {
    let mut he_prev = 1.0; // He_0
    let mut he = c; // He_1
    let mut scale = w * w; // ε^k w^{k+2} / k!
    let mut sum = scale / 2.0;
    for k in 1..200 {
        scale *= eps * w / k as f64;
        let term = he * scale / (k + 2) as f64;
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() && k > 2 {
            break;
        }
        let next = c * he - k as f64 * he_prev;
        he_prev = he;
        he = next;
    }
    pdf_unchecked(c) * sum
}

/// `ε^{-2} [c (Φ(c) - Φ(a)) - (φ(a) - φ(c))]` with `a = c - εw`.
fn upsilon_closed(c: f64, eps: f64, w: f64) -> f64 {
    let a = c - eps * w;
    let prob = if a <= c { gauss::interval_prob(a, c) } else { -gauss::interval_prob(c, a) };
    (c * prob - (pdf_unchecked(a) - pdf_unchecked(c))) / (eps * eps)
}

/// `N h_{z,ε} = E h_{z,ε}(Z) = Φ(z) + ε υ(1)`.
pub fn nh(z: f64, eps: f64) -> Result<f64> {
    check_z_eps(z, eps)?;
    Ok(cdf_unchecked(z) + eps * upsilon(z, eps, 1.0))
}

/// `1 - N h_{z,ε}`, without cancellation for large `z`.
pub fn nh_complement(z: f64, eps: f64) -> Result<f64> {
    check_z_eps(z, eps)?;
    Ok(tail_unchecked(z) - eps * upsilon(z, eps, 1.0))
}

fn check_z_eps(z: f64, eps: f64) -> Result<()> {
    if !(z.is_finite() && eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!("need finite z and eps > 0; got z={z}, eps={eps}")));
    }
    Ok(())
}

/// Bounded solution `f_{z,ε}` of the Stein equation for `h_{z,ε}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteinSolution {
    h: SteinTestFn,
    nh: f64,
    nh_c: f64,
}

impl SteinSolution {
    pub fn new(z: f64, eps: f64) -> Result<Self> {
        let h = SteinTestFn::new(z, eps)?;
        Ok(Self { h, nh: nh(z, eps)?, nh_c: nh_complement(z, eps)? })
    }

    pub fn test_fn(&self) -> SteinTestFn {
        self.h
    }

    pub fn nh(&self) -> f64 {
        self.nh
    }

    fn middle_correction(&self, w: f64) -> f64 {
        let (z, eps) = (self.h.z, self.h.eps);
        eps * upsilon(z, eps, 1.0 + (z - w) / eps) / pdf_unchecked(w)
    }

    pub fn f(&self, w: f64) -> f64 {
        let (z, eps) = (self.h.z, self.h.eps);
        if w <= z {
            mills_ratio(-w) * self.nh_c
        } else if w <= z + eps {
            mills_ratio(w) * self.nh - self.middle_correction(w)
        } else {
            mills_ratio(w) * self.nh
        }
    }

    /// `f'(w) = w f(w) + h(w) - N h`.
    pub fn f_prime(&self, w: f64) -> f64 {
        w * self.f(w) + self.h.eval(w) - self.nh
    }

    /// Derivative of `g(w) = w f(w)`.
    pub fn g_prime(&self, w: f64) -> f64 {
        let (z, eps) = (self.h.z, self.h.eps);
        let q = 1.0 + w * w;
        if w <= z {
            (q * mills_ratio(-w) + w) * self.nh_c
        } else if w <= z + eps {
            (q * mills_ratio(w) - w) * self.nh - q * self.middle_correction(w) + w * (z - w + eps) / eps
        } else {
            (q * mills_ratio(w) - w) * self.nh
        }
    }
}
