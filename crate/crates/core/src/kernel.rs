//! Exact piecewise-constant kernels `u ↦ K̂(u)`.
//!
//! Kernels produced by the local-dependence and permutation constructions are
//! finite sums of constants times interval indicators, so every functional
//! the moderate-deviation conditions need (`∫K̂`, `∫|u|e^{t|u|}|K̂|`,
//! `∫_{|u|≤1} e^{2t|u|}(K̂-K)²`, ...) integrates exactly piece by piece.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight `|u|^power · e^{rate·|u|}` with `power ∈ {0, 1}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weight {
    power: u8,
    rate: f64,
}

impl Weight {
    pub const ONE: Weight = Weight { power: 0, rate: 0.0 };
    pub const ABS: Weight = Weight { power: 1, rate: 0.0 };

    /// `e^{rate |u|}`.
    pub fn exp(rate: f64) -> Weight {
        Weight { power: 0, rate }
    }

    /// `|u| e^{rate |u|}`.
    pub fn abs_exp(rate: f64) -> Weight {
        Weight { power: 1, rate }
    }

    pub fn eval(&self, u: f64) -> f64 {
        let a = u.abs();
        let p = if self.power == 1 { a } else { 1.0 };
        p * (self.rate * a).exp()
    }

    /// `∫_p^q x^power e^{rate x} dx` for `0 <= p <= q`.
    fn integral_nonneg(&self, p: f64, q: f64) -> f64 {
        let s = self.rate;
        if q <= p {
            return 0.0;
        }
        match self.power {
            0 => {
                if s == 0.0 {
                    q - p
                } else {
                    (s * p).exp() * (s * (q - p)).exp_m1() / s
                }
            }
            _ => {
                if s == 0.0 {
                    0.5 * (q - p) * (q + p)
                } else if (s * q).abs() < 0.5 {
                    // Σ_j s^j/j! (q^{j+2} - p^{j+2}) / (j+2)
                    let mut sum = 0.0;
                    let mut coef = 1.0;
                    let (mut qp, mut pp) = (q * q, p * p);
                    for j in 0..40 {
                        let term = coef * (qp - pp) / (j + 2) as f64;
                        sum += term;
                        if term.abs() <= 1e-18 * sum.abs() {
                            break;
                        }
                        coef *= s / (j + 1) as f64;
                        qp *= q;
                        pp *= p;
                    }
                    sum
                } else {
                    let anti = |x: f64| (x / s - 1.0 / (s * s)) * (s * x).exp();
                    anti(q) - anti(p)
                }
            }
        }
    }

    /// `∫_a^b weight(u) du` for any `a <= b`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        if a >= 0.0 {
            self.integral_nonneg(a, b)
        } else if b <= 0.0 {
            self.integral_nonneg(-b, -a)
        } else {
            self.integral_nonneg(0.0, -a) + self.integral_nonneg(0.0, b)
        }
    }
}

/// Piecewise-constant function with compact support: `levels[j]` on
/// `[breaks[j], breaks[j+1])`, zero outside `[breaks[0], breaks[last])`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelFunction {
    breaks: Vec<f64>,
    levels: Vec<f64>,
}

impl KernelFunction {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_parts(breaks: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        let ok_len = (breaks.is_empty() && levels.is_empty()) || breaks.len() == levels.len() + 1;
        if !ok_len {
            return Err(Error::InvalidModel("kernel needs one more breakpoint than levels".into()));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) || breaks.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidModel("kernel breakpoints must be finite and strictly increasing".into()));
        }
        Ok(Self { breaks, levels })
    }

    /// Sum of `value · 1[lo, hi)` over the given boxes. Boxes with `lo >= hi`
    /// have measure zero and are dropped.
    pub fn from_boxes<I: IntoIterator<Item = (f64, f64, f64)>>(boxes: I) -> Self {
        let mut events: Vec<(f64, f64, i32)> = Vec::new();
        for (lo, hi, v) in boxes {
            if lo < hi && v != 0.0 {
                events.push((lo, v, 1));
                events.push((hi, -v, -1));
            }
        }
        if events.is_empty() {
            return Self::zero();
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut breaks = Vec::new();
        let mut levels = Vec::new();
        let mut level = 0.0;
        let mut active = 0i32;
        let mut i = 0;
        while i < events.len() {
            let x = events[i].0;
            while i < events.len() && events[i].0 == x {
                level += events[i].1;
                active += events[i].2;
                i += 1;
            }
            if active == 0 {
                level = 0.0;
            }
            breaks.push(x);
            levels.push(level);
        }
        levels.pop();
        Self { breaks, levels }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn is_zero(&self) -> bool {
        self.levels.iter().all(|&l| l == 0.0)
    }

    /// Smallest interval outside which the kernel vanishes.
    pub fn support(&self) -> Option<(f64, f64)> {
        let first = self.levels.iter().position(|&l| l != 0.0)?;
        let last = self.levels.iter().rposition(|&l| l != 0.0)?;
        Some((self.breaks[first], self.breaks[last + 1]))
    }

    /// Value at `u` under the left-closed convention.
    pub fn eval(&self, u: f64) -> f64 {
        if self.breaks.len() < 2 || u < self.breaks[0] || u >= *self.breaks.last().unwrap() {
            return 0.0;
        }
        let j = self.breaks.partition_point(|&b| b <= u) - 1;
        self.levels[j]
    }

    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.levels.iter().enumerate().map(move |(j, &l)| (self.breaks[j], self.breaks[j + 1], l))
    }

    /// `∫ K(u) du`.
    pub fn integral(&self) -> f64 {
        self.intervals().map(|(a, b, l)| l * (b - a)).sum()
    }

    /// `∫ weight(u) K(u) du`.
    pub fn weighted_integral(&self, weight: Weight) -> f64 {
        self.intervals().map(|(a, b, l)| if l == 0.0 { 0.0 } else { l * weight.integral(a, b) }).sum()
    }

    pub fn map_levels(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { breaks: self.breaks.clone(), levels: self.levels.iter().map(|&l| f(l)).collect() }
    }

    pub fn abs(&self) -> Self {
        self.map_levels(f64::abs)
    }

    /// Restriction to `[lo, hi]`, splitting straddling intervals.
    pub fn truncated(&self, lo: f64, hi: f64) -> Self {
        Self::from_boxes(self.intervals().map(|(a, b, l)| (a.max(lo), b.min(hi), l)))
    }

    /// `a·self + b·other` on the merged breakpoint grid.
    pub fn combine(&self, a: f64, other: &KernelFunction, b: f64) -> Self {
        Self::from_boxes(
            self.intervals()
                .map(|(x, y, l)| (x, y, a * l))
                .chain(other.intervals().map(|(x, y, l)| (x, y, b * l))),
        )
    }

    /// `Σ_k c_k K_k` on the merged grid of all inputs.
    pub fn weighted_sum<'a, I: IntoIterator<Item = (f64, &'a KernelFunction)>>(parts: I) -> Self {
        let mut boxes = Vec::new();
        for (c, k) in parts {
            boxes.extend(k.intervals().map(|(x, y, l)| (x, y, c * l)));
        }
        Self::from_boxes(boxes)
    }

    /// `∫ f'(w + u) K(u) du = Σ_j level_j (f(w + u_{j+1}) - f(w + u_j))`,
    /// exact for every absolutely continuous `f`.
    pub fn integrate_derivative<F: Fn(f64) -> f64>(&self, f: F, w: f64) -> f64 {
        if self.breaks.is_empty() {
            return 0.0;
        }
        let vals: Vec<f64> = self.breaks.iter().map(|&u| f(w + u)).collect();
        self.levels.iter().enumerate().map(|(j, &l)| l * (vals[j + 1] - vals[j])).sum()
    }

    /// `∫_{lo}^{hi} weight(u) (self(u) - other(u))² du` by walking both grids.
    pub fn weighted_sq_distance(&self, other: &KernelFunction, weight: Weight, lo: f64, hi: f64) -> f64 {
        let mut pts: Vec<f64> = self
            .breaks
            .iter()
            .chain(other.breaks.iter())
            .copied()
            .filter(|&x| x > lo && x < hi)
            .collect();
        pts.push(lo);
        pts.push(hi);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let mut ia = 0usize;
        let mut ib = 0usize;
        let mut total = 0.0;
        for w in pts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let va = level_walk(&self.breaks, &self.levels, &mut ia, mid);
            let vb = level_walk(&other.breaks, &other.levels, &mut ib, mid);
            let d = va - vb;
            if d != 0.0 {
                total += d * d * weight.integral(w[0], w[1]);
            }
        }
        total
    }
}

/// Level at `x` for monotonically increasing queries; `cursor` remembers the
/// last interval.
fn level_walk(breaks: &[f64], levels: &[f64], cursor: &mut usize, x: f64) -> f64 {
    if breaks.len() < 2 || x < breaks[0] || x >= breaks[breaks.len() - 1] {
        return 0.0;
    }
    while *cursor + 1 < breaks.len() && breaks[*cursor + 1] <= x {
        *cursor += 1;
    }
    levels[*cursor]
}

/// `x ↦ ∫_{-∞}^{x} weight(u) K(u) du` with precomputed values at the
/// breakpoints, for repeated interval queries against a fixed kernel.
#[derive(Clone, Debug)]
pub struct WeightedAntiderivative {
    kernel: KernelFunction,
    weight: Weight,
    cumulative: Vec<f64>,
}

impl WeightedAntiderivative {
    pub fn new(kernel: KernelFunction, weight: Weight) -> Self {
        let mut cumulative = Vec::with_capacity(kernel.breaks.len());
        let mut acc = 0.0;
        if !kernel.breaks.is_empty() {
            cumulative.push(0.0);
            for (a, b, l) in kernel.intervals() {
                acc += l * weight.integral(a, b);
                cumulative.push(acc);
            }
        }
        Self { kernel, weight, cumulative }
    }

    pub fn at(&self, x: f64) -> f64 {
        let br = &self.kernel.breaks;
        if br.len() < 2 || x <= br[0] {
            return 0.0;
        }
        if x >= br[br.len() - 1] {
            return self.cumulative[br.len() - 1];
        }
        let j = br.partition_point(|&b| b <= x) - 1;
        self.cumulative[j] + self.kernel.levels[j] * self.weight.integral(br[j], x)
    }

    /// `∫ weight(u) other(u) K(u) du`.
    pub fn inner(&self, other: &KernelFunction) -> f64 {
        other.intervals().map(|(a, b, l)| if l == 0.0 { 0.0 } else { l * (self.at(b) - self.at(a)) }).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_pieces;
    use proptest::prelude::*;

    fn kernel_quad(k: &KernelFunction, w: Weight) -> f64 {
        let pts: Vec<f64> =
            std::iter::once(0.0).chain(k.breakpoints().iter().copied()).collect::<Vec<_>>();
        let mut pts = pts;
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        integrate_pieces(|u| w.eval(u) * k.eval(u), &pts, 1e-14)
    }

    #[test]
    fn single_box() {
        let k = KernelFunction::from_boxes([(-1.0, 0.0, 1.0)]);
        assert_eq!(k.breakpoints(), &[-1.0, 0.0]);
        assert_eq!(k.eval(-0.5), 1.0);
        assert_eq!(k.eval(0.0), 0.0);
        assert_eq!(k.eval(-1.0), 1.0);
        assert_eq!(k.integral(), 1.0);
        assert!((k.weighted_integral(Weight::ABS) - 0.5).abs() < 1e-15);
        assert_eq!(k.support(), Some((-1.0, 0.0)));
    }

    #[test]
    fn overlapping_boxes_merge() {
        let k = KernelFunction::from_boxes([(-1.0, 1.0, 2.0), (0.0, 2.0, -1.0), (5.0, 5.0, 9.0)]);
        assert_eq!(k.breakpoints(), &[-1.0, 0.0, 1.0, 2.0]);
        assert_eq!(k.levels(), &[2.0, 1.0, -1.0]);
        assert!((k.integral() - 2.0).abs() < 1e-15);
        let t = k.truncated(-0.5, 1.5);
        assert_eq!(t.breakpoints(), &[-0.5, 0.0, 1.0, 1.5]);
        assert!(KernelFunction::from_parts(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(KernelFunction::from_parts(vec![0.0, 1.0], vec![]).is_err());
    }

    #[test]
    fn exp_integral_closed_form_matches_quadrature() {
        // ∫_0^c u e^{tu} du = (c/t - 1/t²) e^{tc} + 1/t²
        for &(c, t) in &[(1.0f64, 0.3f64), (0.7, 2.0), (2.0, 1e-9), (1.0, 0.0), (3.0, 0.01)] {
            let closed = if t == 0.0 { c * c / 2.0 } else { (c / t - 1.0 / (t * t)) * (t * c).exp() + 1.0 / (t * t) };
            let w = Weight::abs_exp(t);
            let q = integrate_pieces(|u| w.eval(u), &[0.0, c], 1e-15);
            assert!((w.integral(0.0, c) - q).abs() < 1e-10);
            if t > 1e-4 {
                assert!((closed - q).abs() < 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn weighted_integrals_match_quadrature(
            boxes in proptest::collection::vec((-2.0..2.0f64, 0.01..1.5f64, -3.0..3.0f64), 1..8),
            t in 0.0..2.0f64,
        ) {
            let k = KernelFunction::from_boxes(boxes.iter().map(|&(a, len, v)| (a, a + len, v)));
            for w in [Weight::ONE, Weight::ABS, Weight::abs_exp(t), Weight::exp(2.0 * t), Weight::abs_exp(2.0 * t)] {
                let exact = k.weighted_integral(w);
                let q = kernel_quad(&k, w);
                prop_assert!((exact - q).abs() <= 1e-10 * (1.0 + q.abs()), "{exact} vs {q}");
            }
            let direct: f64 = boxes.iter().map(|&(_, len, v)| v * len).sum();
            prop_assert!((k.integral() - direct).abs() < 1e-12);
        }

        #[test]
        fn distance_and_antiderivative_agree(
            a in proptest::collection::vec((-2.0..2.0f64, 0.01..1.5f64, -3.0..3.0f64), 1..6),
            b in proptest::collection::vec((-2.0..2.0f64, 0.01..1.5f64, -3.0..3.0f64), 1..6),
            t in 0.0..1.0f64,
        ) {
            let ka = KernelFunction::from_boxes(a.iter().map(|&(x, l, v)| (x, x + l, v))).truncated(-1.0, 1.0);
            let kb = KernelFunction::from_boxes(b.iter().map(|&(x, l, v)| (x, x + l, v))).truncated(-1.0, 1.0);
            let w = Weight::exp(2.0 * t);
            let direct = ka.weighted_sq_distance(&kb, w, -1.0, 1.0);
            let sq = |k: &KernelFunction| k.map_levels(|l| l * l).weighted_integral(w);
            let cross = WeightedAntiderivative::new(kb.clone(), w).inner(&ka);
            let expanded = sq(&ka) - 2.0 * cross + sq(&kb);
            prop_assert!((direct - expanded).abs() <= 1e-10 * (1.0 + direct));
            let diff = ka.combine(1.0, &kb, -1.0);
            let via_diff = diff.map_levels(|l| l * l).weighted_integral(w);
            prop_assert!((direct - via_diff).abs() <= 1e-10 * (1.0 + direct));
        }
    }

    #[test]
    fn derivative_integral_is_exact_for_polynomials() {
        let k = KernelFunction::from_boxes([(-0.8, 0.1, 1.5), (-0.2, 0.6, -0.4)]);
        let w = 0.37;
        let f = |x: f64| x.powi(4);
        let fp = |x: f64| 4.0 * x.powi(3);
        let got = k.integrate_derivative(f, w);
        let q = integrate_pieces(|u| fp(w + u) * k.eval(u), k.breakpoints(), 1e-15);
        assert!((got - q).abs() < 1e-13);
    }
}
