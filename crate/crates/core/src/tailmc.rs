//! Estimators of `P(W > z)` and of the ratio `P(W > z) / (1 - Φ(z))`: plain
//! Monte Carlo with Wilson intervals, exponential tilting for statistics that
//! are linear in independent innovations, and exact enumeration.

use serde::{Deserialize, Serialize};

use crate::bounds::BoundEnvelope;
use crate::error::{Error, Result};
use crate::gauss;
use crate::law::{Law, Sampler};
use crate::mc::{McPlan, MeanVar};
use crate::model::{exact_w_distribution, LinearForm, SteinModel};

/// Two-sided 95% normal quantile used for every reported interval.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Plain Monte Carlo refuses smaller sample sizes.
pub const MIN_PLAIN_SAMPLES: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMethod {
    Plain,
    Tilt,
    Exact,
}

impl TailMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            TailMethod::Plain => "plain",
            TailMethod::Tilt => "tilt",
            TailMethod::Exact => "exact",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub z: f64,
    pub p_hat: f64,
    pub stderr: f64,
    /// `p_hat / (1 - Φ(z))`.
    pub ratio: f64,
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    pub method: TailMethod,
    pub samples: u64,
    /// Set when no sample hit the event; the interval is then one-sided.
    pub low_information: bool,
}

impl TailEstimate {
    fn from_interval(z: f64, p_hat: f64, stderr: f64, lo: f64, hi: f64, method: TailMethod, samples: u64) -> Self {
        let t = gauss::tail_unchecked(z);
        TailEstimate {
            z,
            p_hat,
            stderr,
            ratio: p_hat / t,
            ratio_lo: lo / t,
            ratio_hi: hi / t,
            method,
            samples,
            low_information: p_hat == 0.0 && method != TailMethod::Exact,
        }
    }

    /// Largest `|ratio - 1|` over the interval.
    pub fn max_abs_deviation(&self) -> f64 {
        (self.ratio_lo - 1.0).abs().max((self.ratio_hi - 1.0).abs())
    }

    /// Lower/upper 95% bounds on `p`.
    pub fn p_interval(&self) -> (f64, f64) {
        let t = gauss::tail_unchecked(self.z);
        (self.ratio_lo * t, self.ratio_hi * t)
    }
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: u64, n: u64, q: f64) -> (f64, f64) {
    let nf = n as f64;
    let p = k as f64 / nf;
    let q2 = q * q;
    let denom = 1.0 + q2 / nf;
    let centre = (p + q2 / (2.0 * nf)) / denom;
    let half = q * (p * (1.0 - p) / nf + q2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

fn check_z(z: f64) -> Result<()> {
    if z.is_nan() {
        Err(Error::Domain("z is NaN".into()))
    } else {
        Ok(())
    }
}

fn plain_from_counts(z: f64, hits: u64, n: u64) -> TailEstimate {
    let p = hits as f64 / n as f64;
    let (lo, hi) = wilson_interval(hits, n, Z95);
    TailEstimate::from_interval(z, p, (p * (1.0 - p) / n as f64).sqrt(), lo, hi, TailMethod::Plain, n)
}

/// Plain estimates on a whole grid from one shared set of draws, so `p_hat`
/// is non-increasing in `z`.
pub fn estimate_tail_plain_grid(model: &dyn SteinModel, zs: &[f64], plan: &McPlan) -> Result<Vec<TailEstimate>> {
    if plan.samples < MIN_PLAIN_SAMPLES {
        return Err(Error::Domain(format!("plain Monte Carlo needs at least {MIN_PLAIN_SAMPLES} samples")));
    }
    zs.iter().try_for_each(|&z| check_z(z))?;
    let mut order: Vec<usize> = (0..zs.len()).collect();
    order.sort_by(|&a, &b| zs[a].total_cmp(&zs[b]));
    let sorted: Vec<f64> = order.iter().map(|&k| zs[k]).collect();
    let parts = plan.run(|rng, count| {
        // counts[k] = #{W > sorted[k-1]} contributions, cumulated below.
        let mut counts = vec![0u64; sorted.len() + 1];
        for _ in 0..count {
            let w = model.sample_w(rng);
            counts[sorted.partition_point(|&z| z < w)] += 1;
        }
        counts
    })?;
    let mut merged = vec![0u64; sorted.len() + 1];
    for part in &parts {
        for (m, c) in merged.iter_mut().zip(part) {
            *m += c;
        }
    }
    // W > sorted[k] iff its bucket index exceeds k.
    let mut above = vec![0u64; sorted.len()];
    let mut acc = 0u64;
    for k in (0..sorted.len()).rev() {
        acc += merged[k + 1];
        above[k] = acc;
    }
    let mut out = vec![plain_from_counts(0.0, 0, 1); zs.len()];
    for (rank, &k) in order.iter().enumerate() {
        out[k] = plain_from_counts(zs[k], above[rank], plan.samples);
    }
    Ok(out)
}

pub fn estimate_tail_plain(model: &dyn SteinModel, z: f64, plan: &McPlan) -> Result<TailEstimate> {
    Ok(estimate_tail_plain_grid(model, &[z], plan)?[0])
}

/// Conjugate change of measure for `W = Σ_g c_g Σ_{k<m_g} ξ_{g,k}`:
/// innovations are drawn from the law tilted by `θ c_g`, and each draw is
/// weighted by `exp(-θ W + ψ(θ))` with `ψ(θ) = Σ_g m_g log E e^{θ c_g ξ}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TiltPlan {
    pub theta: f64,
    pub psi: f64,
    /// `ψ'(θ)`, the mean of `W` under the tilted law.
    pub psi_prime: f64,
    pub law: Law,
    pub terms: Vec<(f64, usize)>,
}

impl TiltPlan {
    fn cumulants(form: &LinearForm, theta: f64) -> Option<(f64, f64, f64)> {
        let (mut psi, mut d1, mut d2) = (0.0, 0.0, 0.0);
        for &(c, m) in &form.terms {
            let m = m as f64;
            psi += m * form.law.log_mgf(theta * c)?;
            let (mean, var) = form.law.tilted_moments(theta * c)?;
            d1 += m * c * mean;
            d2 += m * c * c * var;
        }
        Some((psi, d1, d2))
    }

    /// Solves `ψ'(θ) = z` (safeguarded Newton with bisection, `|ψ'(θ) - z| ≤ 1e-8`).
    /// For `z ≤ 0` the plan is the identity, `θ = 0`.
    pub fn new(form: &LinearForm, z: f64) -> Result<Self> {
        check_z(z)?;
        let law = form.law.clone();
        if z <= 0.0 || !z.is_finite() {
            return Ok(Self { theta: 0.0, psi: 0.0, psi_prime: 0.0, law, terms: form.terms.clone() });
        }
        let cmax = form.terms.iter().fold(0.0f64, |m, t| m.max(t.0.abs()));
        if cmax == 0.0 {
            return Err(Error::Degenerate("linear form has no non-zero coefficient".into()));
        }
        let limit = form.law.mgf_radius() / cmax;
        let eval = |th: f64| Self::cumulants(form, th);
        let mut lo = 0.0;
        let mut hi = (z / (eval(0.0).map_or(1.0, |c| c.2.max(1e-300)))).min(0.5 * limit);
        loop {
            match eval(hi) {
                Some((_, d1, _)) if d1 >= z => break,
                Some(_) => {
                    lo = hi;
                    hi = if limit.is_finite() { 0.5 * (hi + limit) } else { 2.0 * hi };
                }
                None => return Err(Error::Domain(format!("tilt for z = {z} leaves the MGF domain"))),
            }
            if hi - lo < 1e-15 * hi.max(1.0) || hi > 1e6 {
                return Err(Error::Domain(format!("cannot reach tilted mean {z}")));
            }
        }
        let mut th = 0.5 * (lo + hi);
        for _ in 0..200 {
            let (_, d1, d2) = eval(th).ok_or_else(|| Error::Domain("tilt outside the MGF domain".into()))?;
            if (d1 - z).abs() <= 1e-8 {
                break;
            }
            if d1 < z {
                lo = th;
            } else {
                hi = th;
            }
            let newton = th - (d1 - z) / d2;
            th = if d2 > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        let (psi, d1, _) = eval(th).ok_or_else(|| Error::Domain("tilt outside the MGF domain".into()))?;
        if (d1 - z).abs() > 1e-8 {
            return Err(Error::Domain(format!("tilt equation did not converge at z = {z}")));
        }
        Ok(Self { theta: th, psi, psi_prime: d1, law, terms: form.terms.clone() })
    }

    pub fn for_model(model: &dyn SteinModel, z: f64) -> Result<Self> {
        let form = model
            .linear_form()
            .ok_or_else(|| Error::Capability(format!("{} has no independent-summand form; use plain", model.label())))?;
        Self::new(&form, z)
    }
}

/// Importance-sampling estimate `E_θ[1(W > z) e^{-θW + ψ(θ)}]` with a
/// log-scale delta-method interval.
pub fn estimate_tail_tilt(model: &dyn SteinModel, z: f64, plan: &McPlan) -> Result<TailEstimate> {
    let tilt = TiltPlan::for_model(model, z)?;
    estimate_with_tilt(&tilt, z, plan)
}

pub fn estimate_with_tilt(tilt: &TiltPlan, z: f64, plan: &McPlan) -> Result<TailEstimate> {
    if plan.samples == 0 {
        return Err(Error::Domain("no samples requested".into()));
    }
    let samplers: Vec<(f64, usize, Sampler)> =
        tilt.terms.iter().map(|&(c, m)| (c, m, Sampler::new(&tilt.law, tilt.theta * c))).collect();
    let (theta, psi) = (tilt.theta, tilt.psi);
    let parts = plan.run(|rng, count| {
        let mut mv = MeanVar::default();
        for _ in 0..count {
            let mut w = 0.0;
            for (c, m, s) in &samplers {
                let mut part = 0.0;
                for _ in 0..*m {
                    part += s.sample(rng);
                }
                w += c * part;
            }
            mv.push(if w > z { (psi - theta * w).exp() } else { 0.0 });
        }
        mv
    })?;
    let mv = MeanVar::merged(&parts);
    let (p, se) = (mv.mean, mv.stderr());
    let (lo, hi) = if p > 0.0 {
        (p * (-Z95 * se / p).exp(), p * (Z95 * se / p).exp())
    } else {
        // No hits: every weight on the event is at most e^{ψ - θz}.
        (0.0, (3.0 / plan.samples as f64) * (psi - theta * z.max(0.0)).exp().min(1.0))
    };
    Ok(TailEstimate::from_interval(z, p, se, lo, hi.min(1.0), TailMethod::Tilt, plan.samples))
}

/// Exact `P(W > z)`; atoms within `1e-12 (1 + |z|)` of `z` count as not above it.
pub fn exact_tail(model: &dyn SteinModel, z: f64) -> Result<TailEstimate> {
    check_z(z)?;
    if !model.is_enumerable() {
        return Err(Error::Capability(format!("{} is not enumerable", model.label())));
    }
    let dist = exact_w_distribution(model)?;
    let cut = z + 1e-12 * (1.0 + z.abs());
    let p: f64 = dist.iter().filter(|a| a.0 > cut).map(|a| a.1).sum::<f64>().min(1.0);
    Ok(TailEstimate::from_interval(z, p, 0.0, p, p, TailMethod::Exact, model.outcome_count().unwrap_or(0)))
}

/// Tilting where the model supports it, plain Monte Carlo otherwise.
pub fn estimate_tail_auto(model: &dyn SteinModel, z: f64, plan: &McPlan) -> Result<TailEstimate> {
    match estimate_tail_tilt(model, z, plan) {
        Err(Error::Capability(_)) => estimate_tail_plain(model, z, plan),
        other => other,
    }
}

/// One output row; column order is the CSV schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub model_id: String,
    pub n: usize,
    pub z: f64,
    pub method: TailMethod,
    pub p_hat: f64,
    pub stderr: f64,
    pub ratio: f64,
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    pub envelope: f64,
    pub in_range: bool,
    pub samples: u64,
    pub seed: u64,
}

impl TailRow {
    pub fn new(model_id: &str, n: usize, est: &TailEstimate, env: &BoundEnvelope, seed: u64) -> Self {
        TailRow {
            model_id: model_id.to_string(),
            n,
            z: est.z,
            method: est.method,
            p_hat: est.p_hat,
            stderr: est.stderr,
            ratio: est.ratio,
            ratio_lo: est.ratio_lo,
            ratio_hi: est.ratio_hi,
            envelope: env.envelope,
            in_range: env.in_range,
            samples: est.samples,
            seed,
        }
    }

    pub fn max_abs_deviation(&self) -> f64 {
        (self.ratio_lo - 1.0).abs().max((self.ratio_hi - 1.0).abs())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub n: usize,
    /// `max_z CI-upper |ratio - 1| / envelope` over in-range rows.
    pub c_hat: f64,
    /// The `z` attaining the maximum.
    pub argmax_z: f64,
    pub excluded_z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub rows: Vec<FitRow>,
    /// `max c_hat / min c_hat` across `n`.
    pub spread: f64,
    /// Spearman rank correlation of `c_hat` with `n`.
    pub spearman: f64,
}

/// Fits the envelope constant per `n` from rows whose `envelope` column holds
/// `δ_n (1 + z³)` with unit constant. Out-of-range rows are excluded.
pub fn ratio_envelope_fit(rows: &[TailRow]) -> Result<EnvelopeFit> {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let mut fit = Vec::with_capacity(ns.len());
    for &n in &ns {
        let mut best = (f64::NEG_INFINITY, f64::NAN);
        let mut excluded = Vec::new();
        for r in rows.iter().filter(|r| r.n == n) {
            if !r.in_range || !(r.envelope > 0.0) {
                excluded.push(r.z);
                continue;
            }
            let c = r.max_abs_deviation() / r.envelope;
            if c > best.0 {
                best = (c, r.z);
            }
        }
        if !best.0.is_finite() {
            return Err(Error::Domain(format!("no in-range rows for n = {n}")));
        }
        fit.push(FitRow { n, c_hat: best.0, argmax_z: best.1, excluded_z: excluded });
    }
    let cs: Vec<f64> = fit.iter().map(|f| f.c_hat).collect();
    let lo = cs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = cs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let xs: Vec<f64> = fit.iter().map(|f| f.n as f64).collect();
    Ok(EnvelopeFit { spread: hi / lo, spearman: spearman(&xs, &cs), rows: fit })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; `0` when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combperm::latin_square_means;
    use crate::law::DiscreteDistribution;
    use crate::localdep::{build_mdep_field, Boundary};

    fn binomial_tail(n: u64, k_min: u64) -> f64 {
        let mut total = 0.0;
        let mut c = 1.0f64;
        for k in 0..=n {
            if k > 0 {
                c = c * (n - k + 1) as f64 / k as f64;
            }
            if k >= k_min {
                total += c;
            }
        }
        total / 2f64.powi(n as i32)
    }

    fn iid(n: usize, law: Law) -> crate::localdep::LocalFieldModel {
        build_mdep_field(vec![n], 0, law, None, Boundary::Open).unwrap()
    }

    #[test]
    fn certain_event_and_symmetric_zero() {
        let m = iid(50, Law::Uniform { half_width: 1.0 });
        let e = estimate_tail_plain(&m, -1e30, &McPlan::new(20_000, 1)).unwrap();
        assert_eq!(e.p_hat, 1.0);
        let e = estimate_tail_plain(&m, 0.0, &McPlan::new(100_000, 2)).unwrap();
        assert!((e.ratio - 1.0).abs() <= 4.0 * e.stderr / 0.5);
        assert!(estimate_tail_plain(&m, 0.0, &McPlan::new(100, 2)).is_err());
    }

    #[test]
    fn plain_matches_binomial_tail() {
        let m = iid(400, Law::rademacher());
        // W = (2S - 400)/20 > 1.05 iff S > 210.
        let exact = binomial_tail(400, 211);
        let e = estimate_tail_plain(&m, 1.05, &McPlan::new(200_000, 3)).unwrap();
        assert!((e.p_hat - exact).abs() <= 4.0 * e.stderr, "{} vs {exact}", e.p_hat);
    }

    #[test]
    fn grid_estimates_are_monotone_and_match_single() {
        let m = iid(30, Law::Uniform { half_width: 1.0 });
        let plan = McPlan::new(50_000, 4);
        let zs = [1.5, 0.0, 2.5, 0.5, 1.0];
        let grid = estimate_tail_plain_grid(&m, &zs, &plan).unwrap();
        for (k, &z) in zs.iter().enumerate() {
            let single = estimate_tail_plain(&m, z, &plan).unwrap();
            assert_eq!(single.p_hat, grid[k].p_hat);
        }
        let mut sorted = grid.clone();
        sorted.sort_by(|a, b| a.z.total_cmp(&b.z));
        assert!(sorted.windows(2).all(|w| w[1].p_hat <= w[0].p_hat));
    }

    #[test]
    fn tilt_solves_saddlepoint() {
        let m = iid(64, Law::Uniform { half_width: 1.0 });
        let t = TiltPlan::for_model(&m, 2.5).unwrap();
        assert!((t.psi_prime - 2.5).abs() <= 1e-8);
        assert!(t.theta > 0.0);
        let zero = TiltPlan::for_model(&m, 0.0).unwrap();
        assert_eq!(zero.theta, 0.0);
        let lap = iid(16, Law::Laplace { scale: 1.0 });
        let t = TiltPlan::for_model(&lap, 3.0).unwrap();
        assert!((t.psi_prime - 3.0).abs() <= 1e-8);
        let comb = latin_square_means(6).unwrap();
        assert!(matches!(TiltPlan::for_model(&comb, 1.0), Err(Error::Capability(_))));
    }

    #[test]
    fn zero_tilt_is_plain() {
        let m = iid(20, Law::rademacher());
        let e = estimate_tail_tilt(&m, 0.0, &McPlan::new(50_000, 5)).unwrap();
        let exact = exact_tail(&m, 0.0).unwrap();
        assert!((e.p_hat - exact.p_hat).abs() <= 4.0 * e.stderr);
        // Weights are indicators: the variance is p(1-p).
        let p = e.p_hat;
        assert!((e.stderr - (p * (1.0 - p) / 50_000.0).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn bernoulli_tilt_matches_exact_sum() {
        let bern = DiscreteDistribution::bernoulli(0.5).unwrap();
        let m = iid(20, Law::Discrete { atoms: bern });
        let z = 9.0 / 20f64.sqrt();
        let exact = binomial_tail(20, 15);
        assert!((exact - 0.020694732666015625).abs() < 1e-15);
        assert!((exact_tail(&m, z).unwrap().p_hat - exact).abs() < 1e-14);
        let e = estimate_tail_tilt(&m, z, &McPlan::new(100_000, 6)).unwrap();
        assert!((e.p_hat - exact).abs() <= 4.0 * e.stderr, "{} ± {}", e.p_hat, e.stderr);
    }

    #[test]
    fn tilt_and_plain_agree_for_uniform() {
        let m = iid(256, Law::Uniform { half_width: 1.0 });
        let plan = McPlan::new(200_000, 7);
        for z in [2.0, 3.0] {
            let t = estimate_tail_tilt(&m, z, &plan).unwrap();
            let p = estimate_tail_plain(&m, z, &plan.derived(1)).unwrap();
            let (tl, th) = t.p_interval();
            let (pl, ph) = p.p_interval();
            assert!(tl <= ph && pl <= th, "z={z}: tilt {t:?} plain {p:?}");
        }
    }

    #[test]
    fn tilt_relative_error_small_far_out() {
        let m = iid(1024, Law::Uniform { half_width: 1.0 });
        let z = 1024f64.powf(1.0 / 6.0);
        let e = estimate_tail_tilt(&m, z, &McPlan::new(40_000, 8)).unwrap();
        // Relative standard error scales as 1/sqrt(samples); at 1e6 it is 5x smaller.
        assert!(e.stderr / e.p_hat < 0.05, "{}", e.stderr / e.p_hat);
    }

    #[test]
    fn exact_tail_edges() {
        let m = latin_square_means(4).unwrap();
        assert!((exact_tail(&m, -100.0).unwrap().p_hat - 1.0).abs() < 1e-14);
        assert_eq!(exact_tail(&m, 100.0).unwrap().p_hat, 0.0);
        let mut above = 0;
        crate::combperm::for_each_permutation(4, &mut |pi| {
            let w: f64 = (0..4).map(|i| m.mean(i, pi[i])).sum();
            if w > 0.3 + 1e-12 {
                above += 1;
            }
        });
        assert!((exact_tail(&m, 0.3).unwrap().p_hat - above as f64 / 24.0).abs() < 1e-14);
        let big = iid(200, Law::rademacher());
        assert!(matches!(exact_tail(&big, 0.0), Err(Error::Capability(_))));
    }

    #[test]
    fn exact_and_plain_agree() {
        let m = build_mdep_field(vec![10], 1, Law::rademacher(), None, Boundary::Open).unwrap();
        let plan = McPlan::new(100_000, 9);
        for z in [0.123, 0.777, 1.513] {
            let e = exact_tail(&m, z).unwrap();
            let p = estimate_tail_plain(&m, z, &plan).unwrap();
            assert!((e.p_hat - p.p_hat).abs() <= 4.0 * p.stderr + 1e-12);
        }
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let m = iid(100, Law::Uniform { half_width: 1.0 });
        let plan = McPlan::new(3 * crate::mc::BATCH + 17, 10);
        let a = estimate_tail_tilt(&m, 2.0, &plan).unwrap();
        let b = estimate_tail_tilt(&m, 2.0, &plan.with_workers(3)).unwrap();
        assert_eq!(a.p_hat.to_bits(), b.p_hat.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn wilson_interval_basics() {
        let (lo, hi) = wilson_interval(0, 100, Z95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
        let (lo, hi) = wilson_interval(50, 100, Z95);
        assert!(lo < 0.5 && hi > 0.5 && ((0.5 - lo) - (hi - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn spearman_values() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[0.1, 0.5, 0.9]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[0.9, 0.5, 0.1]) + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), 0.0);
        assert!((spearman(&[1.0, 2.0, 3.0], &[0.5, 0.1, 0.9]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn envelope_fit_excludes_out_of_range() {
        let mk = |n: usize, z: f64, lo: f64, hi: f64, env: f64, in_range: bool| TailRow {
            model_id: "t".into(),
            n,
            z,
            method: TailMethod::Tilt,
            p_hat: 0.0,
            stderr: 0.0,
            ratio: 1.0,
            ratio_lo: lo,
            ratio_hi: hi,
            envelope: env,
            in_range,
            samples: 1,
            seed: 0,
        };
        let rows = vec![
            mk(64, 0.0, 0.98, 1.01, 0.1, true),
            mk(64, 1.0, 0.9, 1.05, 0.2, true),
            mk(64, 9.0, 0.0, 5.0, 0.3, false),
            mk(256, 0.0, 0.99, 1.01, 0.05, true),
        ];
        let fit = ratio_envelope_fit(&rows).unwrap();
        assert_eq!(fit.rows[0].excluded_z, vec![9.0]);
        assert!((fit.rows[0].c_hat - 0.5).abs() < 1e-12);
        assert_eq!(fit.rows[0].argmax_z, 1.0);
        assert!((fit.rows[1].c_hat - 0.2).abs() < 1e-12);
        assert!((fit.spread - 2.5).abs() < 1e-12);
        assert!((fit.spearman + 1.0).abs() < 1e-12);
    }
}
