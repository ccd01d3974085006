//! Numerical checks of the Stein identity and of the moment conditions on
//! `(K̂, R)`: the Ψ-weighted ratios behind `r_0..r_4`, `M_t`, the exponential
//! moment bound `E Ψ_{β,t}(W) ≤ 4 e^{t²/2}` and the Berry–Esseen inequality.
//!
//! Every routine runs either by exact enumeration of a finitely supported
//! model or by reproducible Monte Carlo.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::cdf_unchecked;
use crate::kernel::{KernelFunction, Weight, WeightedAntiderivative};
use crate::mc::{McPlan, MeanVar};
use crate::model::{exact_w_distribution, Realization, SteinModel};
use crate::smoothfun::{SmoothedExp, SteinTestFn};

/// Absolute tolerance for enumerate-mode identity residuals.
pub const ENUMERATE_TOL: f64 = 1e-10;

/// Samples used to estimate `K = E K̂` in Monte Carlo mode.
pub const PILOT_SAMPLES: u64 = 4096;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    Enumerate,
    MonteCarlo(McPlan),
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Enumerate => "enumerate",
            Mode::MonteCarlo(_) => "mc",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestFunction {
    Monomial(u32),
    /// `tanh(k w)`.
    Tanh(f64),
    Smoothed(SteinTestFn),
}

impl TestFunction {
    /// `1, w, ..., w^5`.
    pub fn stock() -> Vec<TestFunction> {
        (0..=5).map(TestFunction::Monomial).collect()
    }

    /// Stock monomials plus `tanh(w)`, `tanh(2w)` and `h_{1, 0.2}`.
    pub fn library() -> Vec<TestFunction> {
        let mut v = Self::stock();
        v.push(TestFunction::Tanh(1.0));
        v.push(TestFunction::Tanh(2.0));
        v.push(TestFunction::Smoothed(SteinTestFn::new(1.0, 0.2).expect("valid constants")));
        v
    }

    pub fn name(&self) -> String {
        match self {
            TestFunction::Monomial(k) => format!("w^{k}"),
            TestFunction::Tanh(k) => format!("tanh({k}w)"),
            TestFunction::Smoothed(h) => format!("h(z={},eps={})", h.z(), h.eps()),
        }
    }

    pub fn eval(&self, w: f64) -> f64 {
        match self {
            TestFunction::Monomial(k) => w.powi(*k as i32),
            TestFunction::Tanh(k) => (k * w).tanh(),
            TestFunction::Smoothed(h) => h.eval(w),
        }
    }

    pub fn deriv(&self, w: f64) -> f64 {
        match self {
            TestFunction::Monomial(0) => 0.0,
            TestFunction::Monomial(k) => *k as f64 * w.powi(*k as i32 - 1),
            TestFunction::Tanh(k) => k / (k * w).cosh().powi(2),
            TestFunction::Smoothed(h) => h.deriv(w),
        }
    }
}

/// Both sides of `E{W f(W)} = E ∫ f'(W+u) K̂(u) du + E{R f(W)}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// Standard error of `lhs - rhs`; `None` when exact.
    pub stderr: Option<f64>,
}

fn identity_terms(real: &Realization, f: &TestFunction) -> (f64, f64) {
    let fw = f.eval(real.w);
    let integral = real.kernel.integrate_derivative(|x| f.eval(x), real.w);
    (real.w * fw, integral + real.r * fw)
}

fn require_enumerable(model: &dyn SteinModel) -> Result<()> {
    if model.is_enumerable() {
        Ok(())
    } else {
        Err(Error::Capability(format!("{} is not enumerable", model.label())))
    }
}

pub fn identity_residual(model: &dyn SteinModel, f: &TestFunction, mode: &Mode) -> Result<IdentityResidual> {
    match mode {
        Mode::Enumerate => {
            require_enumerable(model)?;
            let (mut lhs, mut rhs) = (0.0, 0.0);
            model.for_each_outcome(&mut |p, real| {
                let (l, r) = identity_terms(&real, f);
                lhs += p * l;
                rhs += p * r;
            })?;
            Ok(IdentityResidual { lhs, rhs, residual: (lhs - rhs).abs(), stderr: None })
        }
        Mode::MonteCarlo(plan) => {
            let parts = plan.run(|rng, count| {
                let mut acc = [MeanVar::default(); 3];
                for _ in 0..count {
                    let (l, r) = identity_terms(&model.sample(rng), f);
                    acc[0].push(l);
                    acc[1].push(r);
                    acc[2].push(l - r);
                }
                acc
            })?;
            let m: Vec<MeanVar> = (0..3).map(|k| MeanVar::merged(parts.iter().map(|p| &p[k]))).collect();
            Ok(IdentityResidual { lhs: m[0].mean, rhs: m[1].mean, residual: m[2].mean.abs(), stderr: Some(m[2].stderr()) })
        }
    }
}

/// One row of a verification report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub mode: String,
    pub value: f64,
    pub bound: f64,
    pub stderr: Option<f64>,
    pub pass: bool,
}

/// Identity residual for every function in `fns`. Enumerate mode passes at
/// `ENUMERATE_TOL`; Monte Carlo mode passes within four standard errors.
pub fn verify_identity(model: &dyn SteinModel, fns: &[TestFunction], mode: &Mode) -> Result<Vec<CheckRecord>> {
    fns.iter()
        .map(|f| {
            let r = identity_residual(model, f, mode)?;
            let bound = match r.stderr {
                None => ENUMERATE_TOL,
                Some(se) => 4.0 * se,
            };
            Ok(CheckRecord {
                name: format!("identity {}", f.name()),
                mode: mode.name().into(),
                value: r.residual,
                bound,
                stderr: r.stderr,
                pass: r.residual <= bound,
            })
        })
        .collect()
}

/// Ψ-weighted ratios `E{Q_j Ψ_{β,t}(W)} / E Ψ_{β,t}(W)` at one grid point,
/// with `Q = (|R|, |E{K̂₁|W} - 1|, K̂_{2,t}, K̂_{3,t}, K̂_{4,t})`. In Monte Carlo
/// mode `Q_1` is replaced by its upper bound `|K̂₁ - 1|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct A1Point {
    pub beta: f64,
    pub t: f64,
    pub e_psi: f64,
    /// Unweighted `E Q_j`.
    pub mean: [f64; 5],
    pub ratio: [f64; 5],
    pub stderr: Option<[f64; 5]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A1Scan {
    pub points: Vec<A1Point>,
    /// `(t, M_t)` for every `t` in the grid.
    pub m_t: Vec<(f64, f64)>,
    pub exact: bool,
    pub samples: Option<u64>,
}

/// Running sums for a ratio `ΣX / ΣY` and its delta-method error.
#[derive(Clone, Copy, Debug, Default)]
struct RatioSums {
    n: f64,
    sx: f64,
    sy: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl RatioSums {
    fn push(&mut self, w: f64, x: f64, y: f64) {
        self.n += w;
        self.sx += w * x;
        self.sy += w * y;
        self.sxx += w * x * x;
        self.syy += w * y * y;
        self.sxy += w * x * y;
    }

    fn merge(&mut self, o: &RatioSums) {
        self.n += o.n;
        self.sx += o.sx;
        self.sy += o.sy;
        self.sxx += o.sxx;
        self.syy += o.syy;
        self.sxy += o.sxy;
    }

    fn ratio(&self) -> f64 {
        self.sx / self.sy
    }

    fn stderr(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        let r = self.ratio();
        let ybar = self.sy / self.n;
        let resid = (self.sxx - 2.0 * r * self.sxy + r * r * self.syy).max(0.0);
        (resid / (self.n * (self.n - 1.0))).sqrt() / ybar
    }
}

/// `K` restricted to `[-1, 1]` with what the `(K̂ - K)²` integrals need.
struct MeanKernel {
    k: KernelFunction,
    /// Per `t`: antiderivatives for the weights `e^{2t|u|}` and `|u| e^{2t|u|}`
    /// and the constants `∫ weight · K²`.
    per_t: Vec<[(WeightedAntiderivative, f64); 2]>,
}

impl MeanKernel {
    fn new(k: KernelFunction, ts: &[f64]) -> Self {
        let k = k.truncated(-1.0, 1.0);
        let sq = k.map_levels(|l| l * l);
        let per_t = ts
            .iter()
            .map(|&t| {
                [Weight::exp(2.0 * t), Weight::abs_exp(2.0 * t)]
                    .map(|w| (WeightedAntiderivative::new(k.clone(), w), sq.weighted_integral(w)))
            })
            .collect();
        Self { k, per_t }
    }

    fn m_t(&self, t: f64) -> f64 {
        self.k.abs().weighted_integral(Weight::exp(t))
    }

    /// `(K̂_{3,t}, K̂_{4,t})` for the `ti`-th `t`.
    fn k34(&self, khat: &KernelFunction, ti: usize, t: f64, exact: bool) -> (f64, f64) {
        let kt = khat.truncated(-1.0, 1.0);
        if exact {
            return (
                kt.weighted_sq_distance(&self.k, Weight::exp(2.0 * t), -1.0, 1.0),
                kt.weighted_sq_distance(&self.k, Weight::abs_exp(2.0 * t), -1.0, 1.0),
            );
        }
        let sq = kt.map_levels(|l| l * l);
        let [(ad3, c3), (ad4, c4)] = &self.per_t[ti];
        let k3 = sq.weighted_integral(Weight::exp(2.0 * t)) - 2.0 * ad3.inner(&kt) + c3;
        let k4 = sq.weighted_integral(Weight::abs_exp(2.0 * t)) - 2.0 * ad4.inner(&kt) + c4;
        (k3.max(0.0), k4.max(0.0))
    }
}

fn w_key(w: f64) -> i64 {
    (w * 1e9).round() as i64
}

fn validate_grid(betas: &[f64], ts: &[f64]) -> Result<()> {
    if betas.is_empty() || ts.is_empty() {
        return Err(Error::Domain("β and t grids must be non-empty".into()));
    }
    if betas.iter().chain(ts).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Domain("β and t must be finite and non-negative".into()));
    }
    Ok(())
}

type GridSums = Vec<[RatioSums; 5]>;

struct ScanContext<'a> {
    betas: &'a [f64],
    ts: &'a [f64],
    psis: Vec<SmoothedExp>,
    kmean: MeanKernel,
    exact: bool,
}

impl ScanContext<'_> {
    fn accumulate(&self, sums: &mut GridSums, plain: &mut [f64; 6], p: f64, real: &Realization, q1: f64) {
        let q0 = real.r.abs();
        let kabs = real.kernel.abs();
        let per_t: Vec<[f64; 3]> = self
            .ts
            .iter()
            .enumerate()
            .map(|(ti, &t)| {
                let k2 = kabs.weighted_integral(Weight::abs_exp(t));
                let (k3, k4) = self.kmean.k34(&real.kernel, ti, t, self.exact);
                [k2, k3, k4]
            })
            .collect();
        plain[0] += p;
        plain[1] += p * q0;
        plain[2] += p * q1;
        for (ti, q) in per_t.iter().enumerate() {
            // Unweighted means are reported at the first t only.
            if ti == 0 {
                plain[3] += p * q[0];
                plain[4] += p * q[1];
                plain[5] += p * q[2];
            }
            for bi in 0..self.betas.len() {
                let psi = self.psis[bi * self.ts.len() + ti].psi(real.w);
                let q = [q0, q1, q[0], q[1], q[2]];
                let cell = &mut sums[bi * self.ts.len() + ti];
                for j in 0..5 {
                    cell[j].push(p, q[j] * psi, psi);
                }
            }
        }
    }

    fn finish(&self, sums: &GridSums, plain: &[f64; 6], samples: Option<u64>) -> A1Scan {
        let total = plain[0];
        let mean = [plain[1] / total, plain[2] / total, plain[3] / total, plain[4] / total, plain[5] / total];
        let mut points = Vec::with_capacity(sums.len());
        for (bi, &beta) in self.betas.iter().enumerate() {
            for (ti, &t) in self.ts.iter().enumerate() {
                let cell = &sums[bi * self.ts.len() + ti];
                points.push(A1Point {
                    beta,
                    t,
                    e_psi: cell[0].sy / cell[0].n,
                    mean,
                    ratio: std::array::from_fn(|j| cell[j].ratio()),
                    stderr: (!self.exact).then(|| std::array::from_fn(|j| cell[j].stderr())),
                });
            }
        }
        let m_t = self.ts.iter().map(|&t| (t, self.kmean.m_t(t))).collect();
        A1Scan { points, m_t, exact: self.exact, samples }
    }
}

/// Evaluates the (A1) ratios on the grid `betas × ts`.
pub fn a1_scan(model: &dyn SteinModel, betas: &[f64], ts: &[f64], mode: &Mode) -> Result<A1Scan> {
    validate_grid(betas, ts)?;
    let psis = betas
        .iter()
        .flat_map(|&b| ts.iter().map(move |&t| SmoothedExp::new(b, t)))
        .collect::<Result<Vec<_>>>()?;
    let cells = betas.len() * ts.len();
    match mode {
        Mode::Enumerate => {
            require_enumerable(model)?;
            // First pass: K = E K̂ and E{K̂₁ | W}.
            let mut boxes: Vec<(f64, f64, f64)> = Vec::new();
            let mut kmean = KernelFunction::zero();
            let mut cond: HashMap<i64, (f64, f64)> = HashMap::new();
            model.for_each_outcome(&mut |p, real| {
                boxes.extend(real.kernel.intervals().map(|(a, b, l)| (a, b, p * l)));
                if boxes.len() > 1 << 16 {
                    kmean = kmean.combine(1.0, &KernelFunction::from_boxes(boxes.drain(..)), 1.0);
                }
                let e = cond.entry(w_key(real.w)).or_default();
                e.0 += p;
                e.1 += p * real.kernel.integral();
            })?;
            kmean = kmean.combine(1.0, &KernelFunction::from_boxes(boxes), 1.0);
            let ctx = ScanContext { betas, ts, psis, kmean: MeanKernel::new(kmean, ts), exact: true };
            let mut sums: GridSums = vec![[RatioSums::default(); 5]; cells];
            let mut plain = [0.0; 6];
            model.for_each_outcome(&mut |p, real| {
                let (pw, k1w) = cond[&w_key(real.w)];
                ctx.accumulate(&mut sums, &mut plain, p, &real, (k1w / pw - 1.0).abs());
            })?;
            Ok(ctx.finish(&sums, &plain, None))
        }
        Mode::MonteCarlo(plan) => {
            let pilot = McPlan { samples: plan.samples.min(PILOT_SAMPLES), ..plan.derived(0x4b4d) };
            let parts = pilot.run(|rng, count| {
                let mut boxes = Vec::new();
                for _ in 0..count {
                    let k = model.sample(rng).kernel.truncated(-1.0, 1.0);
                    boxes.extend(k.intervals());
                }
                boxes
            })?;
            let scale = 1.0 / pilot.samples.max(1) as f64;
            let kmean = KernelFunction::from_boxes(parts.into_iter().flatten().map(|(a, b, l)| (a, b, l * scale)));
            let ctx = ScanContext { betas, ts, psis, kmean: MeanKernel::new(kmean, ts), exact: false };
            let parts = plan.run(|rng, count| {
                let mut sums: GridSums = vec![[RatioSums::default(); 5]; cells];
                let mut plain = [0.0; 6];
                for _ in 0..count {
                    let real = model.sample(rng);
                    let q1 = (real.kernel.integral() - 1.0).abs();
                    ctx.accumulate(&mut sums, &mut plain, 1.0, &real, q1);
                }
                (sums, plain)
            })?;
            let mut sums: GridSums = vec![[RatioSums::default(); 5]; cells];
            let mut plain = [0.0; 6];
            for (s, p) in &parts {
                for (acc, cell) in sums.iter_mut().zip(s) {
                    for j in 0..5 {
                        acc[j].merge(&cell[j]);
                    }
                }
                for j in 0..6 {
                    plain[j] += p[j];
                }
            }
            Ok(ctx.finish(&sums, &plain, Some(plan.samples)))
        }
    }
}

/// The functionals at a single `(β, t)`.
pub fn k_functionals(model: &dyn SteinModel, beta: f64, t: f64, mode: &Mode) -> Result<(A1Point, f64)> {
    let scan = a1_scan(model, &[beta], &[t], mode)?;
    Ok((scan.points[0], scan.m_t[0].1))
}

/// Constants of condition (A1) read off a scan: `r_j` is the largest
/// `ratio_j / (1 + t^{τ_j})` over the grid and `ρ` the largest `M_t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct A1Estimates {
    pub r: [f64; 5],
    pub tau: [f64; 5],
    pub rho: f64,
    pub m0: f64,
    pub exact: bool,
    pub grid_points: usize,
}

impl A1Estimates {
    pub fn from_scan(scan: &A1Scan, tau: [f64; 5], m0: f64) -> Self {
        let mut r = [0.0f64; 5];
        for p in &scan.points {
            for j in 0..5 {
                r[j] = r[j].max(p.ratio[j] / (1.0 + p.t.powf(tau[j])));
            }
        }
        let rho = scan.m_t.iter().fold(0.0f64, |m, &(_, v)| m.max(v));
        Self { r, tau, rho, m0, exact: scan.exact, grid_points: scan.points.len() }
    }

    /// `4 r₀ + 4 r₁ + 28 r₂ + 20 r₃ + 13 √r₄`.
    pub fn berry_esseen_rhs(&self) -> f64 {
        let r = &self.r;
        4.0 * r[0] + 4.0 * r[1] + 28.0 * r[2] + 20.0 * r[3] + 13.0 * r[4].sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpBoundRow {
    pub beta: f64,
    pub t: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub bound: f64,
    pub in_range: bool,
    /// `None` when the point lies beyond `z0` and is not asserted.
    pub pass: Option<bool>,
}

/// `E Ψ_{β,t}(W) + 4σ ≤ 4 e^{t²/2}` on a grid; points with `β` or `t`
/// above `z0` are reported but skipped. All grid points share one set of
/// draws of `W`.
pub fn exp_bound_check(
    model: &dyn SteinModel,
    betas: &[f64],
    ts: &[f64],
    mode: &Mode,
    z0: Option<f64>,
) -> Result<Vec<ExpBoundRow>> {
    validate_grid(betas, ts)?;
    let psis = betas
        .iter()
        .flat_map(|&b| ts.iter().map(move |&t| SmoothedExp::new(b, t)))
        .collect::<Result<Vec<_>>>()?;
    let stats: Vec<MeanVar> = match mode {
        Mode::Enumerate => {
            require_enumerable(model)?;
            let dist = exact_w_distribution(model)?;
            psis.iter()
                .map(|s| MeanVar::exact(dist.iter().map(|&(w, p)| p * s.psi(w)).sum()))
                .collect()
        }
        Mode::MonteCarlo(plan) => {
            let parts = plan.run(|rng, count| {
                let mut acc = vec![MeanVar::default(); psis.len()];
                for _ in 0..count {
                    let w = model.sample_w(rng);
                    for (a, s) in acc.iter_mut().zip(&psis) {
                        a.push(s.psi(w));
                    }
                }
                acc
            })?;
            (0..psis.len()).map(|k| MeanVar::merged(parts.iter().map(|p| &p[k]))).collect()
        }
    };
    Ok(psis
        .iter()
        .zip(&stats)
        .map(|(s, mv)| {
            let bound = 4.0 * (0.5 * s.t() * s.t()).exp();
            let in_range = z0.is_none_or(|z| s.beta() <= z && s.t() <= z);
            let stderr = mv.stderr();
            ExpBoundRow {
                beta: s.beta(),
                t: s.t(),
                estimate: mv.mean,
                stderr,
                bound,
                in_range,
                pass: in_range.then_some(mv.mean + 4.0 * stderr <= bound),
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerryEsseenCheck {
    pub sup_gap: f64,
    pub rhs: f64,
    /// Slack added to `rhs` for sampling error; zero when exact.
    pub margin: f64,
    pub pass: bool,
    pub exact: bool,
}

/// Points of the grid used for the Monte Carlo Kolmogorov distance.
pub const BE_GRID: usize = 400;

/// `sup_z |P(W ≤ z) - Φ(z)|` against `4r₀ + 4r₁ + 28r₂ + 20r₃ + 13√r₄`.
///
/// Exact mode takes the supremum over all atoms of `W` (both one-sided limits)
/// and uses no slack. Monte Carlo mode uses a `BE_GRID`-point grid on
/// `[-4, 4]` and a DKW margin at level `1e-4`.
pub fn berry_esseen_check(model: &dyn SteinModel, a1: &A1Estimates, mode: &Mode) -> Result<BerryEsseenCheck> {
    let rhs = a1.berry_esseen_rhs();
    match mode {
        Mode::Enumerate => {
            require_enumerable(model)?;
            let dist = exact_w_distribution(model)?;
            let mut below = 0.0;
            let mut gap = 0.0f64;
            for &(w, p) in &dist {
                let phi = cdf_unchecked(w);
                gap = gap.max((below - phi).abs());
                below += p;
                gap = gap.max((below - phi).abs());
            }
            Ok(BerryEsseenCheck { sup_gap: gap, rhs, margin: 0.0, pass: gap <= rhs, exact: true })
        }
        Mode::MonteCarlo(plan) => {
            let grid: Vec<f64> = (0..BE_GRID).map(|k| -4.0 + 8.0 * k as f64 / (BE_GRID - 1) as f64).collect();
            let parts = plan.run(|rng, count| {
                let mut counts = vec![0u64; BE_GRID + 1];
                for _ in 0..count {
                    let w = model.sample_w(rng);
                    counts[grid.partition_point(|&z| z < w)] += 1;
                }
                counts
            })?;
            let mut cum = 0u64;
            let total = plan.samples as f64;
            let mut gap = 0.0f64;
            for (k, &z) in grid.iter().enumerate() {
                cum += parts.iter().map(|c| c[k]).sum::<u64>();
                gap = gap.max((cum as f64 / total - cdf_unchecked(z)).abs());
            }
            let margin = ((2.0f64 / 1e-4).ln() / (2.0 * total)).sqrt();
            Ok(BerryEsseenCheck { sup_gap: gap, rhs, margin, pass: gap <= rhs + margin, exact: false })
        }
    }
}
