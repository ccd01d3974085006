//! Combinatorial central limit theorem: `W = Σ_i X_{i,π(i)}` for a uniform
//! random permutation `π` and an independent array `X_{ij} = a_{ij} + c_{ij} ξ_{ij}`.
//!
//! The exchangeable pair swaps `π` at a uniform ordered pair `(I₁, I₂)`; it
//! yields the Stein identity with
//! `K̂(u) = (1/4n) Σ_{[n]₂} D {1(-D ≤ u ≤ 0) - 1(0 < u ≤ -D)}` and
//! `R = (1/n) Σ_{ij} X_{ij}`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelFunction;
use crate::law::{Law, Sampler};
use crate::localdep::{enumerate_products, CertMethod, MomentCertificate};
use crate::mc::McRng;
use crate::model::{Realization, SteinModel, ENUMERATION_LIMIT};

/// Cell noise `c_{ij} ξ_{ij}` with i.i.d. standardized `ξ_{ij}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellNoise {
    /// Mean 0, variance 1 after construction.
    pub law: Law,
    /// Row-major `n × n` standard deviations.
    pub sd: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermArrayModel {
    n: usize,
    means: Vec<f64>,
    noise: Option<CellNoise>,
}

/// One draw: the permutation and the realized array (row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct PermSample {
    pub pi: Vec<usize>,
    pub x: Vec<f64>,
}

/// `Δ = W - W'` for the swap of `π` at `(i1, i2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairDelta {
    pub i1: usize,
    pub i2: usize,
    pub delta: f64,
}

fn flatten(raw: &[Vec<f64>]) -> Result<(usize, Vec<f64>)> {
    let n = raw.len();
    if n < 2 {
        return Err(Error::InvalidModel(format!("array size must be at least 2, got {n}")));
    }
    if raw.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidModel("array must be square".into()));
    }
    let flat: Vec<f64> = raw.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("array entries must be finite".into()));
    }
    Ok((n, flat))
}

/// Double-centers `raw_means` and rescales means and noise jointly so that
/// `(1/(n-1)) Σ a² + (1/n) Σ c² = 1`. The noise law is standardized first.
pub fn center_normalize(raw_means: &[Vec<f64>], raw_noise: Option<CellNoise>) -> Result<PermArrayModel> {
    let (n, mut a) = flatten(raw_means)?;
    let nf = n as f64;
    let row: Vec<f64> = (0..n).map(|i| a[i * n..(i + 1) * n].iter().sum::<f64>() / nf).collect();
    let col: Vec<f64> = (0..n).map(|j| (0..n).map(|i| a[i * n + j]).sum::<f64>() / nf).collect();
    let grand = row.iter().sum::<f64>() / nf;
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] += grand - row[i] - col[j];
        }
    }
    let noise = match raw_noise {
        None => None,
        Some(cn) => {
            if cn.sd.len() != n * n || cn.sd.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(Error::InvalidModel(format!("noise needs {} non-negative finite sds", n * n)));
            }
            cn.law.validate()?;
            let law = cn.law.standardized()?;
            cn.sd.iter().any(|&s| s > 0.0).then_some(CellNoise { law, sd: cn.sd })
        }
    };
    let mass = a.iter().map(|v| v * v).sum::<f64>() / (nf - 1.0)
        + noise.as_ref().map_or(0.0, |c| c.sd.iter().map(|s| s * s).sum::<f64>() / nf);
    if !(mass > 1e-300) {
        return Err(Error::Degenerate("array is zero after centering and carries no noise".into()));
    }
    let s = mass.sqrt().recip();
    a.iter_mut().for_each(|v| *v *= s);
    let noise = noise.map(|mut c| {
        c.sd.iter_mut().for_each(|v| *v *= s);
        c
    });
    Ok(PermArrayModel { n, means: a, noise })
}

/// Random `N(0,1)` entries, projected by [`center_normalize`].
pub fn gaussian_projected_means(n: usize, rng: &mut McRng) -> Result<PermArrayModel> {
    let s = Sampler::new(&Law::Gaussian { sd: 1.0 }, 0.0);
    let raw: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| s.sample(rng)).collect()).collect();
    center_normalize(&raw, None)
}

/// Structured means `a_{ij} ∝ cos(2π ((i + j) mod n) / n)`, a Latin-square
/// pattern with bounded entries.
pub fn latin_square_means(n: usize) -> Result<PermArrayModel> {
    let raw: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (std::f64::consts::TAU * ((i + j) % n) as f64 / n as f64).cos()).collect())
        .collect();
    center_normalize(&raw, None)
}

impl PermArrayModel {
    /// Wraps an already centered and normalized array, checking both
    /// conditions to `1e-10`.
    pub fn new(means: &[Vec<f64>], noise: Option<CellNoise>) -> Result<Self> {
        let (n, a) = flatten(means)?;
        if let Some(c) = &noise {
            if c.sd.len() != n * n || c.sd.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(Error::InvalidModel(format!("noise needs {} non-negative finite sds", n * n)));
            }
            c.law.validate()?;
            if c.law.mean().abs() > 1e-10 || (c.law.variance() - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidModel("noise law must have mean 0 and variance 1".into()));
            }
        }
        let model = Self { n, means: a, noise };
        let (row, col, norm) = model.invariant_residuals();
        if row > 1e-10 || col > 1e-10 || norm > 1e-10 {
            return Err(Error::InvalidModel(format!(
                "array not centered/normalized: row {row:.3e}, column {col:.3e}, norm {norm:.3e}"
            )));
        }
        Ok(model)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mean(&self, i: usize, j: usize) -> f64 {
        self.means[i * self.n + j]
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.means.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn noise(&self) -> Option<&CellNoise> {
        self.noise.as_ref()
    }

    fn sd(&self, k: usize) -> f64 {
        self.noise.as_ref().map_or(0.0, |c| c.sd[k])
    }

    /// Largest absolute row sum, column sum and normalization error.
    pub fn invariant_residuals(&self) -> (f64, f64, f64) {
        let n = self.n;
        let row = (0..n).map(|i| (0..n).map(|j| self.mean(i, j)).sum::<f64>().abs()).fold(0.0, f64::max);
        let col = (0..n).map(|j| (0..n).map(|i| self.mean(i, j)).sum::<f64>().abs()).fold(0.0, f64::max);
        let mass = self.means.iter().map(|v| v * v).sum::<f64>() / (n as f64 - 1.0)
            + (0..n * n).map(|k| self.sd(k).powi(2)).sum::<f64>() / n as f64;
        (row, col, (mass - 1.0).abs())
    }

    pub fn max_abs_mean(&self) -> f64 {
        self.means.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn noise_sampler(&self) -> Option<Sampler> {
        self.noise.as_ref().map(|c| Sampler::new(&c.law, 0.0))
    }

    fn shuffle(&self, rng: &mut McRng) -> Vec<usize> {
        let mut pi: Vec<usize> = (0..self.n).collect();
        for i in (1..self.n).rev() {
            let j = rng.random_range(0..=i);
            pi.swap(i, j);
        }
        pi
    }

    /// Uniform permutation by Fisher–Yates, then the full array.
    pub fn sample(&self, rng: &mut McRng) -> PermSample {
        let pi = self.shuffle(rng);
        let x = match self.noise_sampler() {
            None => self.means.clone(),
            Some(s) => self.means.iter().enumerate().map(|(k, a)| a + self.sd(k) * s.sample(rng)).collect(),
        };
        PermSample { pi, x }
    }

    /// `W` alone; noise is drawn only on the `n` cells that enter it.
    pub fn sample_w_only(&self, rng: &mut McRng) -> f64 {
        let pi = self.shuffle(rng);
        let n = self.n;
        match self.noise_sampler() {
            None => (0..n).map(|i| self.means[i * n + pi[i]]).sum(),
            Some(s) => (0..n)
                .map(|i| {
                    let k = i * n + pi[i];
                    self.means[k] + self.sd(k) * s.sample(rng)
                })
                .sum(),
        }
    }

    /// `b = max_{ij} E exp(α_n |X_{ij}|)`.
    pub fn certify_moments(&self, alpha_n: f64) -> Result<MomentCertificate> {
        if !(alpha_n >= 1.0 && alpha_n.is_finite()) {
            return Err(Error::Domain(format!("alpha_n must be >= 1, got {alpha_n}")));
        }
        let mut b = 1.0f64;
        let mut exact = true;
        for (k, &a) in self.means.iter().enumerate() {
            let c = self.sd(k);
            let v = match (&self.noise, c > 0.0) {
                (Some(cn), true) => {
                    let (v, ex) = cn
                        .law
                        .shifted_abs_mgf(a / c, alpha_n * c)
                        .ok_or_else(|| Error::Certificate(format!("E exp(α_n |X|) diverges at α_n = {alpha_n}")))?;
                    exact &= ex;
                    v
                }
                _ => (alpha_n * a.abs()).exp(),
            };
            if !v.is_finite() {
                return Err(Error::Certificate(format!("E exp(α_n |X|) overflows at α_n = {alpha_n}")));
            }
            b = b.max(v);
        }
        Ok(MomentCertificate { a_n: alpha_n, b, method: CertMethod::Analytic, exact })
    }
}

impl PermSample {
    pub fn n(&self) -> usize {
        self.pi.len()
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.pi.len() + j]
    }

    pub fn w(&self) -> f64 {
        (0..self.n()).map(|i| self.at(i, self.pi[i])).sum()
    }

    /// `D_{(i1,i2),(π(i1),π(i2))}`.
    pub fn d(&self, i1: usize, i2: usize) -> f64 {
        let (p1, p2) = (self.pi[i1], self.pi[i2]);
        self.at(i1, p1) + self.at(i2, p2) - self.at(i1, p2) - self.at(i2, p1)
    }

    pub fn pair_delta(&self, i1: usize, i2: usize) -> PairDelta {
        PairDelta { i1, i2, delta: self.d(i1, i2) }
    }

    /// `W'` after swapping `π(i1)` and `π(i2)`.
    pub fn swapped(&self, i1: usize, i2: usize) -> PermSample {
        let mut pi = self.pi.clone();
        pi.swap(i1, i2);
        PermSample { pi, x: self.x.clone() }
    }

    /// `K̂₁ = (1/4n) Σ_{[n]₂} D²`.
    pub fn k1(&self) -> f64 {
        let n = self.n();
        let mut s = 0.0;
        for i1 in 0..n {
            for i2 in i1 + 1..n {
                s += self.d(i1, i2).powi(2);
            }
        }
        2.0 * s / (4.0 * n as f64)
    }
}

/// `R = (1/n) Σ_{ij} X_{ij}`.
pub fn remainder_r(sample: &PermSample) -> f64 {
    sample.x.iter().sum::<f64>() / sample.n() as f64
}

/// `|avg_{[n]₂} Δ - (2/(n-1)) (W - R)|`.
pub fn pair_drift_check(sample: &PermSample) -> f64 {
    let n = sample.n();
    let mut total = 0.0;
    for i1 in 0..n {
        for i2 in 0..n {
            if i1 != i2 {
                total += sample.d(i1, i2);
            }
        }
    }
    let avg = total / (n * (n - 1)) as f64;
    (avg - 2.0 / (n as f64 - 1.0) * (sample.w() - remainder_r(sample))).abs()
}

/// Step representation of `K̂`. `D` is symmetric in `(i1, i2)`, so each
/// unordered pair contributes twice.
pub fn kernel_comb(sample: &PermSample) -> KernelFunction {
    let n = sample.n();
    let scale = 2.0 / (4.0 * n as f64);
    let mut boxes = Vec::with_capacity(n * (n - 1) / 2);
    for i1 in 0..n {
        for i2 in i1 + 1..n {
            let d = sample.d(i1, i2);
            if d > 0.0 {
                boxes.push((-d, 0.0, scale * d));
            } else if d < 0.0 {
                boxes.push((0.0, -d, -scale * d));
            }
        }
    }
    KernelFunction::from_boxes(boxes)
}

/// Visits every permutation of `0..n` (Heap's algorithm).
pub fn for_each_permutation(n: usize, visit: &mut dyn FnMut(&[usize])) {
    let mut pi: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    visit(&pi);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                pi.swap(0, i);
            } else {
                pi.swap(c[i], i);
            }
            visit(&pi);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl PermArrayModel {
    fn outcome_total(&self) -> Option<f64> {
        let perms = factorial(self.n);
        match &self.noise {
            None => Some(perms),
            Some(c) => {
                let s = c.law.atoms()?.len() as f64;
                let cells = c.sd.iter().filter(|&&v| v > 0.0).count();
                Some(perms * s.powi(cells as i32))
            }
        }
    }

    /// Calls `visit(prob, sample)` for every joint (array, permutation) outcome.
    pub fn for_each_sample(&self, visit: &mut dyn FnMut(f64, &PermSample)) -> Result<()> {
        let total = self
            .outcome_total()
            .ok_or_else(|| Error::Capability("enumeration needs discrete cell noise".into()))?;
        if total > ENUMERATION_LIMIT as f64 {
            return Err(Error::Capability(format!("{total} outcomes exceed the enumeration limit {ENUMERATION_LIMIT}")));
        }
        let n = self.n;
        let p_perm = 1.0 / factorial(n);
        let mut sample = PermSample { pi: (0..n).collect(), x: self.means.clone() };
        match &self.noise {
            None => {
                for_each_permutation(n, &mut |pi| {
                    sample.pi.copy_from_slice(pi);
                    visit(p_perm, &sample);
                });
                Ok(())
            }
            Some(c) => {
                let atoms = c.law.atoms().expect("checked above");
                let cells: Vec<usize> = (0..n * n).filter(|&k| c.sd[k] > 0.0).collect();
                enumerate_products(atoms, cells.len(), &mut |p, vals| {
                    for (&k, &v) in cells.iter().zip(vals) {
                        sample.x[k] = self.means[k] + c.sd[k] * v;
                    }
                    for_each_permutation(n, &mut |pi| {
                        sample.pi.copy_from_slice(pi);
                        visit(p * p_perm, &sample);
                    });
                })
            }
        }
    }

    /// Largest `|P(W=w, W'=w') - P(W=w', W'=w)|` under uniform `(π, I)`,
    /// by enumeration.
    pub fn exchangeability_gap(&self) -> Result<f64> {
        let n = self.n;
        let pairs = (n * (n - 1)) as f64;
        let key = |v: f64| (v * 1e9).round() as i64;
        let mut joint: std::collections::HashMap<(i64, i64), f64> = std::collections::HashMap::new();
        self.for_each_sample(&mut |p, s| {
            let w = s.w();
            for i1 in 0..n {
                for i2 in 0..n {
                    if i1 != i2 {
                        *joint.entry((key(w), key(w - s.d(i1, i2)))).or_default() += p / pairs;
                    }
                }
            }
        })?;
        Ok(joint
            .iter()
            .map(|(&(a, b), &p)| (p - joint.get(&(b, a)).copied().unwrap_or(0.0)).abs())
            .fold(0.0, f64::max))
    }
}

impl SteinModel for PermArrayModel {
    fn label(&self) -> String {
        format!("perm(n={}, noise={})", self.n, self.noise.is_some())
    }

    fn outcome_count(&self) -> Option<u64> {
        self.outcome_total().filter(|&c| c < u64::MAX as f64).map(|c| c as u64)
    }

    fn for_each_outcome(&self, visit: &mut dyn FnMut(f64, Realization)) -> Result<()> {
        self.for_each_sample(&mut |p, s| {
            visit(p, Realization { w: s.w(), r: remainder_r(s), kernel: kernel_comb(s) })
        })
    }

    fn for_each_w(&self, visit: &mut dyn FnMut(f64, f64)) -> Result<()> {
        self.for_each_sample(&mut |p, s| visit(p, s.w()))
    }

    fn sample(&self, rng: &mut McRng) -> Realization {
        let s = PermArrayModel::sample(self, rng);
        Realization { w: s.w(), r: remainder_r(&s), kernel: kernel_comb(&s) }
    }

    fn sample_w(&self, rng: &mut McRng) -> f64 {
        self.sample_w_only(rng)
    }
}
