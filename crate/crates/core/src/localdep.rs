//! Locally dependent fields on a lattice.
//!
//! A field is built as a moving sum of i.i.d. innovations over the forward
//! window `{0..=m}^d`, which makes it exactly `m`-dependent in sup-distance.
//! With `A_i = ball(i, m)` and `B_i = ball(i, 2m)` it then satisfies
//! (LD1)/(LD2), and the Stein identity holds with `R = 0` and
//! `K̂(u) = Σ_i X_i {1(-Y_i ≤ u < 0) - 1(0 ≤ u ≤ -Y_i)}`, `Y_i = Σ_{j∈A_i} X_j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelFunction;
use crate::law::{Law, Sampler};
use crate::mc::{McPlan, McRng, MeanVar};
use crate::model::{LinearForm, Realization, SteinModel, ENUMERATION_LIMIT};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Open,
    /// Torus; distances wrap around in every coordinate.
    Periodic,
}

/// Box `{0..shape[0]} × ... × {0..shape[d-1]}` in `Z^d`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeIndexSet {
    shape: Vec<usize>,
}

impl LatticeIndexSet {
    pub fn new(shape: Vec<usize>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&s| s == 0) {
            return Err(Error::InvalidModel(format!("lattice shape must be non-empty and positive: {shape:?}")));
        }
        Ok(Self { shape })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_multi(&self, mut lin: usize) -> Vec<usize> {
        let mut out = vec![0; self.shape.len()];
        for k in (0..self.shape.len()).rev() {
            out[k] = lin % self.shape[k];
            lin /= self.shape[k];
        }
        out
    }

    pub fn to_linear(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.shape).fold(0, |acc, (&x, &s)| acc * s + x)
    }

    /// Sup-distance between two sites.
    pub fn distance(&self, i: usize, j: usize, boundary: Boundary) -> usize {
        let (a, b) = (self.to_multi(i), self.to_multi(j));
        a.iter()
            .zip(&b)
            .zip(&self.shape)
            .map(|((&x, &y), &s)| {
                let d = x.abs_diff(y);
                match boundary {
                    Boundary::Open => d,
                    Boundary::Periodic => d.min(s - d),
                }
            })
            .max()
            .unwrap_or(0)
    }

    /// Sorted sites within sup-distance `r` of `i`.
    pub fn ball(&self, i: usize, r: usize, boundary: Boundary) -> Vec<usize> {
        let centre = self.to_multi(i);
        let d = self.shape.len();
        let side = 2 * r + 1;
        let mut out = Vec::with_capacity(side.pow(d as u32));
        let mut pos = vec![0usize; d];
        'outer: for code in 0..side.pow(d as u32) {
            let mut c = code;
            for k in (0..d).rev() {
                let off = (c % side) as isize - r as isize;
                c /= side;
                let x = centre[k] as isize + off;
                let s = self.shape[k] as isize;
                pos[k] = match boundary {
                    Boundary::Open if x < 0 || x >= s => continue 'outer,
                    Boundary::Open => x as usize,
                    Boundary::Periodic => x.rem_euclid(s) as usize,
                };
            }
            out.push(self.to_linear(&pos));
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Dependency neighbourhoods `A_i ⊆ B_i`, overlap sets
/// `N_i = {j : B_i ∩ B_j ≠ ∅}` and `κ = max_i |N_i|`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborhoodSystem {
    a: Vec<Vec<usize>>,
    b: Vec<Vec<usize>>,
    overlap: Vec<Vec<usize>>,
    kappa: usize,
}

impl NeighborhoodSystem {
    /// `A_i`, `B_i` given explicitly; `N_i` by pairwise intersection.
    pub fn from_sets(a: Vec<Vec<usize>>, b: Vec<Vec<usize>>) -> Result<Self> {
        let n = a.len();
        if b.len() != n {
            return Err(Error::InvalidModel("A and B must have one set per site".into()));
        }
        let mut member = vec![vec![false; n]; n];
        for i in 0..n {
            for &j in &b[i] {
                member[i][j] = true;
            }
            if !a[i].contains(&i) || a[i].iter().any(|j| !member[i][*j]) {
                return Err(Error::InvalidModel(format!("need i ∈ A_i ⊆ B_i at site {i}")));
            }
        }
        let overlap: Vec<Vec<usize>> =
            (0..n).map(|i| (0..n).filter(|&j| b[j].iter().any(|&k| member[i][k])).collect()).collect();
        let kappa = overlap.iter().map(Vec::len).max().unwrap_or(0);
        Ok(Self { a, b, overlap, kappa })
    }

    /// `A_i = ball(i, m)`, `B_i = ball(i, 2m)`. Balls are symmetric, so
    /// `N_i` is the union of `B_k` over `k ∈ B_i`.
    pub fn radius(index: &LatticeIndexSet, m: usize, boundary: Boundary) -> Self {
        let n = index.len();
        let a: Vec<Vec<usize>> = (0..n).map(|i| index.ball(i, m, boundary)).collect();
        let b: Vec<Vec<usize>> = (0..n).map(|i| index.ball(i, 2 * m, boundary)).collect();
        let mut seen = vec![usize::MAX; n];
        let overlap: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut out = Vec::new();
                for &k in &b[i] {
                    for &j in &b[k] {
                        if seen[j] != i {
                            seen[j] = i;
                            out.push(j);
                        }
                    }
                }
                out.sort_unstable();
                out
            })
            .collect();
        let kappa = overlap.iter().map(Vec::len).max().unwrap_or(0);
        Self { a, b, overlap, kappa }
    }

    pub fn a(&self, i: usize) -> &[usize] {
        &self.a[i]
    }

    pub fn b(&self, i: usize) -> &[usize] {
        &self.b[i]
    }

    pub fn overlap(&self, i: usize) -> &[usize] {
        &self.overlap[i]
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }
}

/// How `E exp(a_n T_i)` was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertMethod {
    Analytic,
    Enumerated,
    McUpper,
}

/// Certifies `max_i E exp(a_n Σ_{j∈B_i} |X_j|) ≤ b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCertificate {
    pub a_n: f64,
    pub b: f64,
    pub method: CertMethod,
    /// True when `b` is the maximum itself rather than an upper bound on it.
    pub exact: bool,
}

/// m-dependent moving-sum field `X_i = scale · Σ_{k∈{0..m}^d} w_k ε_{i+k}`.
#[derive(Clone, Debug)]
pub struct LocalFieldModel {
    index: LatticeIndexSet,
    m: usize,
    boundary: Boundary,
    nbhd: NeighborhoodSystem,
    innovation: Law,
    weights: Vec<f64>,
    scale: f64,
    innovation_count: usize,
    /// Per site: `(innovation, weight)` pairs, unscaled.
    taps: Vec<Vec<(usize, f64)>>,
    /// Per innovation: its coefficient in `W`, scaled.
    coef: Vec<f64>,
}

/// Builds the canonical m-dependent field on `shape`. `weights` has one entry
/// per offset in `{0..=m}^d` (row-major); `None` means all ones. The
/// innovation law is centered and the field rescaled so `Var(W) = 1`.
pub fn build_mdep_field(
    shape: Vec<usize>,
    m: usize,
    innovation: Law,
    weights: Option<Vec<f64>>,
    boundary: Boundary,
) -> Result<LocalFieldModel> {
    innovation.validate()?;
    let index = LatticeIndexSet::new(shape)?;
    let d = index.dim();
    let window = (m + 1).pow(d as u32);
    let weights = weights.unwrap_or_else(|| vec![1.0; window]);
    if weights.len() != window || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidModel(format!("need {window} finite window weights, got {}", weights.len())));
    }
    let innovation = innovation.centered();
    let innov_shape: Vec<usize> = match boundary {
        Boundary::Open => index.shape().iter().map(|s| s + m).collect(),
        Boundary::Periodic => index.shape().to_vec(),
    };
    let innov_index = LatticeIndexSet::new(innov_shape)?;
    let offsets = LatticeIndexSet::new(vec![m + 1; d])?;
    let taps: Vec<Vec<(usize, f64)>> = (0..index.len())
        .map(|i| {
            let site = index.to_multi(i);
            let mut row: Vec<(usize, f64)> = (0..window)
                .filter(|&k| weights[k] != 0.0)
                .map(|k| {
                    let off = offsets.to_multi(k);
                    let pos: Vec<usize> = site
                        .iter()
                        .zip(&off)
                        .zip(index.shape())
                        .map(|((&x, &o), &s)| match boundary {
                            Boundary::Open => x + o,
                            Boundary::Periodic => (x + o) % s,
                        })
                        .collect();
                    (innov_index.to_linear(&pos), weights[k])
                })
                .collect();
            row.sort_by_key(|t| t.0);
            row
        })
        .collect();
    let mut coef = vec![0.0; innov_index.len()];
    for row in &taps {
        for &(e, w) in row {
            coef[e] += w;
        }
    }
    let var_w = innovation.variance() * coef.iter().map(|c| c * c).sum::<f64>();
    if !(var_w > 0.0) || !var_w.is_finite() {
        return Err(Error::Degenerate("Var(W) is zero for this recipe".into()));
    }
    let scale = 1.0 / var_w.sqrt();
    coef.iter_mut().for_each(|c| *c *= scale);
    let nbhd = NeighborhoodSystem::radius(&index, m, boundary);
    Ok(LocalFieldModel {
        index,
        m,
        boundary,
        nbhd,
        innovation,
        weights,
        scale,
        innovation_count: innov_index.len(),
        taps,
        coef,
    })
}

impl LocalFieldModel {
    pub fn index_set(&self) -> &LatticeIndexSet {
        &self.index
    }

    pub fn neighborhoods(&self) -> &NeighborhoodSystem {
        &self.nbhd
    }

    pub fn kappa(&self) -> usize {
        self.nbhd.kappa()
    }

    pub fn n(&self) -> usize {
        self.index.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn innovation(&self) -> &Law {
        &self.innovation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn innovation_count(&self) -> usize {
        self.innovation_count
    }

    /// Innovations that site `i` depends on.
    pub fn innovations_of(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.taps[i].iter().map(|t| t.0)
    }

    /// `Var(W)` recomputed from the per-innovation coefficients.
    pub fn variance_w(&self) -> f64 {
        self.innovation.variance() * self.coef.iter().map(|c| c * c).sum::<f64>()
    }

    /// Field values `X_i` for a vector of innovations.
    pub fn field_from_innovations(&self, eps: &[f64]) -> Vec<f64> {
        self.taps.iter().map(|row| self.scale * row.iter().map(|&(e, w)| w * eps[e]).sum::<f64>()).collect()
    }

    /// `Y_i = Σ_{j∈A_i} X_j`.
    pub fn local_sums(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len()).map(|i| self.nbhd.a(i).iter().map(|&j| x[j]).sum()).collect()
    }

    /// Exact step representation of `K̂` for one realization of the field.
    pub fn kernel_local(&self, x: &[f64]) -> KernelFunction {
        let y = self.local_sums(x);
        kernel_from_local_sums(x, &y)
    }

    pub fn realize(&self, eps: &[f64]) -> Realization {
        let x = self.field_from_innovations(eps);
        let w = x.iter().sum();
        Realization { w, r: 0.0, kernel: self.kernel_local(&x) }
    }

    pub fn sample_field(&self, rng: &mut McRng) -> Vec<f64> {
        let eps = self.sample_innovations(rng);
        self.field_from_innovations(&eps)
    }

    fn sample_innovations(&self, rng: &mut McRng) -> Vec<f64> {
        let s = Sampler::new(&self.innovation, 0.0);
        (0..self.innovation_count).map(|_| s.sample(rng)).collect()
    }

    /// Calls `visit(prob, innovations)` for every joint innovation outcome.
    fn enumerate_innovations(&self, visit: &mut dyn FnMut(f64, &[f64])) -> Result<()> {
        let atoms = self
            .innovation
            .atoms()
            .ok_or_else(|| Error::Capability("enumeration needs a discrete innovation law".into()))?;
        enumerate_products(atoms, self.innovation_count, visit)
    }

    /// `b = max_i E exp(a_n T_i)`, `T_i = Σ_{j∈B_i} |X_j|`.
    ///
    /// Exact when `m = 0` (closed-form MGF of `|X_i|`) or when the innovations
    /// feeding each block are discrete and few enough to enumerate; otherwise
    /// the product bound `Π_e E exp(a_n scale c_e |ε_e|)` from the triangle
    /// inequality, flagged as inexact.
    pub fn certify_moments(&self, a_n: f64) -> Result<MomentCertificate> {
        if !(a_n >= 1.0 && a_n.is_finite()) {
            return Err(Error::Domain(format!("a_n must be >= 1, got {a_n}")));
        }
        let diverged = || Error::Certificate(format!("E exp(a_n T_i) diverges at a_n = {a_n}"));
        let mut best = 1.0f64;
        let mut exact = true;
        let mut method = CertMethod::Analytic;
        for i in 0..self.n() {
            // Per innovation, the summed |weight| it carries into T_i.
            let mut load: Vec<(usize, f64)> = Vec::new();
            let mut sites = Vec::new();
            for &j in self.nbhd.b(i) {
                sites.push(j);
                for &(e, w) in &self.taps[j] {
                    match load.iter_mut().find(|l| l.0 == e) {
                        Some(l) => l.1 += w.abs(),
                        None => load.push((e, w.abs())),
                    }
                }
            }
            let single_source = sites.iter().all(|&j| self.taps[j].len() <= 1)
                && load.len() == sites.iter().map(|&j| self.taps[j].len()).sum::<usize>();
            let value = if single_source {
                // Each |X_j| is a function of its own innovation: the bound is exact.
                let mut v = 1.0;
                for &(_, c) in &load {
                    v *= self.innovation.shifted_abs_mgf(0.0, a_n * self.scale * c).ok_or_else(diverged)?.0;
                }
                v
            } else if let Some(atoms) = self.innovation.atoms().filter(|a| {
                (a.len() as f64).powi(load.len() as i32) <= ENUMERATION_LIMIT as f64
            }) {
                method = CertMethod::Enumerated;
                let local: Vec<usize> = load.iter().map(|l| l.0).collect();
                let mut total = 0.0;
                let mut eps = vec![0.0; self.innovation_count];
                enumerate_products(atoms, local.len(), &mut |p, vals| {
                    for (k, &e) in local.iter().enumerate() {
                        eps[e] = vals[k];
                    }
                    let t: f64 = sites
                        .iter()
                        .map(|&j| (self.scale * self.taps[j].iter().map(|&(e, w)| w * eps[e]).sum::<f64>()).abs())
                        .sum();
                    total += p * (a_n * t).exp();
                })?;
                total
            } else {
                exact = false;
                let mut v = 1.0;
                for &(_, c) in &load {
                    v *= self.innovation.shifted_abs_mgf(0.0, a_n * self.scale * c).ok_or_else(diverged)?.0;
                }
                v
            };
            if !value.is_finite() {
                return Err(diverged());
            }
            best = best.max(value);
        }
        Ok(MomentCertificate { a_n, b: best, method, exact })
    }

    /// Monte Carlo upper confidence bound `max_i (mean_i + 4 se_i)` for
    /// `E exp(a_n T_i)`.
    pub fn certify_moments_mc(&self, a_n: f64, plan: &McPlan) -> Result<MomentCertificate> {
        if !(a_n >= 1.0 && a_n.is_finite()) {
            return Err(Error::Domain(format!("a_n must be >= 1, got {a_n}")));
        }
        let n = self.n();
        let parts = plan.run(|rng, count| {
            let mut acc = vec![MeanVar::default(); n];
            for _ in 0..count {
                let x = self.sample_field(rng);
                for (i, a) in acc.iter_mut().enumerate() {
                    let t: f64 = self.nbhd.b(i).iter().map(|&j| x[j].abs()).sum();
                    a.push((a_n * t).exp());
                }
            }
            acc
        })?;
        let mut best = 1.0f64;
        for i in 0..n {
            let mv = MeanVar::merged(parts.iter().map(|p| &p[i]));
            best = best.max(mv.mean + 4.0 * mv.stderr());
        }
        if !best.is_finite() {
            return Err(Error::Certificate("Monte Carlo moment estimate is not finite".into()));
        }
        Ok(MomentCertificate { a_n, b: best, method: CertMethod::McUpper, exact: false })
    }
}

/// `K̂(u) = Σ_i X_i {1(-Y_i ≤ u < 0) - 1(0 ≤ u ≤ -Y_i)}`.
pub fn kernel_from_local_sums(x: &[f64], y: &[f64]) -> KernelFunction {
    KernelFunction::from_boxes(x.iter().zip(y).filter_map(|(&xi, &yi)| {
        if yi > 0.0 {
            Some((-yi, 0.0, xi))
        } else if yi < 0.0 {
            Some((0.0, -yi, -xi))
        } else {
            None
        }
    }))
}

/// Odometer over `atoms^count`, visiting `(Π p, values)`.
pub(crate) fn enumerate_products(
    atoms: &[(f64, f64)],
    count: usize,
    visit: &mut dyn FnMut(f64, &[f64]),
) -> Result<()> {
    let s = atoms.len();
    let total = (s as f64).powi(count as i32);
    if total > ENUMERATION_LIMIT as f64 {
        return Err(Error::Capability(format!("{total} outcomes exceed the enumeration limit {ENUMERATION_LIMIT}")));
    }
    let mut digits = vec![0usize; count];
    let mut vals: Vec<f64> = vec![atoms[0].0; count];
    loop {
        let p: f64 = digits.iter().map(|&k| atoms[k].1).product();
        visit(p, &vals);
        let mut pos = 0;
        loop {
            if pos == count {
                return Ok(());
            }
            digits[pos] += 1;
            if digits[pos] < s {
                vals[pos] = atoms[digits[pos]].0;
                break;
            }
            digits[pos] = 0;
            vals[pos] = atoms[0].0;
            pos += 1;
        }
    }
}

impl SteinModel for LocalFieldModel {
    fn label(&self) -> String {
        format!("local(shape={:?}, m={}, {:?})", self.index.shape(), self.m, self.boundary)
    }

    fn outcome_count(&self) -> Option<u64> {
        let s = self.innovation.atoms()?.len() as f64;
        let c = s.powi(self.innovation_count as i32);
        (c < u64::MAX as f64).then_some(c as u64)
    }

    fn for_each_outcome(&self, visit: &mut dyn FnMut(f64, Realization)) -> Result<()> {
        self.enumerate_innovations(&mut |p, eps| visit(p, self.realize(eps)))
    }

    fn for_each_w(&self, visit: &mut dyn FnMut(f64, f64)) -> Result<()> {
        self.enumerate_innovations(&mut |p, eps| visit(p, self.coef.iter().zip(eps).map(|(c, e)| c * e).sum()))
    }

    fn sample(&self, rng: &mut McRng) -> Realization {
        let eps = self.sample_innovations(rng);
        self.realize(&eps)
    }

    fn sample_w(&self, rng: &mut McRng) -> f64 {
        let s = Sampler::new(&self.innovation, 0.0);
        self.coef.iter().map(|c| c * s.sample(rng)).sum()
    }

    fn linear_form(&self) -> Option<LinearForm> {
        let mut terms: Vec<(f64, usize)> = Vec::new();
        for &c in &self.coef {
            if c == 0.0 {
                continue;
            }
            match terms.iter_mut().find(|t| t.0 == c) {
                Some(t) => t.1 += 1,
                None => terms.push((c, 1)),
            }
        }
        Some(LinearForm { law: self.innovation.clone(), terms })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::substream;

    fn rademacher_iid(n: usize) -> LocalFieldModel {
        build_mdep_field(vec![n], 0, Law::rademacher(), None, Boundary::Open).unwrap()
    }

    #[test]
    fn iid_rademacher_field() {
        let m = rademacher_iid(16);
        assert_eq!(m.kappa(), 1);
        assert!((m.scale() - 0.25).abs() < 1e-15);
        assert!((m.variance_w() - 1.0).abs() < 1e-14);
        let mut rng = substream(3, 0);
        let x = m.sample_field(&mut rng);
        assert!(x.iter().all(|v| (v.abs() - 0.25).abs() < 1e-15));
        let k = m.kernel_local(&x);
        assert!((k.integral() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn moving_sum_kappa_within_lattice_count() {
        let m = build_mdep_field(vec![20], 1, Law::rademacher(), None, Boundary::Open).unwrap();
        assert!(m.kappa() <= 9);
        assert_eq!(m.kappa(), 9);
        let m = build_mdep_field(vec![4, 4], 1, Law::rademacher(), None, Boundary::Periodic).unwrap();
        assert!(m.kappa() <= 81);
        assert_eq!(m.kappa(), 16);
        let m = build_mdep_field(vec![9, 9], 1, Law::rademacher(), None, Boundary::Periodic).unwrap();
        assert_eq!(m.kappa(), 81);
        let m = build_mdep_field(vec![9, 9], 1, Law::rademacher(), None, Boundary::Open).unwrap();
        assert_eq!(m.kappa(), 81);
        let m = build_mdep_field(vec![7, 7], 1, Law::rademacher(), None, Boundary::Open).unwrap();
        assert_eq!(m.kappa(), 49);
    }

    #[test]
    fn radius_overlap_matches_pairwise_intersection() {
        for (shape, mm, bd) in [
            (vec![11], 1, Boundary::Open),
            (vec![6, 5], 1, Boundary::Open),
            (vec![7, 7], 1, Boundary::Periodic),
            (vec![13], 2, Boundary::Periodic),
        ] {
            let idx = LatticeIndexSet::new(shape).unwrap();
            let fast = NeighborhoodSystem::radius(&idx, mm, bd);
            let n = idx.len();
            let a = (0..n).map(|i| fast.a(i).to_vec()).collect();
            let b = (0..n).map(|i| fast.b(i).to_vec()).collect();
            let slow = NeighborhoodSystem::from_sets(a, b).unwrap();
            assert_eq!(fast, slow);
            assert!(fast.kappa() <= (8 * mm + 1).pow(idx.dim() as u32));
        }
    }

    #[test]
    fn neighborhoods_realize_local_dependence() {
        // X_i shares no innovation with X_{A_i^c}, and X_{A_i} none with X_{B_i^c}.
        for (shape, mm, bd) in [(vec![12], 1, Boundary::Open), (vec![5, 6], 1, Boundary::Periodic), (vec![10], 2, Boundary::Open)] {
            let f = build_mdep_field(shape, mm, Law::rademacher(), None, bd).unwrap();
            let nb = f.neighborhoods();
            for i in 0..f.n() {
                let own: Vec<usize> = f.innovations_of(i).collect();
                let block: Vec<usize> = nb.a(i).iter().flat_map(|&j| f.innovations_of(j)).collect();
                for j in 0..f.n() {
                    let theirs: Vec<usize> = f.innovations_of(j).collect();
                    if !nb.a(i).contains(&j) {
                        assert!(own.iter().all(|e| !theirs.contains(e)), "LD1 fails at {i},{j}");
                    }
                    if !nb.b(i).contains(&j) {
                        assert!(block.iter().all(|e| !theirs.contains(e)), "LD2 fails at {i},{j}");
                    }
                }
            }
        }
    }

    #[test]
    fn degenerate_recipe_is_rejected() {
        let r = build_mdep_field(vec![4], 1, Law::rademacher(), Some(vec![0.0, 0.0]), Boundary::Open);
        assert!(matches!(r, Err(Error::Degenerate(_))));
        let point = Law::Discrete { atoms: crate::law::DiscreteDistribution::new(vec![(3.0, 1.0)]).unwrap() };
        assert!(build_mdep_field(vec![4], 0, point, None, Boundary::Open).is_err());
        assert!(build_mdep_field(vec![4], 1, Law::rademacher(), Some(vec![1.0]), Boundary::Open).is_err());
    }

    #[test]
    fn single_site_kernel() {
        let k = kernel_from_local_sums(&[1.0], &[1.0]);
        assert_eq!(k.eval(-0.5), 1.0);
        assert_eq!(k.eval(0.5), 0.0);
        assert_eq!(k.eval(-1.5), 0.0);
        assert_eq!(k.breakpoints(), &[-1.0, 0.0]);
    }

    #[test]
    fn kernel_integral_equals_sum_x_y() {
        let f = build_mdep_field(vec![30], 2, Law::Uniform { half_width: 1.0 }, Some(vec![1.0, -0.5, 2.0]), Boundary::Open)
            .unwrap();
        let mut rng = substream(9, 0);
        for _ in 0..50 {
            let x = f.sample_field(&mut rng);
            let y = f.local_sums(&x);
            let direct: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            let k = kernel_from_local_sums(&x, &y);
            assert!((k.integral() - direct).abs() < 1e-12);
            let ymax = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if let Some((lo, hi)) = k.support() {
                assert!(lo >= -ymax - 1e-15 && hi <= ymax + 1e-15);
            }
        }
    }

    #[test]
    fn enumeration_gives_unit_variance_and_kernel_mean() {
        let f = build_mdep_field(vec![5], 1, Law::rademacher(), Some(vec![1.0, 0.5]), Boundary::Open).unwrap();
        assert_eq!(f.outcome_count(), Some(64));
        let (mut ew, mut ew2, mut ek1, mut total) = (0.0, 0.0, 0.0, 0.0);
        f.for_each_outcome(&mut |p, r| {
            total += p;
            ew += p * r.w;
            ew2 += p * r.w * r.w;
            ek1 += p * r.kernel.integral();
        })
        .unwrap();
        assert!((total - 1.0).abs() < 1e-14);
        assert!(ew.abs() < 1e-14);
        assert!((ew2 - 1.0).abs() < 1e-12);
        assert!((ek1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_and_unit_variance() {
        let f = rademacher_iid(10_000);
        let a = f.sample_w(&mut substream(1, 0));
        let b = f.sample_w(&mut substream(1, 0));
        assert_eq!(a.to_bits(), b.to_bits());
        let mut rng = substream(2, 0);
        let mut mv = MeanVar::default();
        for _ in 0..4000 {
            mv.push(f.sample_w(&mut rng));
        }
        assert!((mv.variance() - 1.0).abs() < 0.05 * 2.0);
        assert!(mv.mean.abs() < 4.0 * mv.stderr());
    }

    #[test]
    fn sample_frequencies_match_enumeration() {
        // 3-site Rademacher moving sum: W takes few values; chi-square at 1%.
        let f = build_mdep_field(vec![3], 1, Law::rademacher(), None, Boundary::Open).unwrap();
        let dist = crate::model::exact_w_distribution(&f).unwrap();
        let n = 40_000;
        let mut counts = vec![0usize; dist.len()];
        let mut rng = substream(4, 0);
        for _ in 0..n {
            let w = f.sample_w(&mut rng);
            let k = dist.iter().position(|a| (a.0 - w).abs() < 1e-9).expect("sampled W off the support");
            counts[k] += 1;
        }
        let chi2: f64 = dist
            .iter()
            .zip(&counts)
            .map(|(&(_, p), &c)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // 99th percentile of chi-square with (atoms - 1) <= 6 degrees of freedom.
        assert!(dist.len() <= 7);
        assert!(chi2 < 16.81, "chi2 = {chi2}");
    }

    #[test]
    fn moment_certificates() {
        let n = 100;
        let f = rademacher_iid(n);
        let c = f.certify_moments((n as f64).sqrt()).unwrap();
        assert!((c.b - std::f64::consts::E).abs() < 1e-12);
        assert!(c.exact);

        // centered uniform, a_n = sqrt(n): a_n·|X| = sqrt(3)|U| with U uniform on [-1,1].
        let f = build_mdep_field(vec![n], 0, Law::Uniform { half_width: 2.0 }, None, Boundary::Open).unwrap();
        let c = f.certify_moments((n as f64).sqrt()).unwrap();
        let s3 = 3f64.sqrt();
        assert!((c.b - (s3.exp() - 1.0) / s3).abs() < 1e-12);

        let f = build_mdep_field(vec![n], 0, Law::Laplace { scale: 1.0 }, None, Boundary::Open).unwrap();
        assert!(matches!(f.certify_moments(50.0), Err(Error::Certificate(_))));
        assert!(f.certify_moments(0.5).is_err());
    }

    #[test]
    fn enumerated_certificate_bounded_by_product_bound() {
        let f = build_mdep_field(vec![12], 1, Law::rademacher(), Some(vec![1.0, -0.5]), Boundary::Open).unwrap();
        let c = f.certify_moments(2.0).unwrap();
        assert_eq!(c.method, CertMethod::Enumerated);
        // Triangle-inequality bound from the coefficients.
        let g = build_mdep_field(vec![12], 1, Law::Uniform { half_width: 1.0 }, Some(vec![1.0, -0.5]), Boundary::Open)
            .unwrap();
        let cu = g.certify_moments(2.0).unwrap();
        assert!(!cu.exact);
        let mc = f.certify_moments_mc(2.0, &McPlan::new(20_000, 5)).unwrap();
        assert!(mc.b >= c.b * 0.95);
        assert!(c.b >= 1.0);
    }
}
