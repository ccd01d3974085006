//! Common interface over the statistics that satisfy a Stein identity
//! `E{W f(W)} = E ∫ f'(W+u) K̂(u) du + E{R f(W)}`.

use crate::error::Result;
use crate::kernel::KernelFunction;
use crate::law::Law;
use crate::mc::McRng;

/// Exact enumeration is refused above this many joint outcomes.
pub const ENUMERATION_LIMIT: u64 = 2_000_000;

/// One draw of `(W, R, K̂)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Realization {
    pub w: f64,
    pub r: f64,
    pub kernel: KernelFunction,
}

/// `W = Σ_g coef_g · (sum of `count_g` i.i.d. copies of `law`)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearForm {
    pub law: Law,
    pub terms: Vec<(f64, usize)>,
}

pub trait SteinModel: Sync {
    /// Short human-readable identifier.
    fn label(&self) -> String;

    /// Number of joint outcomes when the model is finitely supported.
    fn outcome_count(&self) -> Option<u64>;

    fn is_enumerable(&self) -> bool {
        self.outcome_count().is_some_and(|c| c <= ENUMERATION_LIMIT)
    }

    /// Calls `visit(probability, realization)` for every joint outcome.
    fn for_each_outcome(&self, visit: &mut dyn FnMut(f64, Realization)) -> Result<()>;

    /// Like [`SteinModel::for_each_outcome`] but only `(probability, W)`.
    fn for_each_w(&self, visit: &mut dyn FnMut(f64, f64)) -> Result<()> {
        self.for_each_outcome(&mut |p, r| visit(p, r.w))
    }

    fn sample(&self, rng: &mut McRng) -> Realization;

    /// Draws `W` alone, skipping the kernel.
    fn sample_w(&self, rng: &mut McRng) -> f64;

    /// Representation of `W` as a weighted sum of independent innovations,
    /// when one exists; this is what exponential tilting needs.
    fn linear_form(&self) -> Option<LinearForm> {
        None
    }
}

/// Exact law of `W` as sorted `(value, probability)` atoms; values closer
/// than `1e-12·(1+|w|)` are merged.
pub fn exact_w_distribution(model: &dyn SteinModel) -> Result<Vec<(f64, f64)>> {
    let mut atoms = Vec::new();
    model.for_each_w(&mut |p, w| atoms.push((w, p)))?;
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (w, p) in atoms {
        match merged.last_mut() {
            Some(last) if (w - last.0).abs() <= 1e-12 * (1.0 + w.abs()) => last.1 += p,
            _ => merged.push((w, p)),
        }
    }
    Ok(merged)
}
