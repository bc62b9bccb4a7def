//! Entropy cost over hypothesis weights and its refinable lower/upper bounds.
//!
//! The planning cost at a belief-tree node is the Shannon entropy of the
//! node's (normalized) component weights. Evaluating it exactly requires
//! every posterior component, whose count grows exponentially with the
//! horizon. The bounds here need only a *subset* of components plus cheap
//! side information: the prior weights of the subset's ancestors, the
//! per-step suprema of the measurement likelihood, and component counts.
//!
//! Let `w^r` be the unnormalized posterior weights, `eta = sum_r w^r`, and
//! `w_ms` the mass of the chosen subset. The exact decomposition
//!
//! ```text
//! H = (w_ms / eta) * [H_s + ln(eta / w_ms)]
//!     - sum_{r not in subset} (w^r / eta) ln(w^r / eta)
//! ```
//!
//! splits the entropy into a subset part and a complement part. Bounding
//! `eta` by `[w_ms, w_ms + gap * prod_i sigma_i]` (the complement mass can at
//! most be the unaccounted prior mass times the likelihood suprema) and the
//! complement entropy by its maximum for a given total mass yields two-sided
//! bounds that converge to the exact entropy as the subset grows to the full
//! component set.

use num_traits::Float;

use crate::belief::SimplifiedBelief;
use crate::{real, Error, Real, Result};

/// Closed interval `[lower, upper]` bracketing a scalar quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInterval<T> {
    pub lower: T,
    pub upper: T,
}

impl<T: Real> BoundInterval<T> {
    pub fn new(lower: T, upper: T) -> Self {
        debug_assert!(lower <= upper + real::<T>(1e-12));
        Self { lower, upper }
    }

    pub fn point(v: T) -> Self {
        Self { lower: v, upper: v }
    }

    pub fn zero() -> Self {
        Self::point(T::zero())
    }

    pub fn width(&self) -> T {
        self.upper - self.lower
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            lower: self.lower + o.lower,
            upper: self.upper + o.upper,
        }
    }

    pub fn scale(&self, c: T) -> Self {
        debug_assert!(c >= T::zero());
        Self {
            lower: self.lower * c,
            upper: self.upper * c,
        }
    }

    pub fn contains(&self, v: T, tol: T) -> bool {
        self.lower - tol <= v && v <= self.upper + tol
    }

    pub fn overlaps(&self, o: &Self) -> bool {
        self.lower <= o.upper && o.lower <= self.upper
    }
}

/// Shannon entropy (nats) of an unnormalized nonnegative weight vector,
/// with `0 ln 0 = 0`. Errors when the total mass is zero.
pub fn entropy<T: Real>(weights: &[T]) -> Result<T> {
    let eta = weights.iter().fold(T::zero(), |a, &w| {
        debug_assert!(w >= T::zero());
        a + w
    });
    if !(eta > T::zero()) {
        return Err(Error::ZeroMassSubset);
    }
    let mut h = T::zero();
    for &w in weights {
        if w > T::zero() {
            let p = w / eta;
            h -= p * Float::ln(p);
        }
    }
    Ok(h)
}

/// Entropy of the renormalized subset weights of a simplified belief.
pub fn simplified_entropy<T: Real>(s: &SimplifiedBelief<T>) -> T {
    entropy(&s.renormalized_weights).expect("simplified belief has positive mass")
}

/// Evaluates the exact subset/complement decomposition of the entropy.
/// Numerically identical to [`entropy`]; exists as a tested identity and as
/// the scaffold the bounds are derived from.
pub fn entropy_decomposition<T: Real>(weights: &[T], subset: &[usize]) -> Result<T> {
    if subset.is_empty() {
        return Err(Error::ZeroMassSubset);
    }
    let eta = weights.iter().fold(T::zero(), |a, &w| a + w);
    if !(eta > T::zero()) {
        return Err(Error::ZeroMassSubset);
    }
    let in_subset = {
        let mut mark = vec![false; weights.len()];
        for &i in subset {
            mark[i] = true;
        }
        mark
    };
    let w_ms = subset.iter().fold(T::zero(), |a, &i| a + weights[i]);
    let subset_weights: Vec<T> = subset.iter().map(|&i| weights[i]).collect();
    let h_s = if w_ms > T::zero() {
        entropy(&subset_weights)?
    } else {
        T::zero()
    };
    let mut complement_term = T::zero();
    for (i, &w) in weights.iter().enumerate() {
        if !in_subset[i] && w > T::zero() {
            let p = w / eta;
            complement_term -= p * Float::ln(p);
        }
    }
    let subset_term = if w_ms > T::zero() {
        (w_ms / eta) * (h_s + Float::ln(eta / w_ms))
    } else {
        T::zero()
    };
    Ok(subset_term + complement_term)
}

/// Side information needed to bound the total unnormalized mass `eta` of a
/// node from a subset of its components.
#[derive(Debug, Clone)]
pub struct EtaSideInfo<T> {
    /// Prior (time-k) weight of each subset component's ancestor, one entry
    /// per subset component.
    pub prior_weights_of_subset: Vec<T>,
    /// Per-step supremum of the joint measurement likelihood along the path.
    pub sigma_per_step: Vec<T>,
    /// Component count of the node (conservative when branching varies).
    pub total_components: usize,
    /// Component count of the prior belief.
    pub prior_components: usize,
}

/// Two-sided bound on `eta`: the subset mass from below; from above, the
/// subset mass plus the unaccounted prior mass scaled by the per-step
/// likelihood suprema.
pub fn eta_bounds<T: Real>(
    info: &EtaSideInfo<T>,
    subset_weights: &[T],
) -> Result<BoundInterval<T>> {
    if info.prior_components == 0 || info.total_components == 0 {
        return Err(Error::Degenerate("empty component counts in eta side info"));
    }
    let w_ms = subset_weights.iter().fold(T::zero(), |a, &w| a + w);
    let ratio = real::<T>(info.total_components as f64) / real::<T>(info.prior_components as f64);
    let prior_sum = info
        .prior_weights_of_subset
        .iter()
        .fold(T::zero(), |a, &w| a + w);
    let mut gap = ratio - prior_sum;
    if gap < -real::<T>(1e-9) {
        return Err(Error::Degenerate(
            "eta side info inconsistent: negative mass gap",
        ));
    }
    if gap < T::zero() {
        gap = T::zero();
    }
    let sigma_prod = info.sigma_per_step.iter().fold(T::one(), |a, &s| {
        debug_assert!(s > T::zero());
        a * s
    });
    Ok(BoundInterval::new(w_ms, w_ms + gap * sigma_prod))
}

/// Maximum possible entropy contribution of a complement of `count`
/// components whose normalized mass is at most `gamma_cap`: the equal-split
/// value `-g ln(g / count)`, maximized over `g in [0, gamma_cap]`. For
/// `count >= 3` the function is increasing on `[0, 1]` and this reduces to
/// plugging in `gamma_cap`; for a complement of one or two components the
/// peak at `count / e` caps it.
fn complement_entropy_cap<T: Real>(gamma_cap: T, count: usize) -> T {
    if count == 0 || gamma_cap <= T::zero() {
        return T::zero();
    }
    let c = real::<T>(count as f64);
    let peak_at = c / real::<T>(std::f64::consts::E);
    if gamma_cap >= peak_at {
        peak_at
    } else {
        -gamma_cap * Float::ln(gamma_cap / c)
    }
}

/// Two-sided bound on the entropy of the full weight vector from a subset's
/// entropy, its mass, the `eta` interval, and the complement size. The lower
/// bound is clamped at zero (entropy is nonnegative).
pub fn entropy_bounds<T: Real>(
    subset_entropy: T,
    w_ms: T,
    eta: &BoundInterval<T>,
    complement_count: usize,
) -> Result<BoundInterval<T>> {
    if !(w_ms > T::zero()) || !(eta.lower > T::zero()) {
        return Err(Error::ZeroMassSubset);
    }
    if complement_count == 0 {
        // Subset covers everything: eta = w_ms and the cost is exact.
        return Ok(BoundInterval::point(subset_entropy));
    }
    let mut lower = (w_ms / eta.upper) * (subset_entropy + Float::ln(eta.lower / w_ms));
    if lower < T::zero() {
        lower = T::zero();
    }
    let mut gamma_cap = T::one() - w_ms / eta.upper;
    if gamma_cap < T::zero() {
        gamma_cap = T::zero();
    } else if gamma_cap > T::one() {
        gamma_cap = T::one();
    }
    let mut upper = (w_ms / eta.lower) * (subset_entropy + Float::ln(eta.upper / w_ms))
        + complement_entropy_cap(gamma_cap, complement_count);
    if upper < lower {
        upper = lower;
    }
    Ok(BoundInterval::new(lower, upper))
}

/// Refinable bound bookkeeping for one belief-tree node: the materialized
/// subset (weights plus ancestor prior weights) and the side information.
/// Bounds are recomputed from scratch on refinement; cost is linear in the
/// subset size and cannot drift numerically.
#[derive(Debug, Clone)]
pub struct BoundState<T> {
    subset_weights: Vec<T>,
    subset_prior_weights: Vec<T>,
    sigma_per_step: Vec<T>,
    total_components: usize,
    prior_components: usize,
    complete: bool,
}

impl<T: Real> BoundState<T> {
    pub fn new(sigma_per_step: Vec<T>, total_components: usize, prior_components: usize) -> Self {
        Self {
            subset_weights: Vec::new(),
            subset_prior_weights: Vec::new(),
            sigma_per_step,
            total_components,
            prior_components,
            complete: false,
        }
    }

    pub fn subset_len(&self) -> usize {
        self.subset_weights.len()
    }

    pub fn subset_mass(&self) -> T {
        self.subset_weights.iter().fold(T::zero(), |a, &w| a + w)
    }

    pub fn total_components(&self) -> usize {
        self.total_components
    }

    /// Raises the conservative component count as deeper branching is
    /// revealed. Never lowers it below the materialized subset size.
    pub fn set_total_components(&mut self, total: usize) {
        self.total_components = total.max(self.subset_weights.len());
    }

    /// Marks the subset as covering every realized component of the node;
    /// the intervals collapse to the exact values.
    pub fn mark_complete(&mut self) {
        self.complete = true;
        self.total_components = self.subset_weights.len();
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    /// Adds components (posterior weight, ancestor prior weight) to the
    /// subset and recomputes the cost interval. Refining by an empty set
    /// returns the unchanged interval.
    pub fn refine(&mut self, added: impl IntoIterator<Item = (T, T)>) -> Result<BoundInterval<T>> {
        for (w, pw) in added {
            self.subset_weights.push(w);
            self.subset_prior_weights.push(pw);
        }
        self.cost_interval()
    }

    pub fn eta_interval(&self) -> Result<BoundInterval<T>> {
        if self.complete {
            return Ok(BoundInterval::point(self.subset_mass()));
        }
        eta_bounds(
            &EtaSideInfo {
                prior_weights_of_subset: self.subset_prior_weights.clone(),
                sigma_per_step: self.sigma_per_step.clone(),
                total_components: self.total_components,
                prior_components: self.prior_components,
            },
            &self.subset_weights,
        )
    }

    /// Current entropy-cost interval for the node.
    pub fn cost_interval(&self) -> Result<BoundInterval<T>> {
        if self.complete {
            return Ok(BoundInterval::point(entropy(&self.subset_weights)?));
        }
        let eta = self.eta_interval()?;
        let w_ms = self.subset_mass();
        if !(w_ms > T::zero()) {
            return Err(Error::ZeroMassSubset);
        }
        let h_s = entropy(&self.subset_weights)?;
        let complement = self
            .total_components
            .saturating_sub(self.subset_weights.len());
        entropy_bounds(h_s, w_ms, &eta, complement)
    }
}
