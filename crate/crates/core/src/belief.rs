//! Hybrid mixture belief over pose: weighted conditional Gaussians, one per
//! data-association history, with exact (first-order) filtering updates,
//! weight updates, budgeted pruning, and renormalized subset views.
//!
//! Each hypothesis is updated by extended Kalman prediction and sequential
//! scalar range updates; the per-measurement marginal innovation density is
//! the Bayesian evidence multiplied into the hypothesis weight. Weights are
//! kept in log space internally and normalized on read-out.

use nalgebra::{Matrix3, Vector3};
use num_traits::Float;

use crate::env::{enumerate_associations, AssociationRealization, World};
use crate::models::{
    log_gaussian_density, motion_jacobian_noise, motion_jacobian_state, predict_measurement,
    propagate, range_jacobian, wrap_angle, Action, ClassId, Measurement, MotionModel,
    ObservationModel, Pose2,
};
use crate::{real, Error, Real, Result};

/// One conditional Gaussian hypothesis with its association history.
#[derive(Debug, Clone)]
pub struct Hypothesis<T> {
    pub mean: Pose2<T>,
    pub covariance: Matrix3<T>,
    pub log_weight: T,
    pub association_history: Vec<AssociationRealization>,
    /// Index into the previous belief's hypothesis list; `None` for prior
    /// hypotheses.
    pub parent_index: Option<usize>,
}

impl<T: Real> Hypothesis<T> {
    pub fn new(mean: Pose2<T>, covariance: Matrix3<T>, log_weight: T) -> Self {
        Self {
            mean,
            covariance,
            log_weight,
            association_history: Vec::new(),
            parent_index: None,
        }
    }

    pub fn weight(&self) -> T {
        Float::exp(self.log_weight)
    }
}

/// Weighted set of hypotheses at one time step; hypothesis order is lineage
/// order and is stable across updates.
#[derive(Debug, Clone)]
pub struct MixtureBelief<T> {
    pub time_index: usize,
    pub hypotheses: Vec<Hypothesis<T>>,
}

impl<T: Real> MixtureBelief<T> {
    /// Uniform mixture over the given prior modes, all sharing one covariance.
    pub fn uniform_prior(modes: &[Pose2<T>], covariance: Matrix3<T>) -> Self {
        let w = -Float::ln(real::<T>(modes.len() as f64));
        Self {
            time_index: 0,
            hypotheses: modes
                .iter()
                .map(|m| Hypothesis::new(*m, covariance, w))
                .collect(),
        }
    }

    /// Mixture with explicit (unnormalized) weights, normalized on build.
    pub fn from_weighted_modes(modes: &[(Pose2<T>, T)], covariance: Matrix3<T>) -> Result<Self> {
        let mut b = Self {
            time_index: 0,
            hypotheses: modes
                .iter()
                .map(|(m, w)| Hypothesis::new(*m, covariance, Float::ln(*w)))
                .collect(),
        };
        b.normalize()?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    /// Normalizes weights to sum to one; returns the log normalizer. Errors
    /// with [`Error::Contradiction`] when every weight is zero.
    pub fn normalize(&mut self) -> Result<T> {
        let log_eta = log_sum_exp(self.hypotheses.iter().map(|h| h.log_weight));
        if !Float::is_finite(log_eta) {
            return Err(Error::Contradiction);
        }
        for h in &mut self.hypotheses {
            h.log_weight -= log_eta;
        }
        Ok(log_eta)
    }

    /// Linear-space weights in hypothesis order.
    pub fn weights(&self) -> Vec<T> {
        self.hypotheses.iter().map(Hypothesis::weight).collect()
    }

    /// Shannon entropy of the (normalized) weight vector, in nats.
    pub fn weight_entropy(&self) -> T {
        crate::bounds::entropy(&self.weights()).unwrap_or_else(|_| T::zero())
    }

    /// One hypothesis per line: weight, mean, covariance (row-major),
    /// parent index, association history.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "belief time={} hypotheses={}\n",
            self.time_index,
            self.hypotheses.len()
        );
        for h in &self.hypotheses {
            let cov: Vec<String> = h
                .covariance
                .transpose()
                .iter()
                .map(|v| format!("{v}"))
                .collect();
            let assoc: Vec<String> = h
                .association_history
                .iter()
                .map(|r| {
                    r.assignments
                        .iter()
                        .map(|id| id.0.to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                })
                .collect();
            out.push_str(&format!(
                "hyp {} {} {} {} [{}] parent={} assoc={}\n",
                h.weight(),
                h.mean.x,
                h.mean.y,
                h.mean.theta,
                cov.join(" "),
                h.parent_index.map_or("-".into(), |p| p.to_string()),
                if assoc.is_empty() {
                    "-".into()
                } else {
                    assoc.join(";")
                },
            ));
        }
        out
    }
}

/// Renormalized restriction of a weight vector to a subset of components.
#[derive(Debug, Clone)]
pub struct SimplifiedBelief<T> {
    pub subset_indices: Vec<usize>,
    pub renormalized_weights: Vec<T>,
    /// Mass of the subset under the original weights.
    pub subset_mass: T,
}

/// Builds the renormalized subset view `w^{s,r} = w^r / sum_{m in subset} w^m`.
pub fn make_simplified<T: Real>(weights: &[T], subset: &[usize]) -> Result<SimplifiedBelief<T>> {
    if subset.is_empty() {
        return Err(Error::ZeroMassSubset);
    }
    let mut mass = T::zero();
    for &i in subset {
        if i >= weights.len() {
            return Err(Error::InvalidConfig(format!(
                "subset index {i} out of range for {} weights",
                weights.len()
            )));
        }
        mass += weights[i];
    }
    if !(mass > T::zero()) {
        return Err(Error::ZeroMassSubset);
    }
    Ok(SimplifiedBelief {
        subset_indices: subset.to_vec(),
        renormalized_weights: subset.iter().map(|&i| weights[i] / mass).collect(),
        subset_mass: mass,
    })
}

/// Convenience wrapper over a belief's normalized weights.
pub fn make_simplified_from_belief<T: Real>(
    b: &MixtureBelief<T>,
    subset: &[usize],
) -> Result<SimplifiedBelief<T>> {
    make_simplified(&b.weights(), subset)
}

/// Named pruning strategy used by budgeted inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruningHeuristic {
    /// Keep the highest-weight hypotheses; ties broken by lineage order.
    KeepHighestWeight,
}

impl PruningHeuristic {
    pub fn name(&self) -> &'static str {
        match self {
            PruningHeuristic::KeepHighestWeight => "keep-highest-weight",
        }
    }
}

impl std::str::FromStr for PruningHeuristic {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keep-highest-weight" => Ok(PruningHeuristic::KeepHighestWeight),
            other => Err(Error::InvalidConfig(format!(
                "unknown pruning heuristic: {other}"
            ))),
        }
    }
}

/// Hard cap on the number of hypotheses inference may hold.
#[derive(Debug, Clone, Copy)]
pub struct InferenceBudget {
    pub max_hypotheses: usize,
    pub heuristic: PruningHeuristic,
}

impl InferenceBudget {
    pub fn new(max_hypotheses: usize, heuristic: PruningHeuristic) -> Result<Self> {
        if max_hypotheses == 0 {
            return Err(Error::InvalidConfig("inference budget must be >= 1".into()));
        }
        Ok(Self {
            max_hypotheses,
            heuristic,
        })
    }
}

/// Prior over class-consistent association candidates, applied per step
/// before the likelihood factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CandidatePrior {
    /// Each of the `d` realizations gets prior mass `1/d`.
    #[default]
    Uniform,
    /// Every realization gets unit prior mass (unnormalized counting).
    Flat,
}

impl CandidatePrior {
    pub fn log_factor<T: Real>(&self, realization_count: usize) -> T {
        match self {
            CandidatePrior::Uniform => -Float::ln(real::<T>(realization_count as f64)),
            CandidatePrior::Flat => T::zero(),
        }
    }
}

/// Extended Kalman prediction: mean through the noiseless motion, covariance
/// to first order plus motion noise. Weight and history are unchanged.
pub fn predict_hypothesis<T: Real>(
    h: &Hypothesis<T>,
    u: &Action<T>,
    m: &MotionModel<T>,
) -> Hypothesis<T> {
    let f = motion_jacobian_state(&h.mean, u);
    let g = motion_jacobian_noise(&h.mean);
    let mean = propagate(&h.mean, u, &Vector3::zeros());
    let covariance = f * h.covariance * f.transpose() + g * m.noise_covariance() * g.transpose();
    Hypothesis {
        mean,
        covariance,
        log_weight: h.log_weight,
        association_history: h.association_history.clone(),
        parent_index: h.parent_index,
    }
}

/// Sequential first-order range updates for every (measurement, landmark)
/// pair fixed by `beta`. Returns the updated hypothesis and the log of the
/// Gaussian evidence (product of marginal innovation densities), which the
/// caller adds to the hypothesis log-weight.
pub fn update_hypothesis<T: Real>(
    h: &Hypothesis<T>,
    z: &[Measurement<T>],
    beta: &AssociationRealization,
    w_env: &World<T>,
    obs: &ObservationModel<T>,
) -> Result<(Hypothesis<T>, T)> {
    debug_assert_eq!(z.len(), beta.assignments.len());
    let mut mean = h.mean;
    let mut cov = h.covariance;
    let mut log_evidence = T::zero();
    let var_v = obs.range_noise_std * obs.range_noise_std;
    for (zi, lm_id) in z.iter().zip(&beta.assignments) {
        let lm = w_env.landmark(*lm_id).ok_or(Error::InvalidConfig(
            "association to unknown landmark".into(),
        ))?;
        debug_assert_eq!(zi.landmark_class, lm.class);
        let hrow = range_jacobian(&mean, &lm.position);
        let s = (hrow * cov * hrow.transpose())[(0, 0)] + var_v;
        if !(s > T::zero()) || !Float::is_finite(s) {
            return Err(Error::Degenerate("innovation covariance not invertible"));
        }
        let nu = zi.range - predict_measurement(&mean, &lm.position, T::zero());
        log_evidence += log_gaussian_density(nu, s);
        let k = cov * hrow.transpose() / s;
        let delta = k * nu;
        mean = Pose2::new(
            mean.x + delta[0],
            mean.y + delta[1],
            wrap_angle(mean.theta + delta[2]),
        );
        // Joseph form keeps the covariance symmetric PSD.
        let ikh = Matrix3::identity() - k * hrow;
        cov = ikh * cov * ikh.transpose() + k * var_v * k.transpose();
    }
    Ok((
        Hypothesis {
            mean,
            covariance: cov,
            log_weight: h.log_weight,
            association_history: h.association_history.clone(),
            parent_index: h.parent_index,
        },
        log_evidence,
    ))
}

/// Predicts every hypothesis, enumerates associations at each predicted mean,
/// and spawns one child per realization, with unnormalized log-weights
/// `log w_parent + log prior(d) + log evidence`. Children record the parent
/// index and extend its association history. No normalization. Also returns
/// the maximum per-parent realization count of the step.
pub(crate) fn update_children<T: Real>(
    b: &MixtureBelief<T>,
    u: &Action<T>,
    z: &[Measurement<T>],
    w_env: &World<T>,
    m: &MotionModel<T>,
    obs: &ObservationModel<T>,
    prior: CandidatePrior,
) -> Result<(Vec<Hypothesis<T>>, usize)> {
    let classes: Vec<ClassId> = z.iter().map(|zi| zi.landmark_class).collect();
    let mut children = Vec::new();
    let mut max_d = 0usize;
    for (j, h) in b.hypotheses.iter().enumerate() {
        let pred = predict_hypothesis(h, u, m);
        let realizations = enumerate_associations(w_env, &pred.mean, &classes, obs);
        let d = realizations.len();
        max_d = max_d.max(d);
        for r in realizations {
            let (mut child, log_ev) = update_hypothesis(&pred, z, &r, w_env, obs)?;
            child.log_weight = h.log_weight + prior.log_factor::<T>(d) + log_ev;
            child.parent_index = Some(j);
            child.association_history.push(r);
            children.push(child);
        }
    }
    Ok((children, max_d))
}

/// Exact mixture update: every hypothesis branches over its association
/// realizations, weights are multiplied by the evidence, and the result is
/// normalized. Hypothesis counts multiply by each parent's realization count.
pub fn full_update<T: Real>(
    b: &MixtureBelief<T>,
    u: &Action<T>,
    z: &[Measurement<T>],
    w_env: &World<T>,
    m: &MotionModel<T>,
    obs: &ObservationModel<T>,
) -> Result<MixtureBelief<T>> {
    let (children, _) = update_children(b, u, z, w_env, m, obs, CandidatePrior::default())?;
    let mut out = MixtureBelief {
        time_index: b.time_index + 1,
        hypotheses: children,
    };
    if out.hypotheses.is_empty() {
        return Err(Error::Contradiction);
    }
    out.normalize()?;
    Ok(out)
}

/// Indices of the hypotheses a pruning heuristic keeps, in lineage order.
pub fn prune_indices<T: Real>(
    log_weights: &[T],
    max_keep: usize,
    heuristic: PruningHeuristic,
) -> Vec<usize> {
    if log_weights.len() <= max_keep {
        return (0..log_weights.len()).collect();
    }
    match heuristic {
        PruningHeuristic::KeepHighestWeight => {
            let mut order: Vec<usize> = (0..log_weights.len()).collect();
            // stable sort: equal weights keep lineage order
            order.sort_by(|&a, &b| log_weights[b].partial_cmp(&log_weights[a]).unwrap());
            let mut kept: Vec<usize> = order.into_iter().take(max_keep).collect();
            kept.sort_unstable();
            kept
        }
    }
}

/// [`full_update`] followed by the budget's pruning heuristic and a final
/// renormalization. Pruned hypotheses are never revived.
pub fn budgeted_update<T: Real>(
    b: &MixtureBelief<T>,
    u: &Action<T>,
    z: &[Measurement<T>],
    w_env: &World<T>,
    m: &MotionModel<T>,
    obs: &ObservationModel<T>,
    budget: &InferenceBudget,
) -> Result<MixtureBelief<T>> {
    let full = full_update(b, u, z, w_env, m, obs)?;
    let mut pruned = prune_belief(full, budget);
    pruned.normalize()?;
    Ok(pruned)
}

/// Drops hypotheses beyond the budget; the survivors keep their weights and
/// lineage order. Callers renormalize.
pub(crate) fn prune_belief<T: Real>(
    mut full: MixtureBelief<T>,
    budget: &InferenceBudget,
) -> MixtureBelief<T> {
    if full.hypotheses.len() <= budget.max_hypotheses {
        return full;
    }
    let log_weights: Vec<T> = full.hypotheses.iter().map(|h| h.log_weight).collect();
    let kept = prune_indices(&log_weights, budget.max_hypotheses, budget.heuristic);
    let mut hypotheses = Vec::with_capacity(kept.len());
    for &i in &kept {
        hypotheses.push(full.hypotheses[i].clone());
    }
    full.hypotheses = hypotheses;
    full
}

pub(crate) fn log_sum_exp<T: Real, I: IntoIterator<Item = T>>(items: I) -> T {
    let vals: Vec<T> = items.into_iter().collect();
    let mx = vals
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    if !Float::is_finite(mx) {
        return mx;
    }
    let sum = vals
        .iter()
        .fold(T::zero(), |acc, &v| acc + Float::exp(v - mx));
    mx + Float::ln(sum)
}
