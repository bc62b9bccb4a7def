//! Belief-tree construction for planning: a lightweight *skeleton* carrying
//! sampled states and observations but no posterior beliefs, and an explicit
//! tree whose nodes hold budget-bounded posteriors.
//!
//! The skeleton samples each path generatively: draw a state from the current
//! mixture, roll it through the motion model, read off the association at the
//! sampled state, and sample the observation there. The explicit tree instead
//! samples observations from the filtered posterior at each node (draw a
//! hypothesis by weight, then a state, then the association and observation)
//! and runs the budgeted update to produce the child posterior. The two
//! observation distributions are analytically identical; the skeleton simply
//! skips inference, which is what makes bound-based planning cheap.

use rand::Rng;

use crate::belief::{
    prune_belief, update_children, CandidatePrior, InferenceBudget, MixtureBelief,
};
use crate::env::{enumerate_associations, visible_landmarks, AssociationRealization, World};
use crate::models::{
    predict_measurement, propagate, Action, ClassId, Measurement, MotionModel, ObservationModel,
    Pose2,
};
use crate::{Error, Real, Result};

/// A named motion primitive.
#[derive(Debug, Clone)]
pub struct ActionPrimitive<T> {
    pub name: String,
    pub action: Action<T>,
}

impl<T> ActionPrimitive<T> {
    pub fn new(name: impl Into<String>, action: Action<T>) -> Self {
        Self {
            name: name.into(),
            action,
        }
    }
}

/// Candidate action sequences plus the per-step observation sample count.
#[derive(Debug, Clone)]
pub struct TreeShape<T> {
    pub primitives: Vec<ActionPrimitive<T>>,
    /// Each sequence is `horizon` primitive indices.
    pub sequences: Vec<Vec<usize>>,
    pub horizon: usize,
    pub observations_per_step: usize,
}

impl<T: Real> TreeShape<T> {
    /// All `|primitives|^horizon` sequences in lexicographic order.
    pub fn exhaustive(
        primitives: Vec<ActionPrimitive<T>>,
        horizon: usize,
        observations_per_step: usize,
    ) -> Result<Self> {
        if primitives.is_empty() || horizon == 0 || observations_per_step == 0 {
            return Err(Error::InvalidConfig(
                "tree shape needs primitives, horizon >= 1 and samples >= 1".into(),
            ));
        }
        let p = primitives.len();
        let count = p.checked_pow(horizon as u32).ok_or(Error::InvalidConfig(
            "action sequence count overflows".into(),
        ))?;
        let mut sequences = Vec::with_capacity(count);
        let mut cur = vec![0usize; horizon];
        for _ in 0..count {
            sequences.push(cur.clone());
            for pos in (0..horizon).rev() {
                cur[pos] += 1;
                if cur[pos] < p {
                    break;
                }
                cur[pos] = 0;
            }
        }
        Ok(Self {
            primitives,
            sequences,
            horizon,
            observations_per_step,
        })
    }

    pub fn from_sequences(
        primitives: Vec<ActionPrimitive<T>>,
        sequences: Vec<Vec<usize>>,
        observations_per_step: usize,
    ) -> Result<Self> {
        let horizon = sequences.first().map_or(0, Vec::len);
        if horizon == 0 || observations_per_step == 0 {
            return Err(Error::InvalidConfig("empty tree shape".into()));
        }
        for s in &sequences {
            if s.len() != horizon || s.iter().any(|&i| i >= primitives.len()) {
                return Err(Error::InvalidConfig("malformed action sequence".into()));
            }
        }
        Ok(Self {
            primitives,
            sequences,
            horizon,
            observations_per_step,
        })
    }

    pub fn num_sequences(&self) -> usize {
        self.sequences.len()
    }

    pub fn actions(&self, sequence: usize) -> Vec<Action<T>> {
        self.sequences[sequence]
            .iter()
            .map(|&i| self.primitives[i].action)
            .collect()
    }

    pub fn encode_sequence(&self, sequence: usize) -> String {
        self.sequences[sequence]
            .iter()
            .map(|&i| self.primitives[i].name.as_str())
            .collect::<Vec<_>>()
            .join(">")
    }
}

/// One skeleton node: sampled data only, no posterior belief is ever stored.
#[derive(Debug, Clone)]
pub struct SkeletonNode<T> {
    pub depth: usize,
    pub incoming_action: Action<T>,
    pub sampled_state: Pose2<T>,
    pub sampled_association: AssociationRealization,
    pub sampled_observation: Vec<Measurement<T>>,
    /// Association realizations of the sampled classes at the sampled state.
    pub realization_count: usize,
    pub children: Vec<SkeletonNode<T>>,
}

/// Belief tree skeleton: per candidate sequence, an observation tree of
/// sampled nodes rooted at the planning belief.
#[derive(Debug, Clone)]
pub struct Skeleton<T> {
    pub shape: TreeShape<T>,
    /// `roots[s]` holds the first-step samples of sequence `s`.
    pub roots: Vec<Vec<SkeletonNode<T>>>,
}

impl<T: Real> Skeleton<T> {
    pub fn node_count(&self) -> usize {
        fn count<T>(n: &SkeletonNode<T>) -> usize {
            1 + n.children.iter().map(count).sum::<usize>()
        }
        self.roots.iter().flatten().map(count).sum()
    }

    /// Depth-first dump, one node per line, for golden-file comparisons.
    pub fn to_debug_text(&self) -> String {
        fn walk<T: Real>(out: &mut String, seq: usize, n: &SkeletonNode<T>) {
            let obs: Vec<String> = n
                .sampled_observation
                .iter()
                .map(|z| format!("{}:{}", z.landmark_class, z.range))
                .collect();
            let assoc: Vec<String> = n
                .sampled_association
                .assignments
                .iter()
                .map(|id| id.to_string())
                .collect();
            out.push_str(&format!(
                "seq={} depth={} state=({} {} {}) d={} assoc=[{}] obs=[{}]\n",
                seq,
                n.depth,
                n.sampled_state.x,
                n.sampled_state.y,
                n.sampled_state.theta,
                n.realization_count,
                assoc.join(","),
                obs.join(","),
            ));
            for c in &n.children {
                walk(out, seq, c);
            }
        }
        let mut out = String::new();
        for (s, roots) in self.roots.iter().enumerate() {
            for n in roots {
                walk(&mut out, s, n);
            }
        }
        out
    }
}

/// Draws a state from the mixture: hypothesis by weight, then its Gaussian.
pub fn sample_mixture_state<T: Real, R: Rng + ?Sized>(
    b: &MixtureBelief<T>,
    rng: &mut R,
) -> Pose2<T> {
    let weights = b.weights();
    let mut pick = rng.gen_range(T::zero()..T::one());
    let mut idx = weights.len() - 1;
    for (i, &w) in weights.iter().enumerate() {
        if pick < w {
            idx = i;
            break;
        }
        pick -= w;
    }
    let h = &b.hypotheses[idx];
    let chol = nalgebra::Cholesky::new(
        h.covariance + nalgebra::Matrix3::identity() * crate::real::<T>(1e-15),
    );
    let draw = nalgebra::Vector3::new(
        T::standard_normal(rng),
        T::standard_normal(rng),
        T::standard_normal(rng),
    );
    match chol {
        Some(c) => {
            let d = c.l() * draw;
            Pose2::new(h.mean.x + d[0], h.mean.y + d[1], h.mean.theta + d[2])
        }
        None => h.mean,
    }
}

/// Generative observation at a sampled state: the in-range landmarks (in id
/// order) each emit one noisy range reading of their own class, and the
/// association realization is the generating assignment itself. Also returns
/// the realization count of those classes at the state.
fn sample_observation_at<T: Real, R: Rng + ?Sized>(
    w_env: &World<T>,
    state: &Pose2<T>,
    obs: &ObservationModel<T>,
    rng: &mut R,
) -> (AssociationRealization, Vec<Measurement<T>>, usize) {
    let visible = visible_landmarks(w_env, state, obs);
    let mut measurements = Vec::with_capacity(visible.len());
    let mut assignments = Vec::with_capacity(visible.len());
    for l in &visible {
        let v = obs.range_noise_std * T::standard_normal(rng);
        let range = predict_measurement(state, &l.position, v);
        measurements.push(Measurement::new(
            num_traits::Float::max(range, T::zero()),
            l.class,
        ));
        assignments.push(l.id);
    }
    let classes: Vec<ClassId> = measurements.iter().map(|z| z.landmark_class).collect();
    let d = if classes.is_empty() {
        1
    } else {
        enumerate_associations(w_env, state, &classes, obs)
            .len()
            .max(1)
    };
    (AssociationRealization { assignments }, measurements, d)
}

/// Samples one skeleton path for an action sequence: a state from the
/// mixture, then per step a motion-propagated state, its association, and a
/// sampled observation. Empty observation lists are allowed when nothing is
/// in range.
pub fn sample_skeleton_path<T: Real, R: Rng + ?Sized>(
    b: &MixtureBelief<T>,
    u_seq: &[Action<T>],
    w_env: &World<T>,
    m: &MotionModel<T>,
    obs: &ObservationModel<T>,
    rng: &mut R,
) -> Vec<(Pose2<T>, AssociationRealization, Vec<Measurement<T>>)> {
    let mut x = sample_mixture_state(b, rng);
    let mut out = Vec::with_capacity(u_seq.len());
    for u in u_seq {
        x = propagate(&x, u, &m.sample_noise(rng));
        let (assoc, z, _) = sample_observation_at(w_env, &x, obs, rng);
        out.push((x, assoc, z));
    }
    out
}

/// Builds the full skeleton: for every candidate sequence, an observation
/// tree with `observations_per_step` samples per step. No inference is
/// performed anywhere.
pub fn build_skeleton<T: Real, R: Rng + ?Sized>(
    b: &MixtureBelief<T>,
    shape: &TreeShape<T>,
    w_env: &World<T>,
    m: &MotionModel<T>,
    obs: &ObservationModel<T>,
    rng: &mut R,
) -> Skeleton<T> {
    #[allow(clippy::too_many_arguments)]
    fn expand<T: Real, R: Rng + ?Sized>(
        state: &Pose2<T>,
        actions: &[Action<T>],
        depth: usize,
        shape_obs: usize,
        w_env: &World<T>,
        m: &MotionModel<T>,
        obs: &ObservationModel<T>,
        rng: &mut R,
    ) -> SkeletonNode<T> {
        let u = actions[depth - 1];
        let next = propagate(state, &u, &m.sample_noise(rng));
        let (assoc, z, d) = sample_observation_at(w_env, &next, obs, rng);
        let mut node = SkeletonNode {
            depth,
            incoming_action: u,
            sampled_state: next,
            sampled_association: assoc,
            sampled_observation: z,
            realization_count: d,
            children: Vec::new(),
        };
        if depth < actions.len() {
            for _ in 0..shape_obs {
                node.children.push(expand(
                    &node.sampled_state,
                    actions,
                    depth + 1,
                    shape_obs,
                    w_env,
                    m,
                    obs,
                    rng,
                ));
            }
        }
        node
    }

    let mut roots = Vec::with_capacity(shape.num_sequences());
    for s in 0..shape.num_sequences() {
        let actions = shape.actions(s);
        let mut first = Vec::with_capacity(shape.observations_per_step);
        for _ in 0..shape.observations_per_step {
            let x0 = sample_mixture_state(b, rng);
            first.push(expand(
                &x0,
                &actions,
                1,
                shape.observations_per_step,
                w_env,
                m,
                obs,
                rng,
            ));
        }
        roots.push(first);
    }
    Skeleton {
        shape: shape.clone(),
        roots,
    }
}

/// One node of the explicit tree: the budget-bounded posterior is held here.
#[derive(Debug, Clone)]
pub struct ExplicitNode<T> {
    pub depth: usize,
    pub incoming_action: Action<T>,
    pub sampled_observation: Vec<Measurement<T>>,
    /// Posterior of the budgeted update; hypothesis count is at most the
    /// inference budget.
    pub posterior: MixtureBelief<T>,
    /// Survivors' log-weights relative to the parent's normalized weights
    /// (one per posterior hypothesis), before any renormalization.
    pub step_log_weights: Vec<T>,
    /// Maximum pre-prune realization count over the parent's hypotheses.
    pub step_max_d: usize,
    pub children: Vec<ExplicitNode<T>>,
}

/// Explicit belief tree for planning under an inference budget.
#[derive(Debug, Clone)]
pub struct ExplicitTree<T> {
    pub shape: TreeShape<T>,
    pub root_belief: MixtureBelief<T>,
    pub roots: Vec<Vec<ExplicitNode<T>>>,
}

impl<T: Real> ExplicitTree<T> {
    pub fn node_count(&self) -> usize {
        fn count<T>(n: &ExplicitNode<T>) -> usize {
            1 + n.children.iter().map(count).sum::<usize>()
        }
        self.roots.iter().flatten().map(count).sum()
    }
}

/// Builds the explicit tree breadth-wise along each sequence: observations
/// are sampled from the parent posterior (hypothesis by weight, then state,
/// then association and observation), and each child's posterior is the
/// budgeted update, exactly as the belief would evolve in inference.
pub fn build_explicit_tree<T: Real, R: Rng + ?Sized>(
    b: &MixtureBelief<T>,
    shape: &TreeShape<T>,
    budget: &InferenceBudget,
    w_env: &World<T>,
    m: &MotionModel<T>,
    obs: &ObservationModel<T>,
    rng: &mut R,
) -> Result<ExplicitTree<T>> {
    #[allow(clippy::too_many_arguments)]
    fn expand<T: Real, R: Rng + ?Sized>(
        parent: &MixtureBelief<T>,
        actions: &[Action<T>],
        depth: usize,
        shape_obs: usize,
        budget: &InferenceBudget,
        w_env: &World<T>,
        m: &MotionModel<T>,
        obs: &ObservationModel<T>,
        rng: &mut R,
    ) -> Result<ExplicitNode<T>> {
        let u = actions[depth - 1];
        let x_prev = sample_mixture_state(parent, rng);
        let x = propagate(&x_prev, &u, &m.sample_noise(rng));
        let (_, z, _) = sample_observation_at(w_env, &x, obs, rng);

        let (children, max_d) =
            update_children(parent, &u, &z, w_env, m, obs, CandidatePrior::default())?;
        if children.is_empty() {
            return Err(Error::Contradiction);
        }
        let full = MixtureBelief {
            time_index: parent.time_index + 1,
            hypotheses: children,
        };
        let step_all: Vec<T> = full.hypotheses.iter().map(|h| h.log_weight).collect();
        let kept = crate::belief::prune_indices(&step_all, budget.max_hypotheses, budget.heuristic);
        let step_log_weights: Vec<T> = kept.iter().map(|&i| step_all[i]).collect();
        let mut posterior = prune_belief(full, budget);
        posterior.normalize()?;

        let mut node = ExplicitNode {
            depth,
            incoming_action: u,
            sampled_observation: z,
            posterior,
            step_log_weights,
            step_max_d: max_d,
            children: Vec::new(),
        };
        if depth < actions.len() {
            for _ in 0..shape_obs {
                node.children.push(expand(
                    &node.posterior,
                    actions,
                    depth + 1,
                    shape_obs,
                    budget,
                    w_env,
                    m,
                    obs,
                    rng,
                )?);
            }
        }
        Ok(node)
    }

    let mut roots = Vec::with_capacity(shape.num_sequences());
    for s in 0..shape.num_sequences() {
        let actions = shape.actions(s);
        let mut first = Vec::with_capacity(shape.observations_per_step);
        for _ in 0..shape.observations_per_step {
            first.push(expand(
                b,
                &actions,
                1,
                shape.observations_per_step,
                budget,
                w_env,
                m,
                obs,
                rng,
            )?);
        }
        roots.push(first);
    }
    Ok(ExplicitTree {
        shape: shape.clone(),
        root_belief: b.clone(),
        roots,
    })
}
