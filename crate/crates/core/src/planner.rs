//! Bound-based action selection over belief trees: recursive Bellman
//! propagation of per-node cost intervals, anytime refinement driven by a
//! decision rule, the four budget regimes, and the full-evaluation oracle.
//!
//! The planner never materializes a node's full posterior up front. Each node
//! lazily Bayes-updates only the lineages of selected prior components along
//! the node's sampled observation path; the entropy-cost interval of the node
//! comes from that subset plus side information (module [`crate::bounds`]).
//! Action sequences whose objective interval overlaps the incumbent best are
//! refined one component per round until the decision rule is satisfied or
//! the budget is exhausted; the reported loss bound is the gap between the
//! selected sequence's upper bound and the smallest lower bound.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use nalgebra::Matrix3;
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::belief::{
    predict_hypothesis, prune_indices, update_hypothesis, CandidatePrior, Hypothesis,
    InferenceBudget, MixtureBelief, PruningHeuristic,
};
use crate::bounds::{entropy, entropy_bounds, eta_bounds, BoundInterval, EtaSideInfo};
use crate::env::{class_disk_bound, enumerate_associations, World};
use crate::models::{Action, ClassId, Measurement, MotionModel, ObservationModel, Pose2};
use crate::tree::{
    build_explicit_tree, build_skeleton, ExplicitNode, ExplicitTree, Skeleton, SkeletonNode,
    TreeShape,
};
use crate::{real, Error, Real, Result};

/// Overlap slack below which two objective intervals are considered
/// separated and the selection is certified optimal.
const OVERLAP_EPS: f64 = 1e-12;

/// Default per-node component cap for the exact oracle.
pub const DEFAULT_ORACLE_CAP: usize = 50_000;

/// Named strategy choosing which components enter a node's subset at each
/// refinement level. Subsets are nested across levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimplificationHeuristic {
    /// Order lineages by their prior (time-k) weight, descending; ties by
    /// lineage order. Level `l` takes the first `l` components.
    GreedyPriorWeight,
}

impl SimplificationHeuristic {
    pub fn name(&self) -> &'static str {
        match self {
            SimplificationHeuristic::GreedyPriorWeight => "greedy-prior",
        }
    }
}

impl std::str::FromStr for SimplificationHeuristic {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy-prior" => Ok(SimplificationHeuristic::GreedyPriorWeight),
            other => Err(Error::InvalidConfig(format!("unknown heuristic: {other}"))),
        }
    }
}

/// Predicate deciding when bound refinement may stop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecisionRule {
    /// Refine until the selected action's upper bound clears every lower
    /// bound; certifies optimality with zero loss.
    NoOverlap,
    /// Anytime: stop refining once the elapsed wall time exceeds the budget.
    TimeBudget { seconds: f64 },
    /// Stop once every still-contending action reached the given level.
    MaxLevel { level: usize },
}

impl DecisionRule {
    pub fn name(&self) -> String {
        match self {
            DecisionRule::NoOverlap => "no-overlap".into(),
            DecisionRule::TimeBudget { seconds } => format!("time:{seconds}"),
            DecisionRule::MaxLevel { level } => format!("level:{level}"),
        }
    }
}

impl std::str::FromStr for DecisionRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "no-overlap" {
            return Ok(DecisionRule::NoOverlap);
        }
        if let Some(rest) = s.strip_prefix("time:") {
            let seconds: f64 = rest
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad time rule: {s}")))?;
            return Ok(DecisionRule::TimeBudget { seconds });
        }
        if let Some(rest) = s.strip_prefix("level:") {
            let level: usize = rest
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad level rule: {s}")))?;
            return Ok(DecisionRule::MaxLevel { level });
        }
        Err(Error::InvalidConfig(format!("unknown decision rule: {s}")))
    }
}

/// Planning-side cap on the subset size evaluated at any node.
#[derive(Debug, Clone, Copy)]
pub struct PlanningBudget {
    pub max_components_per_node: usize,
}

/// Outcome of one planning session.
#[derive(Debug, Clone)]
pub struct PlanReport<T> {
    pub best_sequence_index: usize,
    pub best_sequence: Vec<Action<T>>,
    pub encoded_sequence: String,
    /// Upper bound on the suboptimality of the selected sequence relative to
    /// the exact objective on the same tree. Exactly zero when the
    /// no-overlap rule held.
    pub loss_bound: T,
    /// Final objective interval per candidate sequence.
    pub root_intervals: Vec<BoundInterval<T>>,
    /// Mean fraction of a node's components materialized for bound
    /// evaluation, per tree depth (index 0 = depth 1).
    pub per_level_component_usage: Vec<f64>,
    /// Mean accumulated objective-interval width per tree depth.
    pub per_depth_interval_width: Vec<T>,
    pub wall_time: Duration,
    pub node_count: usize,
    pub case_label: u8,
    /// Largest subset evaluated at any node (budget-compliance telemetry).
    pub max_subset_size: usize,
    /// Total lineage components Bayes-updated across all nodes.
    pub materialized_components: usize,
}

/// One Bellman step on intervals: node cost plus the empirical mean of the
/// sampled children's objective intervals. Leaves pass their cost through.
pub fn bellman_interval<T: Real>(
    cost: &BoundInterval<T>,
    children: &[BoundInterval<T>],
) -> BoundInterval<T> {
    if children.is_empty() {
        return *cost;
    }
    let mut sum = BoundInterval::zero();
    for c in children {
        sum = sum.add(c);
    }
    cost.add(&sum.scale(T::one() / real::<T>(children.len() as f64)))
}

// ============================================================================
// Shared refinement driver
// ============================================================================

trait SequenceCostModel<T: Real> {
    fn num_sequences(&self) -> usize;
    /// Evaluates one sequence's objective interval with `level` components
    /// per node; the second value reports whether a higher level could still
    /// change the interval.
    fn evaluate(&mut self, sequence: usize, level: usize) -> Result<(BoundInterval<T>, bool)>;
}

struct LoopOutcome<T> {
    best: usize,
    loss: T,
    intervals: Vec<BoundInterval<T>>,
}

fn run_bound_loop<T: Real, M: SequenceCostModel<T>>(
    model: &mut M,
    rule: &DecisionRule,
    level_cap: usize,
) -> Result<LoopOutcome<T>> {
    let n = model.num_sequences();
    if n == 0 {
        return Err(Error::InvalidConfig("empty candidate action set".into()));
    }
    let cap = match rule {
        DecisionRule::MaxLevel { level } => level_cap.min((*level).max(1)),
        _ => level_cap,
    };
    let start = Instant::now();
    let mut levels = vec![1usize; n];
    let mut intervals = Vec::with_capacity(n);
    let mut open = Vec::with_capacity(n);
    for s in 0..n {
        let (iv, more) = model.evaluate(s, 1)?;
        intervals.push(iv);
        open.push(more);
    }
    let eps = real::<T>(OVERLAP_EPS);
    loop {
        let best = argmin_upper(&intervals);
        let min_lb = intervals
            .iter()
            .map(|iv| iv.lower)
            .fold(T::infinity(), |a, b| if b < a { b } else { a });
        let mut loss = intervals[best].upper - min_lb;
        if loss < T::zero() {
            loss = T::zero();
        }
        let separated = match rule {
            DecisionRule::NoOverlap | DecisionRule::MaxLevel { .. } => loss <= eps,
            DecisionRule::TimeBudget { seconds } => {
                if start.elapsed().as_secs_f64() >= *seconds {
                    return Ok(LoopOutcome {
                        best,
                        loss: if loss <= eps { T::zero() } else { loss },
                        intervals,
                    });
                }
                loss <= eps
            }
        };
        // The selection must be refine-order independent: on exact objective
        // ties the exhaustive argmin names the first tied sequence, so any
        // still-wide lower-index contender is collapsed before stopping.
        let refine_set: Vec<usize> = if separated {
            (0..best)
                .filter(|&s| {
                    intervals[s].width() > eps
                        && intervals[s].lower <= intervals[best].upper + eps
                        && open[s]
                        && levels[s] < cap
                })
                .collect()
        } else {
            let ub_best = intervals[best].upper;
            (0..n)
                .filter(|&s| {
                    (s == best || intervals[s].lower <= ub_best) && open[s] && levels[s] < cap
                })
                .collect()
        };
        if refine_set.is_empty() {
            let loss = if loss <= eps { T::zero() } else { loss };
            return Ok(LoopOutcome {
                best,
                loss,
                intervals,
            });
        }
        for s in refine_set {
            levels[s] += 1;
            let (iv, more) = model.evaluate(s, levels[s])?;
            intervals[s] = iv;
            open[s] = more;
        }
    }
}

fn argmin_upper<T: Real>(intervals: &[BoundInterval<T>]) -> usize {
    let mut best = 0usize;
    for (i, iv) in intervals.iter().enumerate().skip(1) {
        if iv.upper < intervals[best].upper {
            best = i;
        }
    }
    best
}

// ============================================================================
// Skeleton evaluation (Cases 1, 2, 4 and the oracle)
// ============================================================================

/// One lazily materialized posterior component along a sampled path.
#[derive(Debug, Clone, Copy)]
struct PathComponent<T> {
    log_weight: T,
    mean: Pose2<T>,
    cov: Matrix3<T>,
    /// Greedy position of the prior lineage this component descends from.
    bundle: usize,
    /// Index into the parent node's component list (prior index at depth 1).
    parent_comp: usize,
}

struct SkelNodeEval<T> {
    parent: Option<usize>,
    depth: usize,
    action: Action<T>,
    observation: Vec<Measurement<T>>,
    classes: Vec<ClassId>,
    children: Vec<usize>,
    /// Likelihood suprema per path step, root to here.
    sigma_steps: Vec<T>,
    /// Product of per-step realization bounds along the path (without the
    /// prior count).
    step_bound_product: usize,
    comps: Vec<PathComponent<T>>,
    bundle_ranges: Vec<std::ops::Range<usize>>,
    last_used: usize,
    last_total: usize,
    last_j: BoundInterval<T>,
}

struct SkeletonEvaluator<'a, T: Real> {
    env: &'a World<T>,
    motion: &'a MotionModel<T>,
    obs: &'a ObservationModel<T>,
    /// Prior hypotheses in greedy order: (original index, log weight).
    greedy: Vec<(usize, T)>,
    prior_weights: Vec<T>,
    root_hyps: Vec<Hypothesis<T>>,
    root_cost: BoundInterval<T>,
    horizon: usize,
    seqs: Vec<Vec<usize>>,
    nodes: Vec<SkelNodeEval<T>>,
    node_cap: usize,
    max_subset: usize,
    materialized: usize,
}

impl<'a, T: Real> SkeletonEvaluator<'a, T> {
    fn new(
        skeleton: &Skeleton<T>,
        root: &MixtureBelief<T>,
        heuristic: SimplificationHeuristic,
        env: &'a World<T>,
        motion: &'a MotionModel<T>,
        obs: &'a ObservationModel<T>,
        node_cap: usize,
    ) -> Result<Self> {
        let SimplificationHeuristic::GreedyPriorWeight = heuristic;
        let weights = root.weights();
        let mut greedy: Vec<(usize, T)> = root
            .hypotheses
            .iter()
            .enumerate()
            .map(|(i, h)| (i, h.log_weight))
            .collect();
        greedy.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let root_cost = BoundInterval::point(entropy(&weights)?);

        let mut class_bounds: HashMap<ClassId, usize> = HashMap::new();
        let mut bound_of = |class: ClassId| -> usize {
            *class_bounds
                .entry(class)
                .or_insert_with(|| class_disk_bound(env, class, obs.max_sensing_range).max(1))
        };

        let mut nodes: Vec<SkelNodeEval<T>> = Vec::new();
        let mut seqs = Vec::with_capacity(skeleton.roots.len());
        fn flatten<T: Real>(
            n: &SkeletonNode<T>,
            parent: Option<usize>,
            nodes: &mut Vec<SkelNodeEval<T>>,
            seq_nodes: &mut Vec<usize>,
            obs: &ObservationModel<T>,
            bound_of: &mut dyn FnMut(ClassId) -> usize,
        ) {
            let classes: Vec<ClassId> = n
                .sampled_observation
                .iter()
                .map(|z| z.landmark_class)
                .collect();
            let sigma = if classes.is_empty() {
                T::one()
            } else {
                obs.max_likelihood_value(classes.len())
            };
            let step_bound: usize = classes
                .iter()
                .map(|&c| bound_of(c))
                .product::<usize>()
                .max(1);
            let (mut sigma_steps, parent_product) = match parent {
                Some(p) => (nodes[p].sigma_steps.clone(), nodes[p].step_bound_product),
                None => (Vec::new(), 1usize),
            };
            sigma_steps.push(sigma);
            let idx = nodes.len();
            nodes.push(SkelNodeEval {
                parent,
                depth: n.depth,
                action: n.incoming_action,
                observation: n.sampled_observation.clone(),
                classes,
                children: Vec::new(),
                sigma_steps,
                step_bound_product: parent_product.saturating_mul(step_bound),
                comps: Vec::new(),
                bundle_ranges: Vec::new(),
                last_used: 0,
                last_total: 0,
                last_j: BoundInterval::zero(),
            });
            seq_nodes.push(idx);
            if let Some(p) = parent {
                nodes[p].children.push(idx);
            }
            for c in &n.children {
                flatten(c, Some(idx), nodes, seq_nodes, obs, bound_of);
            }
        }
        for roots in &skeleton.roots {
            let mut seq_nodes = Vec::new();
            for r in roots {
                flatten(r, None, &mut nodes, &mut seq_nodes, obs, &mut bound_of);
            }
            seqs.push(seq_nodes);
        }

        Ok(Self {
            env,
            motion,
            obs,
            greedy,
            prior_weights: weights,
            root_hyps: root.hypotheses.clone(),
            root_cost,
            horizon: skeleton.shape.horizon,
            seqs,
            nodes,
            node_cap,
            max_subset: 0,
            materialized: 0,
        })
    }

    fn num_priors(&self) -> usize {
        self.greedy.len()
    }

    /// Materializes greedy bundles at `node` (and, transitively, at its
    /// ancestors) until the node holds at least `bundles` of them.
    fn ensure_bundles(&mut self, node: usize, bundles: usize) -> Result<()> {
        let bundles = bundles.min(self.num_priors());
        let mut path = vec![node];
        let mut v = node;
        while let Some(p) = self.nodes[v].parent {
            path.push(p);
            v = p;
        }
        path.reverse();
        for &v in &path {
            while self.nodes[v].bundle_ranges.len() < bundles {
                let g = self.nodes[v].bundle_ranges.len();
                self.materialize_bundle(v, g)?;
            }
        }
        Ok(())
    }

    fn ensure_all(&mut self, node: usize) -> Result<()> {
        self.ensure_bundles(node, self.num_priors())
    }

    fn materialize_bundle(&mut self, v: usize, g: usize) -> Result<()> {
        // Parent components of this lineage, copied out to end the borrow.
        let parents: Vec<(T, Pose2<T>, Matrix3<T>, usize)> = match self.nodes[v].parent {
            Some(p) => {
                let range = self.nodes[p].bundle_ranges[g].clone();
                let start = range.start;
                self.nodes[p].comps[range]
                    .iter()
                    .enumerate()
                    .map(|(off, c)| (c.log_weight, c.mean, c.cov, start + off))
                    .collect()
            }
            None => {
                let (orig, log_w) = self.greedy[g];
                let h = &self.root_hyps[orig];
                vec![(log_w, h.mean, h.covariance, orig)]
            }
        };
        let action = self.nodes[v].action;
        let classes = self.nodes[v].classes.clone();
        let observation = self.nodes[v].observation.clone();
        let start = self.nodes[v].comps.len();
        let mut new_comps = Vec::new();
        for (log_w, mean, cov, parent_comp) in parents {
            let pred = predict_hypothesis(&Hypothesis::new(mean, cov, log_w), &action, self.motion);
            let realizations = enumerate_associations(self.env, &pred.mean, &classes, self.obs);
            let d = realizations.len();
            for r in &realizations {
                let (upd, log_ev) = update_hypothesis(&pred, &observation, r, self.env, self.obs)?;
                new_comps.push(PathComponent {
                    log_weight: log_w + CandidatePrior::Uniform.log_factor::<T>(d) + log_ev,
                    mean: upd.mean,
                    cov: upd.covariance,
                    bundle: g,
                    parent_comp,
                });
            }
        }
        self.materialized += new_comps.len();
        let cap = self.node_cap;
        let node = &mut self.nodes[v];
        node.comps.extend(new_comps);
        node.bundle_ranges.push(start..node.comps.len());
        if node.comps.len() > cap {
            return Err(Error::CapExceeded {
                actual: node.comps.len(),
                cap,
            });
        }
        Ok(())
    }

    /// Conservative component count of a node: prior count times the product
    /// of per-step realization bounds, never below what was materialized.
    fn total_bound(&self, v: usize) -> usize {
        self.num_priors()
            .saturating_mul(self.nodes[v].step_bound_product)
            .max(self.nodes[v].comps.len())
    }

    fn prefix_mass(&self, v: usize, k: usize) -> T {
        self.nodes[v].comps[..k]
            .iter()
            .fold(T::zero(), |a, c| a + Float::exp(c.log_weight))
    }

    /// Cost interval of `v` using the first `level` components in canonical
    /// order, growing past zero-mass prefixes. Returns the interval, the
    /// subset size used, and whether the node is exactly evaluated.
    fn node_cost_prefix(
        &mut self,
        v: usize,
        level: usize,
    ) -> Result<(BoundInterval<T>, usize, bool)> {
        loop {
            let have = self.nodes[v].comps.len();
            let bundles = self.nodes[v].bundle_ranges.len();
            if have >= level || bundles >= self.num_priors() {
                break;
            }
            self.ensure_bundles(v, bundles + 1)?;
        }
        let mut k = level.min(self.nodes[v].comps.len());
        loop {
            // extend past a zero-mass prefix, materializing more lineages if
            // the present ones cannot carry mass
            while k < self.nodes[v].comps.len() && !(self.prefix_mass(v, k) > T::zero()) {
                k += 1;
            }
            if self.prefix_mass(v, k) > T::zero()
                || self.nodes[v].bundle_ranges.len() >= self.num_priors()
            {
                break;
            }
            let bundles = self.nodes[v].bundle_ranges.len();
            self.ensure_bundles(v, bundles + 1)?;
        }
        let all_bundles = self.nodes[v].bundle_ranges.len() >= self.num_priors();
        let complete = all_bundles && k == self.nodes[v].comps.len();
        self.max_subset = self.max_subset.max(k);
        let total = self.total_bound(v);
        self.nodes[v].last_used = k;
        self.nodes[v].last_total = total;

        let node = &self.nodes[v];
        let weights: Vec<T> = node.comps[..k]
            .iter()
            .map(|c| Float::exp(c.log_weight))
            .collect();
        let mass = weights.iter().fold(T::zero(), |a, &w| a + w);
        if !(mass > T::zero()) {
            // Every lineage is impossible on this sampled path; the node's
            // belief is empty and contributes no cost.
            return Ok((BoundInterval::zero(), k, true));
        }
        if complete {
            return Ok((BoundInterval::point(entropy(&weights)?), k, true));
        }
        let info = EtaSideInfo {
            prior_weights_of_subset: node.comps[..k]
                .iter()
                .map(|c| self.prior_weights[self.greedy[c.bundle].0])
                .collect(),
            sigma_per_step: node.sigma_steps.clone(),
            total_components: total,
            prior_components: self.num_priors(),
        };
        let eta = eta_bounds(&info, &weights)?;
        let h_s = entropy(&weights)?;
        let iv = entropy_bounds(h_s, mass, &eta, total - k)?;
        Ok((iv, k, false))
    }

    /// Cost interval of `v` over an explicit component subset (Case 4).
    /// The node must be fully materializable within the cap.
    fn node_cost_subset(&mut self, v: usize, subset: &[usize]) -> Result<BoundInterval<T>> {
        self.ensure_all(v)?;
        let node = &self.nodes[v];
        let complete = subset.len() == node.comps.len();
        let weights: Vec<T> = subset
            .iter()
            .map(|&i| Float::exp(node.comps[i].log_weight))
            .collect();
        let mass = weights.iter().fold(T::zero(), |a, &w| a + w);
        if !(mass > T::zero()) {
            if complete {
                return Ok(BoundInterval::zero());
            }
            return Err(Error::ZeroMassSubset);
        }
        if complete {
            return Ok(BoundInterval::point(entropy(&weights)?));
        }
        let total = self.total_bound(v);
        let info = EtaSideInfo {
            prior_weights_of_subset: subset
                .iter()
                .map(|&i| self.prior_weights[self.greedy[node.comps[i].bundle].0])
                .collect(),
            sigma_per_step: node.sigma_steps.clone(),
            total_components: total,
            prior_components: self.num_priors(),
        };
        let eta = eta_bounds(&info, &weights)?;
        let h_s = entropy(&weights)?;
        entropy_bounds(h_s, mass, &eta, total - subset.len())
    }

    fn usage_by_depth(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.horizon];
        let mut counts = vec![0usize; self.horizon];
        for n in &self.nodes {
            if n.last_total > 0 {
                sums[n.depth - 1] += n.last_used as f64 / n.last_total as f64;
                counts[n.depth - 1] += 1;
            }
        }
        sums.iter()
            .zip(&counts)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect()
    }

    fn width_by_depth(&self) -> Vec<T> {
        let mut sums = vec![T::zero(); self.horizon];
        let mut counts = vec![0usize; self.horizon];
        for n in &self.nodes {
            sums[n.depth - 1] += n.last_j.width();
            counts[n.depth - 1] += 1;
        }
        sums.iter()
            .zip(&counts)
            .map(|(&s, &c)| {
                if c > 0 {
                    s / real::<T>(c as f64)
                } else {
                    T::zero()
                }
            })
            .collect()
    }
}

impl<T: Real> SequenceCostModel<T> for SkeletonEvaluator<'_, T> {
    fn num_sequences(&self) -> usize {
        self.seqs.len()
    }

    fn evaluate(&mut self, sequence: usize, level: usize) -> Result<(BoundInterval<T>, bool)> {
        let order = self.seqs[sequence].clone(); // pre-order; reversed = post-order
        let mut exact_everywhere = true;
        let mut j: HashMap<usize, BoundInterval<T>> = HashMap::new();
        for &v in order.iter().rev() {
            let (cost, _, exact) = self.node_cost_prefix(v, level)?;
            exact_everywhere &= exact;
            let child_js: Vec<BoundInterval<T>> =
                self.nodes[v].children.iter().map(|c| j[c]).collect();
            let jv = bellman_interval(&cost, &child_js);
            self.nodes[v].last_j = jv;
            j.insert(v, jv);
        }
        let first: Vec<BoundInterval<T>> = order
            .iter()
            .filter(|&&v| self.nodes[v].parent.is_none())
            .map(|v| j[v])
            .collect();
        let root_j = bellman_interval(&self.root_cost, &first);
        Ok((root_j, !exact_everywhere))
    }
}

// ============================================================================
// Explicit-tree evaluation (Case 3)
// ============================================================================

struct ExpNodeEval<T> {
    parent: Option<usize>,
    depth: usize,
    children: Vec<usize>,
    /// Survivors' parent-relative unnormalized log weights.
    step_log_weights: Vec<T>,
    /// Normalized weight of each survivor's parent hypothesis.
    parent_weight_of: Vec<T>,
    /// Canonical subset order (parent weight descending, lineage tie-break).
    order: Vec<usize>,
    step_max_d: usize,
    parent_count: usize,
    sigma_step: T,
    last_j: BoundInterval<T>,
    last_used: usize,
}

struct ExplicitEvaluator<T> {
    root_cost: BoundInterval<T>,
    horizon: usize,
    seqs: Vec<Vec<usize>>,
    nodes: Vec<ExpNodeEval<T>>,
    max_subset: usize,
}

impl<T: Real> ExplicitEvaluator<T> {
    fn new(
        tree: &ExplicitTree<T>,
        heuristic: SimplificationHeuristic,
        obs: &ObservationModel<T>,
    ) -> Result<Self> {
        let SimplificationHeuristic::GreedyPriorWeight = heuristic;
        let root_cost = BoundInterval::point(entropy(&tree.root_belief.weights())?);
        let mut nodes: Vec<ExpNodeEval<T>> = Vec::new();
        let mut seqs = Vec::with_capacity(tree.roots.len());
        fn flatten<T: Real>(
            n: &ExplicitNode<T>,
            parent: Option<usize>,
            parent_belief: &MixtureBelief<T>,
            nodes: &mut Vec<ExpNodeEval<T>>,
            seq_nodes: &mut Vec<usize>,
            obs: &ObservationModel<T>,
        ) {
            let parent_weights = parent_belief.weights();
            let parent_weight_of: Vec<T> = n
                .posterior
                .hypotheses
                .iter()
                .map(|h| parent_weights[h.parent_index.expect("tree children have parents")])
                .collect();
            let mut order: Vec<usize> = (0..n.posterior.len()).collect();
            order.sort_by(|&a, &b| {
                parent_weight_of[b]
                    .partial_cmp(&parent_weight_of[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let m = n.sampled_observation.len();
            let idx = nodes.len();
            nodes.push(ExpNodeEval {
                parent,
                depth: n.depth,
                children: Vec::new(),
                step_log_weights: n.step_log_weights.clone(),
                parent_weight_of,
                order,
                step_max_d: n.step_max_d.max(1),
                parent_count: parent_belief.len(),
                sigma_step: if m == 0 {
                    T::one()
                } else {
                    obs.max_likelihood_value(m)
                },
                last_j: BoundInterval::zero(),
                last_used: 0,
            });
            seq_nodes.push(idx);
            if let Some(p) = parent {
                nodes[p].children.push(idx);
            }
            for c in &n.children {
                flatten(c, Some(idx), &n.posterior, nodes, seq_nodes, obs);
            }
        }
        for roots in &tree.roots {
            let mut seq_nodes = Vec::new();
            for r in roots {
                flatten(r, None, &tree.root_belief, &mut nodes, &mut seq_nodes, obs);
            }
            seqs.push(seq_nodes);
        }
        Ok(Self {
            root_cost,
            horizon: tree.shape.horizon,
            seqs,
            nodes,
            max_subset: 0,
        })
    }

    fn node_cost(&mut self, v: usize, level: usize) -> Result<(BoundInterval<T>, bool)> {
        let survivors = self.nodes[v].step_log_weights.len();
        let weight_at = |node: &ExpNodeEval<T>, i: usize| -> T {
            Float::exp(node.step_log_weights[node.order[i]])
        };
        let mut k = level.min(survivors);
        while k < survivors {
            let node = &self.nodes[v];
            let mass = (0..k).fold(T::zero(), |a, i| a + weight_at(node, i));
            if mass > T::zero() {
                break;
            }
            k += 1;
        }
        self.max_subset = self.max_subset.max(k);
        self.nodes[v].last_used = k;
        let node = &self.nodes[v];
        let weights: Vec<T> = (0..k).map(|i| weight_at(node, i)).collect();
        let mass = weights.iter().fold(T::zero(), |a, &w| a + w);
        if !(mass > T::zero()) {
            return Ok((BoundInterval::zero(), true));
        }
        if k == survivors {
            return Ok((BoundInterval::point(entropy(&weights)?), true));
        }
        let info = EtaSideInfo {
            prior_weights_of_subset: (0..k)
                .map(|i| node.parent_weight_of[node.order[i]])
                .collect(),
            sigma_per_step: vec![node.sigma_step],
            total_components: node.parent_count * node.step_max_d,
            prior_components: node.parent_count,
        };
        let eta = eta_bounds(&info, &weights)?;
        let h_s = entropy(&weights)?;
        let iv = entropy_bounds(h_s, mass, &eta, survivors - k)?;
        Ok((iv, false))
    }

    fn usage_by_depth(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.horizon];
        let mut counts = vec![0usize; self.horizon];
        for n in &self.nodes {
            let total = n.step_log_weights.len().max(1);
            sums[n.depth - 1] += n.last_used as f64 / total as f64;
            counts[n.depth - 1] += 1;
        }
        sums.iter()
            .zip(&counts)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect()
    }

    fn width_by_depth(&self) -> Vec<T> {
        let mut sums = vec![T::zero(); self.horizon];
        let mut counts = vec![0usize; self.horizon];
        for n in &self.nodes {
            sums[n.depth - 1] += n.last_j.width();
            counts[n.depth - 1] += 1;
        }
        sums.iter()
            .zip(&counts)
            .map(|(&s, &c)| {
                if c > 0 {
                    s / real::<T>(c as f64)
                } else {
                    T::zero()
                }
            })
            .collect()
    }
}

impl<T: Real> SequenceCostModel<T> for ExplicitEvaluator<T> {
    fn num_sequences(&self) -> usize {
        self.seqs.len()
    }

    fn evaluate(&mut self, sequence: usize, level: usize) -> Result<(BoundInterval<T>, bool)> {
        let order = self.seqs[sequence].clone();
        let mut exact_everywhere = true;
        let mut j: HashMap<usize, BoundInterval<T>> = HashMap::new();
        for &v in order.iter().rev() {
            let (cost, exact) = self.node_cost(v, level)?;
            exact_everywhere &= exact;
            let child_js: Vec<BoundInterval<T>> =
                self.nodes[v].children.iter().map(|c| j[c]).collect();
            let jv = bellman_interval(&cost, &child_js);
            self.nodes[v].last_j = jv;
            j.insert(v, jv);
        }
        let first: Vec<BoundInterval<T>> = order
            .iter()
            .filter(|&&v| self.nodes[v].parent.is_none())
            .map(|v| j[v])
            .collect();
        Ok((bellman_interval(&self.root_cost, &first), !exact_everywhere))
    }
}

// ============================================================================
// Public planning entry points
// ============================================================================

/// Generic bound-based planning over a belief-tree skeleton: bottom-up
/// interval evaluation, refinement while the decision rule is unsatisfied,
/// min-upper-bound selection, and a worst-case loss bound.
#[allow(clippy::too_many_arguments)]
pub fn nd2a_plan<T: Real>(
    skeleton: &Skeleton<T>,
    root: &MixtureBelief<T>,
    heuristic: SimplificationHeuristic,
    rule: &DecisionRule,
    budget: Option<&PlanningBudget>,
    env: &World<T>,
    motion: &MotionModel<T>,
    obs: &ObservationModel<T>,
) -> Result<PlanReport<T>> {
    let start = Instant::now();
    let mut eval = SkeletonEvaluator::new(
        skeleton,
        root,
        heuristic,
        env,
        motion,
        obs,
        DEFAULT_ORACLE_CAP,
    )?;
    let level_cap = budget.map_or(usize::MAX, |b| b.max_components_per_node.max(1));
    let outcome = run_bound_loop(&mut eval, rule, level_cap)?;
    Ok(PlanReport {
        best_sequence_index: outcome.best,
        best_sequence: skeleton.shape.actions(outcome.best),
        encoded_sequence: skeleton.shape.encode_sequence(outcome.best),
        loss_bound: outcome.loss,
        root_intervals: outcome.intervals,
        per_level_component_usage: eval.usage_by_depth(),
        per_depth_interval_width: eval.width_by_depth(),
        wall_time: start.elapsed(),
        node_count: skeleton.node_count(),
        case_label: if budget.is_some() { 2 } else { 1 },
        max_subset_size: eval.max_subset,
        materialized_components: eval.materialized,
    })
}

/// Case 1: no budget anywhere. Skeleton sampling, unbounded refinement under
/// the no-overlap rule; the selected sequence is optimal for this tree and
/// the loss bound is zero.
pub fn plan_case1<T: Real>(
    b: &MixtureBelief<T>,
    shape: &TreeShape<T>,
    heuristic: SimplificationHeuristic,
    env: &World<T>,
    motion: &MotionModel<T>,
    obs: &ObservationModel<T>,
    seed: u64,
) -> Result<PlanReport<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skeleton = build_skeleton(b, shape, env, motion, obs, &mut rng);
    nd2a_plan(
        &skeleton,
        b,
        heuristic,
        &DecisionRule::NoOverlap,
        None,
        env,
        motion,
        obs,
    )
}

/// Case 2: planning budget only. Refinement stops at the per-node component
/// cap; the report carries a possibly nonzero loss bound.
#[allow(clippy::too_many_arguments)]
pub fn plan_case2<T: Real>(
    b: &MixtureBelief<T>,
    shape: &TreeShape<T>,
    heuristic: SimplificationHeuristic,
    budget: &PlanningBudget,
    env: &World<T>,
    motion: &MotionModel<T>,
    obs: &ObservationModel<T>,
    seed: u64,
) -> Result<PlanReport<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skeleton = build_skeleton(b, shape, env, motion, obs, &mut rng);
    nd2a_plan(
        &skeleton,
        b,
        heuristic,
        &DecisionRule::NoOverlap,
        Some(budget),
        env,
        motion,
        obs,
    )
}

/// Case 3: inference budget only. Builds the explicit tree whose posteriors
/// evolve exactly as budgeted inference would, and evaluates the recursive
/// per-step bounds conditioned on each parent posterior. Guarantees are with
/// respect to the given inference heuristic.
#[allow(clippy::too_many_arguments)]
pub fn plan_case3<T: Real>(
    b: &MixtureBelief<T>,
    shape: &TreeShape<T>,
    heuristic: SimplificationHeuristic,
    inf_budget: &InferenceBudget,
    env: &World<T>,
    motion: &MotionModel<T>,
    obs: &ObservationModel<T>,
    seed: u64,
) -> Result<PlanReport<T>> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = build_explicit_tree(b, shape, inf_budget, env, motion, obs, &mut rng)?;
    let mut eval = ExplicitEvaluator::new(&tree, heuristic, obs)?;
    let outcome = run_bound_loop(&mut eval, &DecisionRule::NoOverlap, usize::MAX)?;
    Ok(PlanReport {
        best_sequence_index: outcome.best,
        best_sequence: shape.actions(outcome.best),
        encoded_sequence: shape.encode_sequence(outcome.best),
        loss_bound: outcome.loss,
        root_intervals: outcome.intervals,
        per_level_component_usage: eval.usage_by_depth(),
        per_depth_interval_width: eval.width_by_depth(),
        wall_time: start.elapsed(),
        node_count: tree.node_count(),
        case_label: 3,
        max_subset_size: eval.max_subset,
        materialized_components: 0,
    })
}

/// Exact objective of every candidate sequence: every posterior component is
/// materialized at every node, per-node entropies are exact, and the argmin
/// is selected. This is the correctness oracle for every case; the exact
/// objective values sit in `root_intervals` as degenerate intervals.
pub fn baseline_full_evaluation<T: Real>(
    b: &MixtureBelief<T>,
    shape: &TreeShape<T>,
    env: &World<T>,
    motion: &MotionModel<T>,
    obs: &ObservationModel<T>,
    seed: u64,
    component_cap: usize,
) -> Result<PlanReport<T>> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skeleton = build_skeleton(b, shape, env, motion, obs, &mut rng);
    let mut report = baseline_on_skeleton(&skeleton, b, env, motion, obs, component_cap)?;
    report.wall_time = start.elapsed();
    Ok(report)
}

/// Oracle evaluation on a prebuilt skeleton, for paired comparisons against
/// a bounded planner run on the same tree.
pub fn baseline_on_skeleton<T: Real>(
    skeleton: &Skeleton<T>,
    root: &MixtureBelief<T>,
    env: &World<T>,
    motion: &MotionModel<T>,
    obs: &ObservationModel<T>,
    component_cap: usize,
) -> Result<PlanReport<T>> {
    let start = Instant::now();
    let mut eval = SkeletonEvaluator::new(
        skeleton,
        root,
        SimplificationHeuristic::GreedyPriorWeight,
        env,
        motion,
        obs,
        component_cap,
    )?;
    let n = eval.num_sequences();
    let mut intervals = Vec::with_capacity(n);
    for s in 0..n {
        let (iv, _) = eval.evaluate(s, usize::MAX)?;
        intervals.push(iv);
    }
    let mut best = 0usize;
    for (i, iv) in intervals.iter().enumerate().skip(1) {
        if iv.lower < intervals[best].lower {
            best = i;
        }
    }
    Ok(PlanReport {
        best_sequence_index: best,
        best_sequence: skeleton.shape.actions(best),
        encoded_sequence: skeleton.shape.encode_sequence(best),
        loss_bound: T::zero(),
        root_intervals: intervals,
        per_level_component_usage: vec![1.0; skeleton.shape.horizon],
        per_depth_interval_width: vec![T::zero(); skeleton.shape.horizon],
        wall_time: start.elapsed(),
        node_count: skeleton.node_count(),
        case_label: 0,
        max_subset_size: eval.max_subset,
        materialized_components: eval.materialized,
    })
}

// ============================================================================
// Oracle-backed verification sweeps
// ============================================================================

/// Tallies from one verification sweep over a sampled tree.
#[derive(Debug, Clone, Copy, Default)]
pub struct SweepStats {
    /// Mass/entropy interval evaluations compared against full enumeration.
    pub bound_checks: usize,
    pub bound_violations: usize,
    /// Nodes whose full-subset interval was checked for degeneracy.
    pub convergence_checks: usize,
    pub convergence_violations: usize,
}

impl SweepStats {
    pub fn absorb(&mut self, o: SweepStats) {
        self.bound_checks += o.bound_checks;
        self.bound_violations += o.bound_violations;
        self.convergence_checks += o.convergence_checks;
        self.convergence_violations += o.convergence_violations;
    }
}

/// Samples one tree, materializes every node in full, and checks, against
/// full enumeration: the mass and entropy bounds at every subset level, and
/// the collapse of the interval to the exact entropy at the complete subset.
pub fn oracle_sweep<T: Real>(
    b: &MixtureBelief<T>,
    shape: &TreeShape<T>,
    env: &World<T>,
    motion: &MotionModel<T>,
    obs: &ObservationModel<T>,
    seed: u64,
) -> Result<SweepStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skeleton = build_skeleton(b, shape, env, motion, obs, &mut rng);
    let mut eval = SkeletonEvaluator::new(
        &skeleton,
        b,
        SimplificationHeuristic::GreedyPriorWeight,
        env,
        motion,
        obs,
        DEFAULT_ORACLE_CAP,
    )?;
    let tol = real::<T>(1e-9);
    let mut stats = SweepStats::default();
    for v in 0..eval.nodes.len() {
        eval.ensure_all(v)?;
        let all: Vec<T> = eval.nodes[v]
            .comps
            .iter()
            .map(|c| Float::exp(c.log_weight))
            .collect();
        let eta_true = all.iter().fold(T::zero(), |a, &w| a + w);
        if !(eta_true > T::zero()) {
            continue;
        }
        let h_true = entropy(&all)?;
        let total = eval.total_bound(v);
        for k in 1..=all.len() {
            let subset = &all[..k];
            let mass = subset.iter().fold(T::zero(), |a, &w| a + w);
            if !(mass > T::zero()) {
                continue;
            }
            let info = EtaSideInfo {
                prior_weights_of_subset: eval.nodes[v].comps[..k]
                    .iter()
                    .map(|c| eval.prior_weights[eval.greedy[c.bundle].0])
                    .collect(),
                sigma_per_step: eval.nodes[v].sigma_steps.clone(),
                total_components: total,
                prior_components: eval.num_priors(),
            };
            let eta = eta_bounds(&info, subset)?;
            stats.bound_checks += 1;
            if !eta.contains(eta_true, tol) {
                stats.bound_violations += 1;
            }
            let h = entropy_bounds(entropy(subset)?, mass, &eta, total - k)?;
            stats.bound_checks += 1;
            if !h.contains(h_true, tol) {
                stats.bound_violations += 1;
            }
        }
        let (iv, _, exact) = eval.node_cost_prefix(v, usize::MAX)?;
        stats.convergence_checks += 1;
        if !exact || iv.width() > tol || !iv.contains(h_true, tol) {
            stats.convergence_violations += 1;
        }
    }
    Ok(stats)
}

/// Mass/entropy sandwich tallies of [`oracle_sweep`], as
/// `(checks, violations)`.
pub fn sandwich_check<T: Real>(
    b: &MixtureBelief<T>,
    shape: &TreeShape<T>,
    env: &World<T>,
    motion: &MotionModel<T>,
    obs: &ObservationModel<T>,
    seed: u64,
) -> Result<(usize, usize)> {
    let stats = oracle_sweep(b, shape, env, motion, obs, seed)?;
    Ok((stats.bound_checks, stats.bound_violations))
}

/// Full-subset collapse tallies of [`oracle_sweep`], as
/// `(checks, violations)`.
pub fn convergence_check<T: Real>(
    b: &MixtureBelief<T>,
    shape: &TreeShape<T>,
    env: &World<T>,
    motion: &MotionModel<T>,
    obs: &ObservationModel<T>,
    seed: u64,
) -> Result<(usize, usize)> {
    let stats = oracle_sweep(b, shape, env, motion, obs, seed)?;
    Ok((stats.convergence_checks, stats.convergence_violations))
}

// ============================================================================
// Case 4: exhaustive lineage-consistent heuristic search
// ============================================================================

/// `(lower, upper, per-node component selection)` candidates of one sequence.
type SelectionPairs<T> = Vec<(T, T, Vec<Vec<usize>>)>;
type SelectionMemo<T> = HashMap<(usize, Vec<u32>), SelectionPairs<T>>;

/// Result of the Case-4 exhaustive search over valid inference heuristics.
#[derive(Debug, Clone)]
pub struct Case4Outcome<T> {
    pub report: PlanReport<T>,
    /// Description of the loss-minimizing lineage-consistent selection.
    pub h_p_star: String,
    pub h_p_star_loss: T,
    /// Loss of the keep-highest-weight inference heuristic on the same tree.
    pub h_inf_loss: T,
}

/// Case 4: both inference and planning are budgeted, and the planner may use
/// any lineage-consistent component selection of size at most `budget` per
/// node (a component may only be selected if its parent component was).
/// Every valid selection is enumerated, with memoization per node on the
/// admissible component set; the loss bound of each is evaluated and the
/// minimizer defines the returned heuristic.
///
/// Exhaustive by construction: instances are capped and the tree must be a
/// chain (one observation sample per step).
pub fn plan_case4<T: Real>(
    b: &MixtureBelief<T>,
    shape: &TreeShape<T>,
    budget: usize,
    env: &World<T>,
    motion: &MotionModel<T>,
    obs: &ObservationModel<T>,
    seed: u64,
) -> Result<Case4Outcome<T>> {
    const NODE_CAP: usize = 24;
    const ENUM_CAP: usize = 500_000;

    if shape.observations_per_step != 1 {
        return Err(Error::InvalidConfig(
            "case 4 enumeration requires one observation sample per step".into(),
        ));
    }
    if budget == 0 {
        return Err(Error::InvalidConfig("case 4 budget must be >= 1".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skeleton = build_skeleton(b, shape, env, motion, obs, &mut rng);
    let mut eval = SkeletonEvaluator::new(
        &skeleton,
        b,
        SimplificationHeuristic::GreedyPriorWeight,
        env,
        motion,
        obs,
        NODE_CAP,
    )?;
    let chains: Vec<Vec<usize>> = eval.seqs.clone();
    for chain in &chains {
        for &v in chain {
            eval.ensure_all(v)?;
        }
    }

    // Pareto set of (lower, upper, per-node selection) per sequence.
    let mut per_seq: Vec<SelectionPairs<T>> = Vec::with_capacity(chains.len());
    let mut enumerated = 0usize;
    for chain in &chains {
        let mut memo: SelectionMemo<T> = SelectionMemo::new();
        let root_allowed: Vec<u32> = (0..eval.nodes[chain[0]].comps.len() as u32).collect();
        if root_allowed.is_empty() {
            per_seq.push(vec![(T::zero(), T::zero(), vec![Vec::new()])]);
            continue;
        }
        let pairs = case4_suffix(
            &mut eval,
            chain,
            0,
            &root_allowed,
            budget,
            &mut memo,
            &mut enumerated,
            ENUM_CAP,
        )?;
        if pairs.is_empty() {
            return Err(Error::ZeroMassSubset);
        }
        per_seq.push(pairs);
    }

    let root_h = eval.root_cost.lower;
    let max_l: Vec<T> = per_seq
        .iter()
        .map(|p| {
            p.iter()
                .map(|&(l, _, _)| l)
                .fold(T::neg_infinity(), |a, b| if b > a { b } else { a })
        })
        .collect();

    // loss* = min over (the sequence providing the selected upper bound,
    // pair in its Pareto set) of U minus the best lower bound available
    // anywhere, with the other sequences at their max-lower selections.
    let mut best_loss = T::infinity();
    let mut best_pick = (0usize, 0usize);
    for (s, pairs) in per_seq.iter().enumerate() {
        let other_l = max_l
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != s)
            .map(|(_, &l)| l)
            .fold(T::infinity(), |a, b| if b < a { b } else { a });
        for (k, &(l, u, _)) in pairs.iter().enumerate() {
            let min_l = if l < other_l { l } else { other_l };
            let mut loss = u - min_l;
            if loss < T::zero() {
                loss = T::zero();
            }
            if loss < best_loss {
                best_loss = loss;
                best_pick = (s, k);
            }
        }
    }
    let (best_seq, best_pair) = best_pick;
    let star_sel = per_seq[best_seq][best_pair].2.clone();
    let h_p_star = describe_selection(&eval, &chains[best_seq], &star_sel, shape, best_seq);

    // Loss of the keep-highest-weight inference heuristic: the one
    // lineage-consistent selection budgeted inference would make.
    let mut inf_pairs: Vec<(T, T)> = Vec::with_capacity(chains.len());
    for chain in &chains {
        let mut allowed: Vec<usize> = (0..eval.nodes[chain[0]].comps.len()).collect();
        let mut l_total = T::zero();
        let mut u_total = T::zero();
        for (d, &v) in chain.iter().enumerate() {
            let log_ws: Vec<T> = allowed
                .iter()
                .map(|&i| eval.nodes[v].comps[i].log_weight)
                .collect();
            let kept_local = prune_indices(&log_ws, budget, PruningHeuristic::KeepHighestWeight);
            let kept: Vec<usize> = kept_local.iter().map(|&i| allowed[i]).collect();
            let cost = match eval.node_cost_subset(v, &kept) {
                Ok(c) => c,
                Err(Error::ZeroMassSubset) => BoundInterval::zero(),
                Err(e) => return Err(e),
            };
            l_total += cost.lower;
            u_total += cost.upper;
            if d + 1 < chain.len() {
                allowed = eval.nodes[chain[d + 1]]
                    .comps
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| kept.contains(&c.parent_comp))
                    .map(|(i, _)| i)
                    .collect();
                if allowed.is_empty() {
                    break;
                }
            }
        }
        inf_pairs.push((l_total, u_total));
    }
    let inf_min_u = inf_pairs
        .iter()
        .map(|&(_, u)| u)
        .fold(T::infinity(), |a, b| if b < a { b } else { a });
    let inf_min_l = inf_pairs
        .iter()
        .map(|&(l, _)| l)
        .fold(T::infinity(), |a, b| if b < a { b } else { a });
    let mut h_inf_loss = inf_min_u - inf_min_l;
    if h_inf_loss < T::zero() {
        h_inf_loss = T::zero();
    }

    let report = PlanReport {
        best_sequence_index: best_seq,
        best_sequence: shape.actions(best_seq),
        encoded_sequence: shape.encode_sequence(best_seq),
        loss_bound: best_loss,
        root_intervals: per_seq
            .iter()
            .map(|pairs| {
                let l = pairs
                    .iter()
                    .map(|&(l, _, _)| l)
                    .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
                let u = pairs
                    .iter()
                    .map(|&(_, u, _)| u)
                    .fold(T::infinity(), |a, b| if b < a { b } else { a });
                BoundInterval::new(Float::min(l + root_h, u + root_h), u + root_h)
            })
            .collect(),
        per_level_component_usage: eval.usage_by_depth(),
        per_depth_interval_width: vec![T::zero(); shape.horizon],
        wall_time: start.elapsed(),
        node_count: skeleton.node_count(),
        case_label: 4,
        max_subset_size: budget,
        materialized_components: eval.materialized,
    };
    Ok(Case4Outcome {
        report,
        h_p_star,
        h_p_star_loss: best_loss,
        h_inf_loss,
    })
}

#[allow(clippy::too_many_arguments)]
fn case4_suffix<T: Real>(
    eval: &mut SkeletonEvaluator<'_, T>,
    chain: &[usize],
    d: usize,
    allowed: &[u32],
    budget: usize,
    memo: &mut SelectionMemo<T>,
    enumerated: &mut usize,
    enum_cap: usize,
) -> Result<SelectionPairs<T>> {
    let key = (d, allowed.to_vec());
    if let Some(hit) = memo.get(&key) {
        return Ok(hit.clone());
    }
    let v = chain[d];
    let mut out: SelectionPairs<T> = Vec::new();
    for s in enumerate_subsets(allowed, budget) {
        *enumerated += 1;
        if *enumerated > enum_cap {
            return Err(Error::CapExceeded {
                actual: *enumerated,
                cap: enum_cap,
            });
        }
        let subset: Vec<usize> = s.iter().map(|&i| i as usize).collect();
        let cost = match eval.node_cost_subset(v, &subset) {
            Ok(c) => c,
            Err(Error::ZeroMassSubset) => continue,
            Err(e) => return Err(e),
        };
        if d + 1 == chain.len() {
            out.push((cost.lower, cost.upper, vec![subset]));
        } else {
            let next_allowed: Vec<u32> = eval.nodes[chain[d + 1]]
                .comps
                .iter()
                .enumerate()
                .filter(|(_, c)| subset.contains(&c.parent_comp))
                .map(|(i, _)| i as u32)
                .collect();
            if next_allowed.is_empty() {
                continue;
            }
            let tails = case4_suffix(
                eval,
                chain,
                d + 1,
                &next_allowed,
                budget,
                memo,
                enumerated,
                enum_cap,
            )?;
            for (tl, tu, tsel) in tails {
                let mut sel = vec![subset.clone()];
                sel.extend(tsel);
                out.push((cost.lower + tl, cost.upper + tu, sel));
            }
        }
    }
    let out = pareto_prune(out);
    memo.insert(key, out.clone());
    Ok(out)
}

/// Nonempty subsets of `allowed` with at most `budget` elements, in a
/// deterministic order.
fn enumerate_subsets(allowed: &[u32], budget: usize) -> Vec<Vec<u32>> {
    let n = allowed.len();
    let cap = budget.min(n);
    let mut out = Vec::new();
    let mut stack: Vec<(usize, Vec<u32>)> = vec![(0, Vec::new())];
    while let Some((startpos, cur)) = stack.pop() {
        for (i, &a) in allowed.iter().enumerate().skip(startpos) {
            let mut next = cur.clone();
            next.push(a);
            out.push(next.clone());
            if next.len() < cap {
                stack.push((i + 1, next));
            }
        }
    }
    out.sort();
    out
}

/// Keeps the (max lower, min upper) Pareto frontier.
fn pareto_prune<T: Real>(mut pairs: SelectionPairs<T>) -> SelectionPairs<T> {
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.partial_cmp(&b.1).unwrap())
    });
    let mut out: SelectionPairs<T> = Vec::new();
    let mut best_u = T::infinity();
    for p in pairs {
        if p.1 < best_u {
            best_u = p.1;
            out.push(p);
        }
    }
    out
}

fn describe_selection<T: Real>(
    eval: &SkeletonEvaluator<'_, T>,
    chain: &[usize],
    selection: &[Vec<usize>],
    shape: &TreeShape<T>,
    seq: usize,
) -> String {
    let mut parts = vec![format!("seq={}", shape.encode_sequence(seq))];
    for (d, (v, sel)) in chain.iter().zip(selection).enumerate() {
        let ancestors: Vec<String> = sel
            .iter()
            .map(|&i| {
                let c = &eval.nodes[*v].comps[i];
                format!("{}<-p{}", i, eval.greedy[c.bundle].0)
            })
            .collect();
        parts.push(format!("depth{}:{{{}}}", d + 1, ancestors.join(",")));
    }
    parts.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::PruningHeuristic;
    use crate::env::build_floors;
    use crate::tree::ActionPrimitive;
    use nalgebra::Vector3;

    fn prior_cov() -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(1e-4, 1e-4, 1e-6))
    }

    fn floors_setup(
        floors: usize,
        lpf: usize,
    ) -> (
        World<f64>,
        MixtureBelief<f64>,
        MotionModel<f64>,
        ObservationModel<f64>,
    ) {
        let (w, modes) = build_floors::<f64>(floors, lpf, 3).unwrap();
        let b = MixtureBelief::uniform_prior(&modes, prior_cov());
        let m = MotionModel::from_stds(0.01, 0.002).unwrap();
        let o = ObservationModel::new(0.05, 2.0).unwrap();
        (w, b, m, o)
    }

    fn primitives() -> Vec<ActionPrimitive<f64>> {
        vec![
            ActionPrimitive::new("fwd", Action::new(1.0, 0.0, 0.0)),
            ActionPrimitive::new("back", Action::new(-1.0, 0.0, 0.0)),
            ActionPrimitive::new("stay", Action::zero()),
        ]
    }

    #[test]
    fn bellman_interval_addition() {
        let cost = BoundInterval::new(1.0f64, 2.0);
        let children = [BoundInterval::new(0.5f64, 1.0)];
        let j = bellman_interval(&cost, &children);
        assert_eq!((j.lower, j.upper), (1.5, 3.0));
        let leaf = bellman_interval(&cost, &[]);
        assert_eq!((leaf.lower, leaf.upper), (1.0, 2.0));
        let j2 = bellman_interval(
            &cost,
            &[BoundInterval::new(0.0, 1.0), BoundInterval::new(1.0, 3.0)],
        );
        assert_eq!((j2.lower, j2.upper), (1.5, 4.0));
    }

    #[test]
    fn case1_matches_oracle_with_zero_loss() {
        let (w, b, m, o) = floors_setup(4, 2);
        let shape = TreeShape::exhaustive(primitives(), 2, 1).unwrap();
        for seed in 0..5u64 {
            let plan = plan_case1(
                &b,
                &shape,
                SimplificationHeuristic::GreedyPriorWeight,
                &w,
                &m,
                &o,
                seed,
            )
            .unwrap();
            let oracle =
                baseline_full_evaluation(&b, &shape, &w, &m, &o, seed, DEFAULT_ORACLE_CAP).unwrap();
            assert_eq!(plan.best_sequence_index, oracle.best_sequence_index);
            assert_eq!(plan.loss_bound, 0.0);
            for (iv, exact) in plan.root_intervals.iter().zip(&oracle.root_intervals) {
                assert!(iv.contains(exact.lower, 1e-9));
            }
            assert!(plan.materialized_components <= oracle.materialized_components);
        }
    }

    #[test]
    fn case1_oracle_equivalence_with_observation_branching() {
        // two observation samples per step exercise the empirical means in
        // the Bellman recursion
        let (w, b, m, o) = floors_setup(3, 2);
        let shape = TreeShape::exhaustive(primitives(), 2, 2).unwrap();
        for seed in [1u64, 8] {
            let plan = plan_case1(
                &b,
                &shape,
                SimplificationHeuristic::GreedyPriorWeight,
                &w,
                &m,
                &o,
                seed,
            )
            .unwrap();
            let oracle =
                baseline_full_evaluation(&b, &shape, &w, &m, &o, seed, DEFAULT_ORACLE_CAP).unwrap();
            assert_eq!(plan.best_sequence_index, oracle.best_sequence_index);
            assert_eq!(plan.loss_bound, 0.0);
        }
    }

    #[test]
    fn case1_two_floor_hand_enumeration() {
        // Horizon 1, two floors, one shared landmark in range and the unique
        // landmark out of reach. Both hypotheses see identical geometry, so
        // the posterior stays uniform over two lineages and the objective is
        // root entropy (ln 2) plus leaf entropy (ln 2) for every action.
        let (w, b, m, _) = floors_setup(2, 1);
        let o = ObservationModel::new(0.05, 1.5).unwrap();
        let shape = TreeShape::exhaustive(primitives(), 1, 1).unwrap();
        let plan = plan_case1(
            &b,
            &shape,
            SimplificationHeuristic::GreedyPriorWeight,
            &w,
            &m,
            &o,
            11,
        )
        .unwrap();
        for iv in &plan.root_intervals {
            assert!((iv.upper - 2.0 * 2.0f64.ln()).abs() < 1e-6, "{iv:?}");
        }
        assert_eq!(plan.loss_bound, 0.0);
    }

    #[test]
    fn case2_inactive_budget_reduces_to_case1() {
        let (w, b, m, o) = floors_setup(4, 2);
        let shape = TreeShape::exhaustive(primitives(), 2, 1).unwrap();
        let budget = PlanningBudget {
            max_components_per_node: 10_000,
        };
        let c2 = plan_case2(
            &b,
            &shape,
            SimplificationHeuristic::GreedyPriorWeight,
            &budget,
            &w,
            &m,
            &o,
            7,
        )
        .unwrap();
        let c1 = plan_case1(
            &b,
            &shape,
            SimplificationHeuristic::GreedyPriorWeight,
            &w,
            &m,
            &o,
            7,
        )
        .unwrap();
        assert_eq!(c2.best_sequence_index, c1.best_sequence_index);
        assert_eq!(c2.loss_bound, 0.0);
    }

    #[test]
    fn case2_budget_is_respected_and_loss_sound() {
        let (w, b, m, o) = floors_setup(6, 2);
        let shape = TreeShape::exhaustive(primitives(), 2, 1).unwrap();
        let budget = PlanningBudget {
            max_components_per_node: 3,
        };
        for seed in 0..5u64 {
            let c2 = plan_case2(
                &b,
                &shape,
                SimplificationHeuristic::GreedyPriorWeight,
                &budget,
                &w,
                &m,
                &o,
                seed,
            )
            .unwrap();
            assert!(c2.max_subset_size <= 3, "subset {}", c2.max_subset_size);
            let oracle =
                baseline_full_evaluation(&b, &shape, &w, &m, &o, seed, DEFAULT_ORACLE_CAP).unwrap();
            let exact: Vec<f64> = oracle.root_intervals.iter().map(|iv| iv.lower).collect();
            let regret =
                exact[c2.best_sequence_index] - exact.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(
                regret <= c2.loss_bound + 1e-9,
                "regret {regret} > bound {}",
                c2.loss_bound
            );
            for (iv, &e) in c2.root_intervals.iter().zip(&exact) {
                assert!(
                    iv.contains(e, 1e-9),
                    "{e} outside [{}, {}]",
                    iv.lower,
                    iv.upper
                );
            }
        }
    }

    #[test]
    fn case3_unit_budget_is_lossless_and_flat() {
        let (w, b, m, o) = floors_setup(3, 1);
        let shape = TreeShape::exhaustive(primitives(), 2, 1).unwrap();
        let budget = InferenceBudget::new(1, PruningHeuristic::KeepHighestWeight).unwrap();
        let plan = plan_case3(
            &b,
            &shape,
            SimplificationHeuristic::GreedyPriorWeight,
            &budget,
            &w,
            &m,
            &o,
            13,
        )
        .unwrap();
        assert_eq!(plan.loss_bound, 0.0);
        let root_h = entropy(&b.weights()).unwrap();
        for iv in &plan.root_intervals {
            // single-hypothesis nodes cost zero; only the root entropy remains
            assert!((iv.lower - root_h).abs() < 1e-9);
            assert!((iv.upper - root_h).abs() < 1e-9);
        }
    }

    #[test]
    fn case3_inactive_budget_agrees_with_case1_decision() {
        let (w, b, m, o) = floors_setup(4, 1);
        let shape = TreeShape::exhaustive(primitives(), 2, 1).unwrap();
        let budget = InferenceBudget::new(10_000, PruningHeuristic::KeepHighestWeight).unwrap();
        for seed in [3u64, 17, 99] {
            let c3 = plan_case3(
                &b,
                &shape,
                SimplificationHeuristic::GreedyPriorWeight,
                &budget,
                &w,
                &m,
                &o,
                seed,
            )
            .unwrap();
            let c1 = plan_case1(
                &b,
                &shape,
                SimplificationHeuristic::GreedyPriorWeight,
                &w,
                &m,
                &o,
                seed,
            )
            .unwrap();
            assert_eq!(c3.best_sequence_index, c1.best_sequence_index);
        }
    }

    #[test]
    fn case4_dominates_inference_heuristic() {
        let (w, b, m, o) = floors_setup(4, 1);
        let shape = TreeShape::exhaustive(primitives(), 2, 1).unwrap();
        for budget in 1..=4usize {
            let out = plan_case4(&b, &shape, budget, &w, &m, &o, 5).unwrap();
            assert!(
                out.h_p_star_loss <= out.h_inf_loss + 1e-9,
                "budget {budget}: {} > {}",
                out.h_p_star_loss,
                out.h_inf_loss
            );
            if budget >= 4 {
                assert!(out.h_p_star_loss <= 1e-9);
                assert!(out.h_inf_loss <= 1e-9);
            }
        }
    }

    #[test]
    fn decision_rules_parse() {
        assert_eq!(
            "no-overlap".parse::<DecisionRule>().unwrap(),
            DecisionRule::NoOverlap
        );
        assert!(matches!(
            "time:0.5".parse::<DecisionRule>().unwrap(),
            DecisionRule::TimeBudget { .. }
        ));
        assert!(matches!(
            "level:3".parse::<DecisionRule>().unwrap(),
            DecisionRule::MaxLevel { level: 3 }
        ));
        assert!("bogus".parse::<DecisionRule>().is_err());
        assert_eq!(
            "greedy-prior".parse::<SimplificationHeuristic>().unwrap(),
            SimplificationHeuristic::GreedyPriorWeight
        );
    }

    #[test]
    fn time_budget_rule_terminates_with_sound_loss() {
        let (w, b, m, o) = floors_setup(4, 2);
        let shape = TreeShape::exhaustive(primitives(), 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sk = build_skeleton(&b, &shape, &w, &m, &o, &mut rng);
        let plan = nd2a_plan(
            &sk,
            &b,
            SimplificationHeuristic::GreedyPriorWeight,
            &DecisionRule::TimeBudget { seconds: 0.0 },
            None,
            &w,
            &m,
            &o,
        )
        .unwrap();
        let oracle = baseline_on_skeleton(&sk, &b, &w, &m, &o, DEFAULT_ORACLE_CAP).unwrap();
        let exact: Vec<f64> = oracle.root_intervals.iter().map(|iv| iv.lower).collect();
        let regret =
            exact[plan.best_sequence_index] - exact.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(regret <= plan.loss_bound + 1e-9);
    }

    #[test]
    fn planning_pipeline_works_in_f32() {
        let (w, modes) = build_floors::<f32>(2, 1, 3).unwrap();
        let b = MixtureBelief::uniform_prior(
            &modes,
            Matrix3::from_diagonal(&nalgebra::Vector3::new(1e-4f32, 1e-4, 1e-6)),
        );
        let m = MotionModel::from_stds(0.01f32, 0.002).unwrap();
        let o = ObservationModel::new(0.05f32, 2.0).unwrap();
        let shape = TreeShape::exhaustive(
            vec![
                crate::tree::ActionPrimitive::new("fwd", Action::new(1.0f32, 0.0, 0.0)),
                crate::tree::ActionPrimitive::new("stay", Action::zero()),
            ],
            2,
            1,
        )
        .unwrap();
        let plan = plan_case1(
            &b,
            &shape,
            SimplificationHeuristic::GreedyPriorWeight,
            &w,
            &m,
            &o,
            4,
        )
        .unwrap();
        let oracle = baseline_full_evaluation(&b, &shape, &w, &m, &o, 4, 10_000).unwrap();
        assert_eq!(plan.best_sequence_index, oracle.best_sequence_index);
        assert_eq!(plan.loss_bound, 0.0f32);
    }

    #[test]
    fn subset_enumeration_counts() {
        let allowed = [0u32, 1, 2, 3];
        // nonempty subsets of size <= 2: C(4,1) + C(4,2) = 10
        assert_eq!(enumerate_subsets(&allowed, 2).len(), 10);
        assert_eq!(enumerate_subsets(&allowed, 4).len(), 15);
    }
}
