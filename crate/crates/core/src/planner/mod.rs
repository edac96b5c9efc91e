//! Goal-biased RRT with rewiring over joint space, edge validation against
//! the scene, and spline time parameterization of the result.

mod timing;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::kinematics::{
    arm_capsules, inverse_kinematics_with, ArmModel, IkOptions, JointConfig, KinematicsError,
};
use crate::scene::{ComponentId, SceneWorld};

pub use timing::{limit_ratio, time_parameterize, Knot, TimedTrajectory, TIMING_SAMPLES};

/// Proximity at which a tree node counts as the goal.
pub const GOAL_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub i_max: usize,
    pub goal_bias: f64,
    pub steer_min: f64,
    pub steer_max: f64,
    pub neighbor_radius: f64,
    pub edge_resolution: f64,
    pub rng_seed: u64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            i_max: 10_000,
            goal_bias: 0.2,
            steer_min: 0.05,
            steer_max: 0.5,
            neighbor_radius: 1.0,
            edge_resolution: 0.05,
            rng_seed: 0,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return Err(format!("goal_bias {} outside [0, 1]", self.goal_bias));
        }
        if !(self.steer_min > 0.0 && self.steer_min <= self.steer_max) {
            return Err(format!(
                "need 0 < steer_min <= steer_max (got {}, {})",
                self.steer_min, self.steer_max
            ));
        }
        if !(self.neighbor_radius >= 0.0) {
            return Err("neighbor_radius must be non-negative".into());
        }
        if !(self.edge_resolution > 0.0) {
            return Err("edge_resolution must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanFailure {
    #[error("target pose unreachable: {0}")]
    Unreachable(KinematicsError),
    #[error("start configuration is invalid")]
    InvalidStart,
    #[error("goal configuration is in collision or out of limits")]
    InvalidGoal,
    #[error("no path after {iterations} iterations")]
    Exhausted { iterations: usize },
}

impl PlanFailure {
    pub fn code(&self) -> &'static str {
        match self {
            PlanFailure::Unreachable(_) => "unreachable",
            PlanFailure::InvalidStart => "invalid-start",
            PlanFailure::InvalidGoal => "invalid-goal",
            PlanFailure::Exhausted { .. } => "exhausted",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanNode {
    pub q: JointConfig,
    /// Path length back to the root.
    pub d: f64,
    pub parent: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlanTree {
    pub nodes: Vec<PlanNode>,
    children: Vec<Vec<usize>>,
}

impl PlanTree {
    pub fn with_root(q: JointConfig) -> Self {
        PlanTree {
            nodes: vec![PlanNode { q, d: 0.0, parent: None }],
            children: vec![Vec::new()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    fn push(&mut self, q: JointConfig, parent: usize) -> usize {
        let d = self.nodes[parent].d + q.distance(&self.nodes[parent].q);
        self.nodes.push(PlanNode {
            q,
            d,
            parent: Some(parent),
        });
        self.children.push(Vec::new());
        let idx = self.nodes.len() - 1;
        self.children[parent].push(idx);
        idx
    }

    fn is_ancestor(&self, candidate: usize, mut node: usize) -> bool {
        while let Some(p) = self.nodes[node].parent {
            if p == candidate {
                return true;
            }
            node = p;
        }
        false
    }

    fn reparent(&mut self, node: usize, new_parent: usize) {
        if let Some(old) = self.nodes[node].parent {
            self.children[old].retain(|&c| c != node);
        }
        self.nodes[node].parent = Some(new_parent);
        self.children[new_parent].push(node);
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            let p = self.nodes[n].parent.expect("non-root");
            self.nodes[n].d = self.nodes[p].d + self.nodes[n].q.distance(&self.nodes[p].q);
            stack.extend_from_slice(&self.children[n]);
        }
    }

    /// Root-to-`node` configurations.
    pub fn path_to(&self, mut node: usize) -> Vec<JointConfig> {
        let mut path = vec![self.nodes[node].q];
        while let Some(p) = self.nodes[node].parent {
            path.push(self.nodes[p].q);
            node = p;
        }
        path.reverse();
        path
    }
}

/// Tree mutation reported to a plan observer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeEvent {
    Inserted { node: usize },
    Rewired { node: usize, old_parent: usize, new_parent: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub path: Vec<JointConfig>,
    pub iterations: usize,
    pub tree: PlanTree,
}

/// What a configuration is checked against: the world, the arm (with its
/// mounted tool and anything it carries) and optionally one component to
/// ignore.
#[derive(Clone, Copy)]
pub struct CollisionContext<'a> {
    pub world: &'a SceneWorld,
    pub arm: &'a ArmModel,
    pub ignore: Option<&'a ComponentId>,
}

impl fmt::Debug for CollisionContext<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CollisionContext").field("ignore", &self.ignore).finish()
    }
}

impl<'a> CollisionContext<'a> {
    pub fn new(world: &'a SceneWorld, arm: &'a ArmModel) -> Self {
        CollisionContext { world, arm, ignore: None }
    }

    pub fn ignoring(mut self, id: Option<&'a ComponentId>) -> Self {
        self.ignore = id;
        self
    }

    /// Within limits and collision-free.
    pub fn config_valid(&self, q: &JointConfig) -> bool {
        if !self.arm.within_limits(q) {
            return false;
        }
        let mut caps = arm_capsules(self.arm, q);
        if self.world.attachment().is_some() {
            caps.extend(self.world.carried_capsules(&self.arm.tool_pose(q)));
        }
        !self.world.collides_except(&caps, self.ignore)
    }

    /// Every configuration on the straight segment, spaced at most
    /// `resolution` apart, endpoints included.
    pub fn edge_valid(&self, a: &JointConfig, b: &JointConfig, resolution: f64) -> bool {
        let steps = (a.distance(b) / resolution).ceil().max(1.0) as usize;
        // Endpoints first: the far end fails most often.
        if !self.config_valid(b) || !self.config_valid(a) {
            return false;
        }
        (1..steps).all(|k| self.config_valid(&a.lerp(b, k as f64 / steps as f64)))
    }
}

pub fn edge_valid(world: &SceneWorld, arm: &ArmModel, a: &JointConfig, b: &JointConfig, resolution: f64) -> bool {
    CollisionContext::new(world, arm).edge_valid(a, b, resolution)
}

/// Goal with probability `goal_bias`, otherwise uniform over the joint box.
pub fn sample(params: &PlannerParams, arm: &ArmModel, q_t: &JointConfig, rng: &mut ChaCha8Rng) -> JointConfig {
    if rng.random::<f64>() < params.goal_bias {
        return *q_t;
    }
    JointConfig(std::array::from_fn(|j| rng.random_range(arm.lower_limits[j]..=arm.upper_limits[j])))
}

/// Index of the closest node, lowest index on ties.
pub fn find_nearest(nodes: &[PlanNode], q: &JointConfig) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, n) in nodes.iter().enumerate() {
        let d: f64 = n.q.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Clips a sample to `steer_max` from `q_near`; `None` when it is closer
/// than `steer_min`.
pub fn steer(q_s: &JointConfig, q_near: &JointConfig, params: &PlannerParams) -> Option<JointConfig> {
    let delta = q_s.distance(q_near);
    if delta < params.steer_min {
        None
    } else if delta > params.steer_max {
        Some(q_near.lerp(q_s, params.steer_max / delta))
    } else {
        Some(*q_s)
    }
}

/// Plans from `q_0` to a configuration whose flange pose is `p_t`.
pub fn plan(
    world: &SceneWorld,
    arm: &ArmModel,
    q_0: &JointConfig,
    p_t: &Pose,
    params: &PlannerParams,
) -> Result<Plan, PlanFailure> {
    let ctx = CollisionContext::new(world, arm);
    let q_t = goal_configuration(arm, q_0, p_t, params)?;
    plan_observed(&ctx, q_0, &q_t, params, &mut |_, _| {})
}

/// IK for the goal, seeded at the start configuration.
pub fn goal_configuration(
    arm: &ArmModel,
    q_0: &JointConfig,
    p_t: &Pose,
    params: &PlannerParams,
) -> Result<JointConfig, PlanFailure> {
    let opts = IkOptions {
        rng_seed: params.rng_seed,
        ..IkOptions::default()
    };
    inverse_kinematics_with(arm, p_t, q_0, &opts).map_err(PlanFailure::Unreachable)
}

pub fn plan_to_configuration(
    ctx: &CollisionContext<'_>,
    q_0: &JointConfig,
    q_t: &JointConfig,
    params: &PlannerParams,
) -> Result<Plan, PlanFailure> {
    plan_observed(ctx, q_0, q_t, params, &mut |_, _| {})
}

/// Tree search with a callback after every insertion and rewire.
pub fn plan_observed(
    ctx: &CollisionContext<'_>,
    q_0: &JointConfig,
    q_t: &JointConfig,
    params: &PlannerParams,
    observer: &mut dyn FnMut(&PlanTree, TreeEvent),
) -> Result<Plan, PlanFailure> {
    if !ctx.config_valid(q_0) {
        return Err(PlanFailure::InvalidStart);
    }
    if !ctx.config_valid(q_t) {
        return Err(PlanFailure::InvalidGoal);
    }
    let mut tree = PlanTree::with_root(*q_0);
    if q_0.distance(q_t) <= GOAL_TOLERANCE {
        return Ok(Plan {
            path: vec![*q_0],
            iterations: 0,
            tree,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    for iteration in 1..=params.i_max {
        let q_s = sample(params, ctx.arm, q_t, &mut rng);
        let nearest = find_nearest(&tree.nodes, &q_s);
        let Some(q_new) = steer(&q_s, &tree.nodes[nearest].q, params) else {
            continue;
        };
        if !ctx.edge_valid(&tree.nodes[nearest].q, &q_new, params.edge_resolution) {
            continue;
        }
        let new = tree.push(q_new, nearest);
        observer(&tree, TreeEvent::Inserted { node: new });
        rewire(ctx, &mut tree, new, params, observer);
        if q_new.distance(q_t) <= GOAL_TOLERANCE {
            return Ok(Plan {
                path: tree.path_to(new),
                iterations: iteration,
                tree,
            });
        }
    }
    Err(PlanFailure::Exhausted {
        iterations: params.i_max,
    })
}

fn rewire(
    ctx: &CollisionContext<'_>,
    tree: &mut PlanTree,
    new: usize,
    params: &PlannerParams,
    observer: &mut dyn FnMut(&PlanTree, TreeEvent),
) {
    let q_new = tree.nodes[new].q;
    let r2 = params.neighbor_radius * params.neighbor_radius;
    let neighbors: Vec<usize> = (0..tree.len())
        .filter(|&i| {
            i != new && {
                let q = &tree.nodes[i].q;
                q.iter().zip(q_new.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= r2
            }
        })
        .collect();
    for n in neighbors {
        let through = tree.nodes[new].d + q_new.distance(&tree.nodes[n].q);
        if through >= tree.nodes[n].d || tree.is_ancestor(n, new) {
            continue;
        }
        if !ctx.edge_valid(&q_new, &tree.nodes[n].q, params.edge_resolution) {
            continue;
        }
        let old_parent = tree.nodes[n].parent.expect("root never improves");
        tree.reparent(n, new);
        observer(
            tree,
            TreeEvent::Rewired {
                node: n,
                old_parent,
                new_parent: new,
            },
        );
    }
}

/// Largest deviation between a node's cost and its parent-chain edge sum.
pub fn cost_inconsistency(tree: &PlanTree) -> f64 {
    let mut worst: f64 = 0.0;
    for node in &tree.nodes {
        let mut sum = 0.0;
        let mut cur = node;
        while let Some(p) = cur.parent {
            sum += cur.q.distance(&tree.nodes[p].q);
            cur = &tree.nodes[p];
        }
        worst = worst.max((node.d - sum).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Shape;
    use crate::scene::{benchmark_document, ComponentCategory, Mobility, SceneComponent};

    fn doc() -> (SceneWorld, ArmModel) {
        let d = benchmark_document();
        (d.world, d.arm)
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn full_bias_always_returns_goal() {
        let (_, arm) = doc();
        let params = PlannerParams { goal_bias: 1.0, ..Default::default() };
        let q_t = JointConfig([0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let mut r = rng(0);
        for _ in 0..1000 {
            assert_eq!(sample(&params, &arm, &q_t, &mut r), q_t);
        }
    }

    #[test]
    fn uniform_samples_are_centered() {
        let (_, arm) = doc();
        let params = PlannerParams { goal_bias: 0.0, ..Default::default() };
        let q_t = JointConfig([1.0; 6]);
        let mut r = rng(0);
        let n = 100_000;
        let mut sums = [0.0; 6];
        for _ in 0..n {
            let q = sample(&params, &arm, &q_t, &mut r);
            assert_ne!(q, q_t);
            for j in 0..6 {
                sums[j] += q[j];
            }
        }
        // Uniform on [-2pi, 2pi]: sd of the mean is (4pi / sqrt 12) / sqrt n.
        let sd = 4.0 * std::f64::consts::PI / 12f64.sqrt() / (n as f64).sqrt();
        for s in sums {
            assert!((s / n as f64).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn goal_fraction_matches_bias() {
        let (_, arm) = doc();
        let params = PlannerParams::default();
        let q_t = JointConfig([0.3; 6]);
        let mut r = rng(2);
        let hits = (0..100_000).filter(|_| sample(&params, &arm, &q_t, &mut r) == q_t).count();
        let frac = hits as f64 / 100_000.0;
        assert!((0.19..=0.21).contains(&frac), "{frac}");
    }

    fn node(q: JointConfig) -> PlanNode {
        PlanNode { q, d: 0.0, parent: None }
    }

    #[test]
    fn nearest_examples_and_scan_oracle() {
        let q = JointConfig([0.5; 6]);
        assert_eq!(find_nearest(&[node(q)], &JointConfig::ZERO), 0);
        let mut r = rng(3);
        let nodes: Vec<PlanNode> = (0..100)
            .map(|_| node(JointConfig(std::array::from_fn(|_| r.random_range(-3.0..3.0)))))
            .collect();
        assert_eq!(find_nearest(&nodes, &nodes[42].q), 42);
        for _ in 0..100 {
            let q = JointConfig(std::array::from_fn(|_| r.random_range(-3.0..3.0)));
            let oracle = nodes
                .iter()
                .enumerate()
                .map(|(i, n)| (n.q.distance(&q), i))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .unwrap()
                .1;
            assert_eq!(find_nearest(&nodes, &q), oracle);
        }
        // Ties go to the lowest index.
        let dup = vec![node(q), node(q)];
        assert_eq!(find_nearest(&dup, &JointConfig::ZERO), 0);
    }

    #[test]
    fn steer_bands() {
        let p = PlannerParams::default();
        let a = JointConfig([0.1, -0.2, 0.3, 0.0, 0.5, -0.6]);
        assert_eq!(steer(&a, &a, &p), None);

        let dir = [0.3, -0.1, 0.2, 0.4, -0.5, 0.1];
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let far = JointConfig(std::array::from_fn(|j| a[j] + dir[j] / norm * 2.0 * p.steer_max));
        let s = steer(&far, &a, &p).unwrap();
        assert!((s.distance(&a) - p.steer_max).abs() < 1e-12);
        for j in 0..6 {
            assert!(((s[j] - a[j]) / p.steer_max - dir[j] / norm).abs() < 1e-12);
        }

        let mid = JointConfig(std::array::from_fn(|j| a[j] + dir[j] / norm * 0.3));
        assert_eq!(steer(&mid, &a, &p), Some(mid));
    }

    fn wall_world() -> (SceneWorld, ArmModel) {
        let (mut w, arm) = doc();
        w.components.push(SceneComponent {
            id: "wall".into(),
            category: ComponentCategory::PackBase,
            pose: Pose::translation(-0.2, 0.65, 0.5),
            shape: Shape::cuboid(0.2, 0.2, 0.3),
            mobility: Mobility::Static,
            locks: vec![],
        });
        (w, arm)
    }

    /// Dense-sampling oracle, independent of the edge stepping logic.
    fn oracle_edge(ctx: &CollisionContext<'_>, a: &JointConfig, b: &JointConfig, n: usize) -> bool {
        (0..=n).all(|k| ctx.config_valid(&a.lerp(b, k as f64 / n as f64)))
    }

    #[test]
    fn edge_validity_examples() {
        let (w, arm) = wall_world();
        let ctx = CollisionContext::new(&w, &arm);
        let home = arm.home;
        assert!(ctx.edge_valid(&home, &home, 0.05));

        let mut swing = home;
        swing[0] = 1.2;
        let free = ctx.edge_valid(&home, &swing, 0.05);
        let steps = (home.distance(&swing) / 0.005).ceil() as usize;
        assert_eq!(free, oracle_edge(&ctx, &home, &swing, steps));

        // Reaching down through the module stack is blocked.
        let target = arm.flange_pose(&home);
        let mut down = target;
        down.translation.vector.z = 0.1;
        let q_down = inverse_kinematics_with(&arm, &down, &home, &IkOptions::default()).unwrap();
        let blocked = ctx.edge_valid(&home, &q_down, 0.05);
        assert!(!blocked);
        let steps = (home.distance(&q_down) / 0.005).ceil() as usize;
        assert!(!oracle_edge(&ctx, &home, &q_down, steps));
    }

    #[test]
    fn plan_to_current_pose_is_trivial() {
        let (w, arm) = doc();
        let p = plan(&w, &arm, &arm.home, &arm.flange_pose(&arm.home), &PlannerParams::default()).unwrap();
        assert_eq!(p.path, vec![arm.home]);
    }

    #[test]
    fn goal_inside_module_is_invalid() {
        let (w, arm) = doc();
        let m = w.component(&"module_2".into()).unwrap().center();
        let mut target = arm.flange_pose(&arm.home);
        target.translation.vector = m.coords;
        assert_eq!(
            plan(&w, &arm, &arm.home, &target, &PlannerParams::default()).unwrap_err(),
            PlanFailure::InvalidGoal
        );
    }

    #[test]
    fn far_goal_is_unreachable() {
        let (w, arm) = doc();
        let target = Pose::translation(5.0, 0.0, 0.5);
        assert!(matches!(
            plan(&w, &arm, &arm.home, &target, &PlannerParams::default()),
            Err(PlanFailure::Unreachable(_))
        ));
    }

    #[test]
    fn plan_around_wall_is_consistent_and_deterministic() {
        let (w, arm) = wall_world();
        let ctx = CollisionContext::new(&w, &arm);
        let mut q_t = arm.home;
        q_t[0] = 1.6;
        q_t[1] = -1.2;
        assert!(ctx.config_valid(&q_t));
        assert!(!ctx.edge_valid(&arm.home, &q_t, 0.05), "wall must block the direct move");
        let params = PlannerParams { rng_seed: 4, ..Default::default() };
        let mut worst: f64 = 0.0;
        let mut costs_before: Vec<f64> = Vec::new();
        let mut observer = |tree: &PlanTree, ev: TreeEvent| {
            if let TreeEvent::Rewired { node, .. } = ev {
                assert!(tree.nodes[node].d <= costs_before[node] + 1e-12);
            }
            worst = worst.max(cost_inconsistency(tree));
            costs_before = tree.nodes.iter().map(|n| n.d).collect();
        };
        let p = plan_observed(&ctx, &arm.home, &q_t, &params, &mut observer).unwrap();
        assert!(worst < 1e-9);
        assert_eq!(p.path[0], arm.home);
        assert!(p.path.last().unwrap().distance(&q_t) <= GOAL_TOLERANCE);
        for pair in p.path.windows(2) {
            assert!(ctx.edge_valid(&pair[0], &pair[1], 0.005));
        }
        let again = plan_to_configuration(&ctx, &arm.home, &q_t, &params).unwrap();
        assert_eq!(again.path, p.path);
        assert_eq!(again.iterations, p.iterations);
    }
}
