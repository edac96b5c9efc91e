//! The stage-gated disassembly loop: perceive, choose a target, plan,
//! approach, manipulate, drop, log.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, TAU};
use std::io::Write;

use nalgebra::{Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::kinematics::{inverse_kinematics_with, ArmModel, IkOptions, JointConfig, KinematicsError, LinkCapsule, JOINTS};
use crate::perception::{pixel_to_world, stage_and_target, Detection, Detector, PerceptionError, RayCastDepth, StageFlag};
use crate::planner::{
    goal_configuration, plan_to_configuration, time_parameterize, CollisionContext, PlanFailure, PlannerParams,
    TimedTrajectory,
};
use crate::scene::{ComponentCategory, ComponentId, DetachOutcome, SceneError, SceneWorld};

pub const GRASP_COST_S: f64 = 0.5;
pub const TWIST_COST_S: f64 = 2.0;
pub const VACUUM_COST_S: f64 = 0.5;
pub const TOOL_CHANGE_COST_S: f64 = 5.0;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("{segment} move: {source}")]
    Plan {
        segment: &'static str,
        #[source]
        source: PlanFailure,
    },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error("operation needs the {expected:?} gripper but {found:?} is mounted")]
    WrongGripper { expected: GripperKind, found: GripperKind },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("cannot change tools while holding `{0}`")]
    Busy(ComponentId),
    #[error("straight-line {0} is blocked")]
    Blocked(&'static str),
}

impl ExecError {
    /// Short machine-readable failure class.
    pub fn reason_code(&self) -> &'static str {
        match self {
            ExecError::Plan { .. } => "planning-failure",
            ExecError::Scene(SceneError::PrecedenceViolation { .. }) => "precedence",
            ExecError::Scene(SceneError::TooFar { .. }) => "grasp-miss",
            ExecError::Scene(_) => "scene-error",
            ExecError::Kinematics(_) => "kinematics",
            ExecError::Perception(_) => "perception",
            ExecError::WrongGripper { .. } | ExecError::Precondition(_) | ExecError::Busy(_) => "gripper",
            ExecError::Blocked(_) => "blocked",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GripperKind {
    Parallel,
    Vacuum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GripperStatus {
    Open,
    Closed,
    VacuumOn,
    VacuumOff,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GripperState {
    pub kind: GripperKind,
    pub status: GripperStatus,
    /// Flange to tool point.
    pub tool_offset: Pose,
}

impl GripperState {
    /// Two-finger gripper, 16 cm from flange to fingertip center.
    pub fn parallel() -> Self {
        GripperState {
            kind: GripperKind::Parallel,
            status: GripperStatus::Open,
            tool_offset: Pose::translation(0.0, 0.0, 0.16),
        }
    }

    /// Suction cup, 12 cm from flange to cup face.
    pub fn vacuum() -> Self {
        GripperState {
            kind: GripperKind::Vacuum,
            status: GripperStatus::VacuumOff,
            tool_offset: Pose::translation(0.0, 0.0, 0.12),
        }
    }

    pub fn of_kind(kind: GripperKind) -> Self {
        match kind {
            GripperKind::Parallel => Self::parallel(),
            GripperKind::Vacuum => Self::vacuum(),
        }
    }

    /// Collision capsule in the flange frame; its round end stops exactly at
    /// the tool point.
    pub fn capsules(&self) -> Vec<LinkCapsule> {
        let radius = match self.kind {
            GripperKind::Parallel => 0.04,
            GripperKind::Vacuum => 0.03,
        };
        let reach = self.tool_offset.translation.vector.z;
        vec![LinkCapsule {
            frame: JOINTS,
            start: [0.0, 0.0, 0.0],
            end: [0.0, 0.0, reach - radius],
            radius,
        }]
    }

    pub fn mount(&self, arm: &mut ArmModel) {
        arm.mount_tool(self.tool_offset, self.capsules());
    }
}

/// Replaces the mounted gripper. Returns the new state and its time cost;
/// swapping to the same kind is free.
pub fn switch_gripper(state: &GripperState, kind: GripperKind, world: &SceneWorld) -> Result<(GripperState, f64), ExecError> {
    if let Some(att) = world.attachment() {
        return Err(ExecError::Busy(att.id.clone()));
    }
    if state.kind == kind {
        return Ok((*state, 0.0));
    }
    Ok((GripperState::of_kind(kind), TOOL_CHANGE_COST_S))
}

/// Closes the parallel gripper on a movable component at the tool point.
pub fn grasp(world: &mut SceneWorld, gripper: &mut GripperState, id: &ComponentId, tool_pose: &Pose) -> Result<(), ExecError> {
    if gripper.kind != GripperKind::Parallel {
        return Err(ExecError::WrongGripper {
            expected: GripperKind::Parallel,
            found: gripper.kind,
        });
    }
    world.attach(id, tool_pose)?;
    gripper.status = GripperStatus::Closed;
    Ok(())
}

/// Opens the parallel gripper, releasing whatever it holds.
pub fn release(world: &mut SceneWorld, gripper: &mut GripperState, id: &ComponentId) -> Result<DetachOutcome, ExecError> {
    let out = world.detach(id)?;
    gripper.status = GripperStatus::Open;
    Ok(out)
}

/// Switches suction. On: attaches the module under the cup. Off: releases
/// it and reports where it landed.
pub fn vacuum_set(
    world: &mut SceneWorld,
    gripper: &mut GripperState,
    on: bool,
    id: &ComponentId,
    tool_pose: &Pose,
) -> Result<Option<DetachOutcome>, ExecError> {
    if gripper.kind != GripperKind::Vacuum {
        return Err(ExecError::WrongGripper {
            expected: GripperKind::Vacuum,
            found: gripper.kind,
        });
    }
    if on {
        world.attach(id, tool_pose)?;
        gripper.status = GripperStatus::VacuumOn;
        Ok(None)
    } else {
        let out = world.detach(id)?;
        gripper.status = GripperStatus::VacuumOff;
        Ok(Some(out))
    }
}

/// Turns the wrist through a full negative revolution in four quarter-turn
/// steps, carrying the held bolt.
pub fn unscrew(
    world: &mut SceneWorld,
    arm: &ArmModel,
    gripper: &GripperState,
    q: &JointConfig,
) -> Result<TimedTrajectory, ExecError> {
    if gripper.kind != GripperKind::Parallel || gripper.status != GripperStatus::Closed {
        return Err(ExecError::Precondition(format!(
            "twist needs a closed parallel gripper, have {:?} {:?}",
            gripper.kind, gripper.status
        )));
    }
    if world.attachment().is_none() {
        return Err(ExecError::Precondition("twist with nothing grasped".into()));
    }
    let mut path = vec![*q];
    for k in 1..=4 {
        let mut next = *q;
        next[JOINTS - 1] = q[JOINTS - 1] - FRAC_PI_2 * k as f64;
        path.push(next);
    }
    arm.check_limits(path.last().expect("nonempty"))?;
    let traj = time_parameterize(&path, arm);
    world.carry(&arm.tool_pose(path.last().expect("nonempty")));
    Ok(traj)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutiveConfig {
    pub max_replans: usize,
    pub master_seed: u64,
    /// Tool-point clearance above the target before the straight descent.
    pub hover_height: f64,
    pub lift_height: f64,
    /// Cartesian step of straight-line moves.
    pub line_step: f64,
}

impl Default for ExecutiveConfig {
    fn default() -> Self {
        ExecutiveConfig {
            max_replans: 5,
            master_seed: 0,
            hover_height: 0.02,
            lift_height: 0.20,
            line_step: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub target: ComponentId,
    pub category: ComponentCategory,
    pub stage: StageFlag,
    pub start_time_s: f64,
    pub execution_time_s: f64,
    pub detection_score: f64,
    pub success: bool,
    pub failure_reason: Option<String>,
    /// Planning attempts beyond the first, over all moves of the task.
    pub replans: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskTrajectory {
    pub target: ComponentId,
    pub segment: String,
    /// Geometric waypoints the trajectory was timed from.
    pub path: Vec<JointConfig>,
    pub trajectory: TimedTrajectory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub records: Vec<TaskRecord>,
    pub trajectories: Vec<TaskTrajectory>,
    pub stage_history: Vec<StageFlag>,
    pub tool_changes: usize,
    pub total_time_s: f64,
    pub initial_disassemblable: usize,
    /// Disassemblable components that were never attempted.
    pub untouched: Vec<ComponentId>,
    /// Every twist: gripper kind and status at the time.
    pub twists: Vec<(GripperKind, GripperStatus)>,
    /// Gripper kind at every vacuum attach.
    pub vacuum_attaches: Vec<GripperKind>,
}

impl RunReport {
    pub fn all_succeeded(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.success)
    }

    pub fn successes(&self) -> usize {
        self.records.iter().filter(|r| r.success).count()
    }

    pub fn failures(&self) -> usize {
        self.records.len() - self.successes()
    }
}

/// Yaw about world z that turns the home tool heading toward `target` as
/// seen from the arm base, applied to the downward home orientation.
fn approach_orientation(arm: &ArmModel, target: &Point3<f64>) -> UnitQuaternion<f64> {
    let base = arm.base_pose.translation.vector;
    let home = arm.tool_pose(&arm.home);
    let azimuth = |p: &Vector3<f64>| (p.y - base.y).atan2(p.x - base.x);
    let yaw = azimuth(&target.coords) - azimuth(&home.translation.vector);
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw) * home.rotation
}

enum MoveGoal {
    Joint(JointConfig),
    /// Tool pose; `wrist_offset` keeps the last joint non-negative so a full
    /// negative turn stays within limits.
    Tool { pose: Pose, wrist_offset: bool },
}

/// Goal raise per retry.
const RETRY_RAISE: f64 = 0.01;

fn tool_pose_at(point: &Point3<f64>, rotation: UnitQuaternion<f64>) -> Pose {
    Pose::from_parts(Translation3::from(point.coords), rotation)
}

struct Run<'a> {
    world: &'a mut SceneWorld,
    arm: ArmModel,
    gripper: GripperState,
    params: &'a PlannerParams,
    config: &'a ExecutiveConfig,
    q: JointConfig,
    clock: f64,
    /// Simulated time spent on the current task.
    elapsed: f64,
    plan_calls: u64,
    report: RunReport,
}

impl Run<'_> {
    fn seed(&mut self, attempt: usize) -> u64 {
        self.plan_calls += 1;
        let mix = self
            .config
            .master_seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.params.rng_seed.rotate_left(17));
        mix ^ (self.plan_calls << 20) ^ attempt as u64
    }

    fn follow(&mut self, target: &ComponentId, segment: &str, path: &[JointConfig]) -> f64 {
        let traj = time_parameterize(path, &self.arm);
        for q in path {
            self.world.carry(&self.arm.tool_pose(q));
        }
        self.q = *path.last().expect("nonempty path");
        let dt = traj.duration();
        self.report.trajectories.push(TaskTrajectory {
            target: target.clone(),
            segment: segment.to_string(),
            path: path.to_vec(),
            trajectory: traj,
        });
        dt
    }

    fn goal_for(&self, goal: &MoveGoal, attempt: usize, params: &PlannerParams) -> Result<JointConfig, PlanFailure> {
        match goal {
            MoveGoal::Joint(q) => Ok(*q),
            MoveGoal::Tool { pose, wrist_offset } => {
                let mut tool = *pose;
                tool.translation.vector.z += RETRY_RAISE * attempt as f64;
                let mut q = goal_configuration(&self.arm, &self.q, &self.arm.flange_for_tool(&tool), params)?;
                if *wrist_offset && q[JOINTS - 1] < 0.0 {
                    q[JOINTS - 1] += TAU;
                }
                Ok(q)
            }
        }
    }

    fn plan_leg(&self, from: &JointConfig, to: &JointConfig, params: &PlannerParams) -> Result<Vec<JointConfig>, PlanFailure> {
        let ctx = CollisionContext::new(self.world, &self.arm);
        Ok(plan_to_configuration(&ctx, from, to, params)?.path)
    }

    /// Sampling-based move with retries. Attempt `k` raises a Cartesian goal
    /// by `k` cm, and odd attempts detour through the home configuration.
    fn plan_move(
        &mut self,
        target: &ComponentId,
        segment: &'static str,
        goal: MoveGoal,
        replans: &mut usize,
    ) -> Result<f64, ExecError> {
        let mut last = None;
        for attempt in 0..=self.config.max_replans {
            if attempt > 0 {
                *replans += 1;
            }
            let params = PlannerParams {
                rng_seed: self.seed(attempt),
                ..self.params.clone()
            };
            let q_goal = match self.goal_for(&goal, attempt, &params) {
                Ok(q) => q,
                Err(e) => {
                    last = Some(e);
                    continue;
                }
            };
            let home = self.arm.home;
            let detour = attempt % 2 == 1 && self.q.distance(&home) > 0.0 && q_goal.distance(&home) > 0.0;
            let path = if detour {
                self.plan_leg(&self.q, &home, &params).and_then(|mut first| {
                    let second = self.plan_leg(&home, &q_goal, &params)?;
                    first.extend_from_slice(&second[1..]);
                    Ok(first)
                })
            } else {
                self.plan_leg(&self.q, &q_goal, &params)
            };
            match path {
                Ok(path) => return Ok(self.follow(target, segment, &path)),
                Err(e) => last = Some(e),
            }
        }
        Err(ExecError::Plan {
            segment,
            source: last.expect("at least one attempt"),
        })
    }

    /// Straight tool-point line to `to`, orientation held, through IK
    /// waypoints.
    fn line_move(
        &mut self,
        target: &ComponentId,
        segment: &'static str,
        to: &Pose,
        ignore: Option<&ComponentId>,
    ) -> Result<f64, ExecError> {
        let from = self.arm.tool_pose(&self.q);
        let length = (to.translation.vector - from.translation.vector).norm();
        let steps = (length / self.config.line_step).ceil().max(1.0) as usize;
        let opts = IkOptions {
            restarts: 0,
            ..IkOptions::default()
        };
        let ctx = CollisionContext::new(self.world, &self.arm).ignoring(ignore);
        let mut path = vec![self.q];
        for k in 1..=steps {
            let t = k as f64 / steps as f64;
            let p = from.translation.vector.lerp(&to.translation.vector, t);
            let tool = Pose::from_parts(Translation3::from(p), to.rotation);
            let prev = *path.last().expect("nonempty");
            let q = inverse_kinematics_with(&self.arm, &self.arm.flange_for_tool(&tool), &prev, &opts)?;
            if !ctx.edge_valid(&prev, &q, self.params.edge_resolution) {
                return Err(ExecError::Blocked(segment));
            }
            path.push(q);
        }
        Ok(self.follow(target, segment, &path))
    }

    fn switch_to(&mut self, kind: GripperKind, target: &ComponentId, replans: &mut usize) -> Result<f64, ExecError> {
        if self.gripper.kind == kind {
            return Ok(0.0);
        }
        let home = self.arm.home;
        let mut dt = 0.0;
        if self.q.distance(&home) > 0.0 {
            dt += self.plan_move(target, "home", MoveGoal::Joint(home), replans)?;
        }
        let (state, cost) = switch_gripper(&self.gripper, kind, self.world)?;
        self.gripper = state;
        self.gripper.mount(&mut self.arm);
        self.report.tool_changes += 1;
        Ok(dt + cost)
    }

    fn task(&mut self, stage: StageFlag, det: &Detection, id: &ComponentId, replans: &mut usize) -> Result<bool, ExecError> {
        let kind = if stage == StageFlag::Modules {
            GripperKind::Vacuum
        } else {
            GripperKind::Parallel
        };
        self.world.make_movable(id)?;
        self.elapsed += self.switch_to(kind, id, replans)?;

        let depth = RayCastDepth {
            world: self.world,
            camera: &self.world.camera,
        };
        let point = pixel_to_world(&self.world.camera, det.center[0], det.center[1], &depth)?;
        let rotation = approach_orientation(&self.arm, &point);
        let grasp_pose = tool_pose_at(&point, rotation);
        let hover = tool_pose_at(&(point + Vector3::z() * self.config.hover_height), rotation);

        let is_bolt = stage == StageFlag::Bolts;
        self.elapsed += self.plan_move(
            id,
            "approach",
            MoveGoal::Tool {
                pose: hover,
                wrist_offset: is_bolt,
            },
            replans,
        )?;
        self.elapsed += self.line_move(id, "descend", &grasp_pose, Some(id))?;

        let tool = self.arm.tool_pose(&self.q);
        match stage {
            StageFlag::Modules => {
                vacuum_set(self.world, &mut self.gripper, true, id, &tool)?;
                self.report.vacuum_attaches.push(self.gripper.kind);
                self.elapsed += VACUUM_COST_S;
            }
            _ => {
                grasp(self.world, &mut self.gripper, id, &tool)?;
                self.elapsed += GRASP_COST_S;
            }
        }
        if is_bolt {
            self.report.twists.push((self.gripper.kind, self.gripper.status));
            let twist = unscrew(self.world, &self.arm, &self.gripper, &self.q)?;
            self.q = *twist.end().expect("nonempty");
            self.elapsed += twist.duration() + TWIST_COST_S;
            self.report.trajectories.push(TaskTrajectory {
                target: id.clone(),
                segment: "twist".into(),
                path: twist.knots.iter().map(|k| k.q).collect(),
                trajectory: twist,
            });
        }

        let mut lifted = self.arm.tool_pose(&self.q);
        lifted.translation.vector.z += self.config.lift_height;
        self.elapsed += self.line_move(id, "lift", &lifted, None)?;

        let drop = self.drop_pose(id)?;
        self.elapsed += self.plan_move(
            id,
            "transfer",
            MoveGoal::Tool {
                pose: drop,
                wrist_offset: false,
            },
            replans,
        )?;
        let out = self.release(stage, id)?;
        self.elapsed += if stage == StageFlag::Modules {
            VACUUM_COST_S
        } else {
            GRASP_COST_S
        };
        Ok(out.in_drop_zone)
    }

    fn release(&mut self, stage: StageFlag, id: &ComponentId) -> Result<DetachOutcome, ExecError> {
        if stage == StageFlag::Modules {
            let tool = self.arm.tool_pose(&self.q);
            Ok(vacuum_set(self.world, &mut self.gripper, false, id, &tool)?.expect("off reports outcome"))
        } else {
            release(self.world, &mut self.gripper, id)
        }
    }

    /// Tool pose that puts the held component's center on its drop zone
    /// center.
    fn drop_pose(&self, id: &ComponentId) -> Result<Pose, ExecError> {
        let comp = self.world.component(id)?;
        let zone = self
            .world
            .drop_zones
            .get(&comp.category)
            .ok_or(SceneError::MissingDropZone(comp.category))?;
        let relative = self
            .world
            .attachment()
            .ok_or_else(|| ExecError::Precondition("transfer with nothing attached".into()))?
            .relative;
        let center = zone.center();
        let rotation = approach_orientation(&self.arm, &center);
        let tool = center - rotation * relative.translation.vector;
        Ok(tool_pose_at(&tool, rotation))
    }
}

/// Runs detection-driven disassembly until nothing is left to remove or
/// every remaining detection has failed.
pub fn run_disassembly(
    world: &mut SceneWorld,
    arm: &ArmModel,
    params: &PlannerParams,
    detector: &mut dyn Detector,
    config: &ExecutiveConfig,
) -> RunReport {
    let initial: Vec<ComponentId> = world.remaining_disassemblable().map(|c| c.id.clone()).collect();
    let gripper = GripperState::parallel();
    let mut arm = arm.clone();
    gripper.mount(&mut arm);
    let q = arm.home;
    let mut run = Run {
        world,
        arm,
        gripper,
        params,
        config,
        q,
        clock: 0.0,
        elapsed: 0.0,
        plan_calls: 0,
        report: RunReport {
            records: Vec::new(),
            trajectories: Vec::new(),
            stage_history: Vec::new(),
            tool_changes: 0,
            total_time_s: 0.0,
            initial_disassemblable: initial.len(),
            untouched: Vec::new(),
            twists: Vec::new(),
            vacuum_attaches: Vec::new(),
        },
    };
    let mut attempted: BTreeSet<ComponentId> = BTreeSet::new();
    let max_cycles = 2 * initial.len() + 2;
    for _ in 0..max_cycles {
        let camera = run.world.camera;
        let detections: Vec<Detection> = detector
            .detect(run.world, &camera)
            .into_iter()
            .filter(|d| !d.component_id.as_ref().is_some_and(|id| attempted.contains(id)))
            .collect();
        let (stage, target) = stage_and_target(&detections);
        run.report.stage_history.push(stage);
        let Some(det) = target else { break };
        let id = match det.component_id.clone() {
            Some(id) => id,
            None => match nearest_component(run.world, &det) {
                Some(id) => id,
                None => break,
            },
        };
        attempted.insert(id.clone());
        let start = run.clock;
        let mut replans = 0;
        run.elapsed = 0.0;
        let (success, reason) = match run.task(stage, &det, &id, &mut replans) {
            Ok(ok) => (ok, (!ok).then(|| "outside-drop-zone".to_string())),
            Err(e) => {
                // Let go where we are so the gripper is free for the next task.
                if let Some(held) = run.world.attachment().map(|a| a.id.clone()) {
                    let _ = run.release(stage, &held);
                }
                (false, Some(format!("{}: {e}", e.reason_code())))
            }
        };
        let dt = run.elapsed;
        run.clock += dt;
        let category = run.world.component(&id).map(|c| c.category).unwrap_or(det.category);
        run.report.records.push(TaskRecord {
            target: id,
            category,
            stage,
            start_time_s: start,
            execution_time_s: dt,
            detection_score: det.score,
            success,
            failure_reason: reason,
            replans,
        });
    }
    run.report.total_time_s = run.clock;
    run.report.untouched = run
        .world
        .remaining_disassemblable()
        .filter(|c| !attempted.contains(&c.id))
        .map(|c| c.id.clone())
        .collect();
    run.report
}

/// Component whose grasp point projects closest to a detection center.
fn nearest_component(world: &SceneWorld, det: &Detection) -> Option<ComponentId> {
    world
        .remaining_disassemblable()
        .filter(|c| c.category == det.category)
        .filter_map(|c| {
            let (u, v, _) = world.camera.project(&c.grasp_point())?;
            Some((((u - det.center[0]).powi(2) + (v - det.center[1]).powi(2)), c.id.clone()))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, id)| id)
}

/// `target,category,execution_time_s,detection_score_pct,success`
pub fn write_metrics_csv<W: Write>(out: W, records: &[TaskRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["target", "category", "execution_time_s", "detection_score_pct", "success"])?;
    for r in records {
        w.write_record([
            r.target.to_string(),
            r.category.name().to_string(),
            format!("{:.3}", r.execution_time_s),
            format!("{:.1}", r.detection_score * 100.0),
            if r.success { "Yes" } else { "No" }.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub tasks: usize,
    pub successes: usize,
    pub failures: usize,
    pub untouched: usize,
    pub initial_disassemblable: usize,
    pub tool_changes: usize,
    pub total_time_s: f64,
    pub stage_history: Vec<StageFlag>,
    pub records: Vec<TaskRecord>,
}

impl RunSummary {
    pub fn from_report(report: &RunReport) -> Self {
        RunSummary {
            tasks: report.records.len(),
            successes: report.successes(),
            failures: report.failures(),
            untouched: report.untouched.len(),
            initial_disassemblable: report.initial_disassemblable,
            tool_changes: report.tool_changes,
            total_time_s: report.total_time_s,
            stage_history: report.stage_history.clone(),
            records: report.records.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{OracleDetector, ScoreModel};
    use crate::scene::{benchmark_document, Mobility};

    fn setup() -> (SceneWorld, ArmModel) {
        let d = benchmark_document();
        (d.world, d.arm)
    }

    fn at(p: Point3<f64>) -> Pose {
        Pose::translation(p.x, p.y, p.z)
    }

    #[test]
    fn home_pose_points_tool_down_above_pack() {
        let (w, mut arm) = setup();
        GripperState::parallel().mount(&mut arm);
        let tool = arm.tool_pose(&arm.home);
        assert!((tool.rotation * Vector3::z() + Vector3::z()).norm() < 1e-12);
        assert!(CollisionContext::new(&w, &arm).config_valid(&arm.home));
    }

    #[test]
    fn switch_rules() {
        let (mut w, _) = setup();
        let p = GripperState::parallel();
        let (same, cost) = switch_gripper(&p, GripperKind::Parallel, &w).unwrap();
        assert_eq!((same, cost), (p, 0.0));
        let (v, cost) = switch_gripper(&p, GripperKind::Vacuum, &w).unwrap();
        assert_eq!(v.kind, GripperKind::Vacuum);
        assert_eq!(cost, TOOL_CHANGE_COST_S);
        assert_ne!(v.tool_offset, p.tool_offset);

        let bolt: ComponentId = "bolt_1".into();
        w.make_movable(&bolt).unwrap();
        let g = w.component(&bolt).unwrap().grasp_point();
        w.attach(&bolt, &at(g)).unwrap();
        assert!(matches!(switch_gripper(&p, GripperKind::Vacuum, &w), Err(ExecError::Busy(_))));
    }

    #[test]
    fn vacuum_rules() {
        let (mut w, _) = setup();
        for cable in ["cable_1", "cable_2"] {
            w.components.iter_mut().find(|c| c.id.as_str() == cable).unwrap().mobility = Mobility::Removed;
        }
        let module: ComponentId = "module_1".into();
        w.make_movable(&module).unwrap();
        let top = w.component(&module).unwrap().grasp_point();

        let mut parallel = GripperState::parallel();
        assert!(matches!(
            vacuum_set(&mut w, &mut parallel, true, &module, &at(top)),
            Err(ExecError::WrongGripper { .. })
        ));

        let mut vac = GripperState::vacuum();
        vacuum_set(&mut w, &mut vac, true, &module, &at(top)).unwrap();
        assert_eq!(w.component(&module).unwrap().mobility, Mobility::AttachedToGripper);
        assert_eq!(vac.status, GripperStatus::VacuumOn);

        let zone = w.drop_zones[&ComponentCategory::Module];
        let offset = top - w.component(&module).unwrap().center();
        w.carry(&at(zone.center() + offset));
        let out = vacuum_set(&mut w, &mut vac, false, &module, &at(zone.center() + offset)).unwrap().unwrap();
        assert!(out.in_drop_zone);
        assert_eq!(w.component(&module).unwrap().mobility, Mobility::Removed);
    }

    #[test]
    fn twist_rotates_wrist_one_turn_in_quarter_steps() {
        let (mut w, mut arm) = setup();
        let mut g = GripperState::parallel();
        g.mount(&mut arm);
        let bolt: ComponentId = "bolt_1".into();
        w.make_movable(&bolt).unwrap();

        let mut q = arm.home;
        q[5] = 0.0;
        // Open gripper: refused.
        assert!(matches!(unscrew(&mut w, &arm, &g, &q), Err(ExecError::Precondition(_))));

        let tool = arm.tool_pose(&q);
        let grasp_point = w.component(&bolt).unwrap().grasp_point();
        w.attach(&bolt, &Pose::from_parts(Translation3::from(grasp_point.coords), tool.rotation)).unwrap();
        g.status = GripperStatus::Closed;
        let traj = unscrew(&mut w, &arm, &g, &q).unwrap();
        assert_eq!(traj.knots.len(), 5);
        for (k, knot) in traj.knots.iter().enumerate() {
            assert!((knot.q[5] - (-FRAC_PI_2 * k as f64)).abs() < 1e-15);
            assert_eq!(&knot.q.0[..5], &q.0[..5]);
        }
        assert!((traj.end().unwrap()[5] + TAU).abs() < 1e-12);

        // Starting below zero would pass the lower limit.
        let mut low = q;
        low[5] = -0.5;
        assert!(matches!(unscrew(&mut w, &arm, &g, &low), Err(ExecError::Kinematics(_))));
    }

    #[test]
    fn bolts_unlock_cables() {
        let (mut w, _) = setup();
        let bolts: Vec<ComponentId> = w
            .components
            .iter()
            .filter(|c| c.category == ComponentCategory::Bolt)
            .map(|c| c.id.clone())
            .collect();
        for b in &bolts {
            w.make_movable(b).unwrap();
            let g = w.component(b).unwrap().grasp_point();
            w.attach(b, &at(g)).unwrap();
            let zone = w.drop_zones[&ComponentCategory::Bolt].center();
            w.carry(&at(zone + (g - w.component(b).unwrap().center())));
            assert!(w.detach(b).unwrap().in_drop_zone);
        }
        w.make_movable(&"cable_1".into()).unwrap();
        w.make_movable(&"cable_2".into()).unwrap();
    }

    #[test]
    fn metrics_csv_layout() {
        let rec = TaskRecord {
            target: "bolt_1".into(),
            category: ComponentCategory::Bolt,
            stage: StageFlag::Bolts,
            start_time_s: 0.0,
            execution_time_s: 12.3456,
            detection_score: 0.5371,
            success: true,
            failure_reason: None,
            replans: 0,
        };
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[rec]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "target,category,execution_time_s,detection_score_pct,success\nbolt_1,Bolt,12.346,53.7,Yes\n"
        );
    }

    #[test]
    fn single_unlocked_cable_goes_straight_to_stage_two() {
        let (mut w, arm) = setup();
        w.components.retain(|c| {
            !matches!(c.category, ComponentCategory::Bolt | ComponentCategory::Module) && c.id.as_str() != "cable_2"
        });
        w.components.iter_mut().for_each(|c| c.locks.clear());
        let mut det = OracleDetector::new(ScoreModel::default(), 0);
        let report = run_disassembly(&mut w, &arm, &PlannerParams::default(), &mut det, &ExecutiveConfig::default());
        assert_eq!(report.records.len(), 1, "{:?}", report.records);
        assert_eq!(report.records[0].stage, StageFlag::Cables);
        assert!(report.records[0].success, "{:?}", report.records[0]);
        assert_eq!(report.stage_history, vec![StageFlag::Cables, StageFlag::Done]);
        assert_eq!(report.tool_changes, 0);
    }
}
