//! Forward kinematics, geometric Jacobian, damped-least-squares inverse
//! kinematics and the collision skeleton of a six-axis DH arm.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::{Index, IndexMut};

use nalgebra::{Matrix6, Point3, Translation3, UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Capsule, LocalCapsule, Pose};

pub const JOINTS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("joint {joint} at {value:.6} rad is outside [{lower:.4}, {upper:.4}]")]
    JointLimit {
        joint: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("pose unreachable (best residual {position:.2e} m, {orientation:.2e} rad)")]
    Unreachable { position: f64, orientation: f64 },
}

/// Six joint angles in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub [f64; JOINTS]);

impl JointConfig {
    pub const ZERO: JointConfig = JointConfig([0.0; JOINTS]);

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        JointConfig([v[0], v[1], v[2], v[3], v[4], v[5]])
    }

    pub fn to_vector(self) -> Vector6<f64> {
        Vector6::from_column_slice(&self.0)
    }

    /// Euclidean joint-space distance.
    pub fn distance(&self, other: &JointConfig) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn lerp(&self, other: &JointConfig, t: f64) -> JointConfig {
        let mut out = *self;
        for i in 0..JOINTS {
            out.0[i] = self.0[i] + (other.0[i] - self.0[i]) * t;
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.0.iter()
    }
}

impl Index<usize> for JointConfig {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for JointConfig {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// One Denavit–Hartenberg row (standard convention).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    pub theta_offset: f64,
}

impl DhRow {
    /// `Rz(theta) * Tz(d) * Tx(a) * Rx(alpha)`
    pub fn transform(&self, q: f64) -> Pose {
        let theta = q + self.theta_offset;
        let (s, c) = theta.sin_cos();
        Pose::from_parts(
            Translation3::new(self.a * c, self.a * s, self.d),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta)
                * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.alpha),
        )
    }
}

/// Capsule rigidly attached to one kinematic frame. Frame 0 is the arm base,
/// frame `i` follows joint `i`, frame 6 is the tool flange.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkCapsule {
    pub frame: usize,
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub radius: f64,
}

impl LinkCapsule {
    pub fn local(&self) -> LocalCapsule {
        LocalCapsule {
            start: Point3::from(self.start),
            end: Point3::from(self.end),
            radius: self.radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmModel {
    pub dh: [DhRow; JOINTS],
    pub base_pose: Pose,
    pub link_capsules: Vec<LinkCapsule>,
    /// Capsules of the mounted end effector, expressed in the flange frame.
    pub tool_capsules: Vec<LinkCapsule>,
    /// Flange to tool point.
    pub tool_offset: Pose,
    pub lower_limits: [f64; JOINTS],
    pub upper_limits: [f64; JOINTS],
    pub velocity_limits: [f64; JOINTS],
    pub acceleration_limits: [f64; JOINTS],
    pub home: JointConfig,
}

impl ArmModel {
    /// UR10 with the published DH table, mounted at `base_pose`.
    pub fn ur10(base_pose: Pose) -> Self {
        let a = [0.0, -0.612, -0.5723, 0.0, 0.0, 0.0];
        let d = [0.1273, 0.0, 0.0, 0.163941, 0.1157, 0.0922];
        let alpha = [FRAC_PI_2, 0.0, 0.0, FRAC_PI_2, -FRAC_PI_2, 0.0];
        let dh = std::array::from_fn(|i| DhRow {
            a: a[i],
            d: d[i],
            alpha: alpha[i],
            theta_offset: 0.0,
        });
        let link_capsules = vec![
            // Pedestal and shoulder housing.
            LinkCapsule { frame: 0, start: [0.0, 0.0, 0.0], end: [0.0, 0.0, d[0]], radius: 0.075 },
            // Upper arm: elbow back to the shoulder.
            LinkCapsule { frame: 2, start: [-a[1], 0.0, 0.0], end: [0.0, 0.0, 0.0], radius: 0.06 },
            // Forearm: wrist 1 back to the elbow.
            LinkCapsule { frame: 3, start: [-a[2], 0.0, 0.0], end: [0.0, 0.0, 0.0], radius: 0.05 },
            // Wrist offsets.
            LinkCapsule { frame: 3, start: [0.0, 0.0, 0.0], end: [0.0, 0.0, d[3]], radius: 0.045 },
            LinkCapsule { frame: 4, start: [0.0, 0.0, 0.0], end: [0.0, 0.0, d[4]], radius: 0.045 },
            LinkCapsule { frame: 5, start: [0.0, 0.0, 0.0], end: [0.0, 0.0, d[5]], radius: 0.045 },
        ];
        ArmModel {
            dh,
            base_pose,
            link_capsules,
            tool_capsules: Vec::new(),
            tool_offset: Pose::identity(),
            lower_limits: [-TAU; JOINTS],
            upper_limits: [TAU; JOINTS],
            velocity_limits: [2.0; JOINTS],
            acceleration_limits: [4.0; JOINTS],
            home: JointConfig([0.0, -FRAC_PI_2, FRAC_PI_2, -FRAC_PI_2, -FRAC_PI_2, 0.0]),
        }
    }

    /// Replaces the end effector.
    pub fn mount_tool(&mut self, tool_offset: Pose, capsules: Vec<LinkCapsule>) {
        self.tool_offset = tool_offset;
        self.tool_capsules = capsules;
    }

    pub fn check_limits(&self, q: &JointConfig) -> Result<(), KinematicsError> {
        for j in 0..JOINTS {
            let v = q[j];
            if !(self.lower_limits[j]..=self.upper_limits[j]).contains(&v) || !v.is_finite() {
                return Err(KinematicsError::JointLimit {
                    joint: j,
                    value: v,
                    lower: self.lower_limits[j],
                    upper: self.upper_limits[j],
                });
            }
        }
        Ok(())
    }

    pub fn within_limits(&self, q: &JointConfig) -> bool {
        self.check_limits(q).is_ok()
    }

    /// Shifts each angle by whole turns until it lies inside the limits,
    /// when that is possible.
    pub fn wrap_into_limits(&self, q: &JointConfig) -> JointConfig {
        let mut out = *q;
        for j in 0..JOINTS {
            while out[j] > self.upper_limits[j] && out[j] - TAU >= self.lower_limits[j] {
                out[j] -= TAU;
            }
            while out[j] < self.lower_limits[j] && out[j] + TAU <= self.upper_limits[j] {
                out[j] += TAU;
            }
        }
        out
    }

    /// World poses of frames 0 (base) through 6 (flange). No limit check.
    pub fn frames(&self, q: &JointConfig) -> [Pose; JOINTS + 1] {
        let mut frames = [self.base_pose; JOINTS + 1];
        for j in 0..JOINTS {
            frames[j + 1] = frames[j] * self.dh[j].transform(q[j]);
        }
        frames
    }

    pub fn flange_pose(&self, q: &JointConfig) -> Pose {
        self.frames(q)[JOINTS]
    }

    pub fn tool_pose(&self, q: &JointConfig) -> Pose {
        self.flange_pose(q) * self.tool_offset
    }

    /// Flange pose that puts the tool point at `tool`.
    pub fn flange_for_tool(&self, tool: &Pose) -> Pose {
        tool * self.tool_offset.inverse()
    }

    /// Conservative bound on the distance from the shoulder to the flange.
    pub fn max_reach(&self) -> f64 {
        self.dh.iter().skip(1).map(|r| r.a.abs() + r.d.abs()).sum::<f64>()
    }
}

/// Tool-flange pose in the world frame.
pub fn forward_kinematics(arm: &ArmModel, q: &JointConfig) -> Result<Pose, KinematicsError> {
    arm.check_limits(q)?;
    Ok(arm.flange_pose(q))
}

/// Geometric Jacobian at the flange: rows 0..3 linear velocity, rows 3..6
/// angular velocity, both in the world frame.
pub fn jacobian(arm: &ArmModel, q: &JointConfig) -> Matrix6<f64> {
    let frames = arm.frames(q);
    let p_end = frames[JOINTS].translation.vector;
    let mut jac = Matrix6::zeros();
    for j in 0..JOINTS {
        let z = frames[j].rotation * Vector3::z();
        let o = frames[j].translation.vector;
        let lin = z.cross(&(p_end - o));
        jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
        jac.fixed_view_mut::<3, 1>(3, j).copy_from(&z);
    }
    jac
}

/// Position and orientation residual between two poses, as a stacked
/// 6-vector (translation error, rotation vector).
pub fn pose_error(target: &Pose, current: &Pose) -> Vector6<f64> {
    let dp = target.translation.vector - current.translation.vector;
    let dr = (target.rotation * current.rotation.inverse()).scaled_axis();
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkOptions {
    pub damping: f64,
    pub max_iterations: usize,
    pub restarts: usize,
    /// Success thresholds on the final residual.
    pub position_tolerance: f64,
    pub orientation_tolerance: f64,
    /// Early-exit thresholds; tighter than the success thresholds.
    pub converge_position: f64,
    pub converge_orientation: f64,
    pub rng_seed: u64,
}

impl Default for IkOptions {
    fn default() -> Self {
        IkOptions {
            damping: 0.05,
            max_iterations: 200,
            restarts: 8,
            position_tolerance: 1e-4,
            orientation_tolerance: 1e-3,
            converge_position: 1e-8,
            converge_orientation: 1e-8,
            rng_seed: 0,
        }
    }
}

/// Damped-least-squares IK for the flange pose `target`, starting at `seed`
/// and falling back to random restarts.
pub fn inverse_kinematics(
    arm: &ArmModel,
    target: &Pose,
    seed: &JointConfig,
) -> Result<JointConfig, KinematicsError> {
    inverse_kinematics_with(arm, target, seed, &IkOptions::default())
}

pub fn inverse_kinematics_with(
    arm: &ArmModel,
    target: &Pose,
    seed: &JointConfig,
    opts: &IkOptions,
) -> Result<JointConfig, KinematicsError> {
    let shoulder = arm.frames(&JointConfig::ZERO)[1].translation.vector;
    let gap = (target.translation.vector - shoulder).norm() - arm.max_reach();
    if gap > 0.0 {
        return Err(KinematicsError::Unreachable {
            position: gap,
            orientation: f64::NAN,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
    let mut best = (f64::INFINITY, f64::INFINITY);
    let mut start = *seed;
    for attempt in 0..=opts.restarts {
        if attempt > 0 {
            start = JointConfig(std::array::from_fn(|_| rng.random_range(-PI..PI)));
        }
        let (q, pos, ori) = dls_solve(arm, target, &start, opts);
        if pos <= opts.position_tolerance && ori <= opts.orientation_tolerance {
            let q = arm.wrap_into_limits(&q);
            if arm.within_limits(&q) {
                return Ok(q);
            }
        }
        if pos + ori < best.0 + best.1 {
            best = (pos, ori);
        }
    }
    Err(KinematicsError::Unreachable {
        position: best.0,
        orientation: best.1,
    })
}

fn dls_solve(arm: &ArmModel, target: &Pose, start: &JointConfig, opts: &IkOptions) -> (JointConfig, f64, f64) {
    const MAX_LINEAR_STEP: f64 = 0.1;
    const MAX_ANGULAR_STEP: f64 = 0.5;
    let lambda2 = opts.damping * opts.damping;
    let mut q = *start;
    let residual = |q: &JointConfig| {
        let e = pose_error(target, &arm.flange_pose(q));
        (e, e.fixed_rows::<3>(0).norm(), e.fixed_rows::<3>(3).norm())
    };
    let (mut err, mut pos, mut ori) = residual(&q);
    for _ in 0..opts.max_iterations {
        if pos <= opts.converge_position && ori <= opts.converge_orientation {
            break;
        }
        let mut step = err;
        if pos > MAX_LINEAR_STEP {
            step.fixed_rows_mut::<3>(0).scale_mut(MAX_LINEAR_STEP / pos);
        }
        if ori > MAX_ANGULAR_STEP {
            step.fixed_rows_mut::<3>(3).scale_mut(MAX_ANGULAR_STEP / ori);
        }
        let jac = jacobian(arm, &q);
        let damped = jac * jac.transpose() + Matrix6::identity() * lambda2;
        let Some(solved) = damped.cholesky().map(|c| c.solve(&step)) else {
            break;
        };
        let dq = jac.transpose() * solved;
        q = JointConfig::from_vector(&(q.to_vector() + dq));
        (err, pos, ori) = residual(&q);
    }
    (q, pos, ori)
}

/// World-frame collision capsules of the arm and its mounted tool.
pub fn arm_capsules(arm: &ArmModel, q: &JointConfig) -> Vec<Capsule> {
    let frames = arm.frames(q);
    arm.link_capsules
        .iter()
        .chain(&arm.tool_capsules)
        .map(|lc| lc.local().transformed(&frames[lc.frame.min(JOINTS)]))
        .collect()
}
