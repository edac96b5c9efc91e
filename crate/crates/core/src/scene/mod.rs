//! World model for the battery pack: components, their mobility state,
//! precedence locks, grasp attachment and collision queries.

mod benchmark;
mod file;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{capsule_intersects, shape_aabb, Aabb, Capsule, Pose, Shape};
use crate::perception::CameraModel;

pub use benchmark::{
    benchmark_document, benchmark_file, benchmark_json, benchmark_scene, BENCHMARK_SCENE_JSON,
};
pub use file::{
    load_scene, load_scene_document, parse_scene_document, ArmSpec, CameraSpec, ComponentSpec,
    DropZoneSpec, GeometryKind, GeometrySpec, PoseSpec, SceneDocument, SceneFile,
};

/// Maximum tool-point to grasp-point distance at which a grasp connects.
pub const ATTACH_THRESHOLD: f64 = 0.005;

/// Clearance between a carried object's collision capsule and its true
/// surface.
pub const CARRIED_MARGIN: f64 = 0.001;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("failed to read scene file")]
    Io(#[from] std::io::Error),
    #[error("malformed scene file")]
    Parse(#[from] serde_json::Error),
    #[error("no disassemblable components")]
    NoDisassemblable,
    #[error("duplicate component id `{0}`")]
    DuplicateId(ComponentId),
    #[error("component `{component}` is locked by unknown id `{lock}`")]
    UnknownLock {
        component: ComponentId,
        lock: ComponentId,
    },
    #[error("no drop zone for category {0}")]
    MissingDropZone(ComponentCategory),
    #[error("{what} quaternion is not unit norm (|q| = {norm})")]
    NonUnitQuaternion { what: String, norm: f64 },
    #[error("invalid geometry for `{id}`: {reason}")]
    InvalidGeometry { id: String, reason: String },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid arm description: {0}")]
    InvalidArm(String),
    #[error("component `{0}` not found")]
    NotFound(ComponentId),
    #[error("component `{id}` is {found:?}, expected {expected:?}")]
    WrongState {
        id: ComponentId,
        expected: Mobility,
        found: Mobility,
    },
    #[error("component `{id}` is still locked by `{blocking}`")]
    PrecedenceViolation {
        id: ComponentId,
        blocking: ComponentId,
    },
    #[error("gripper is {distance:.4} m from the grasp point of `{id}`")]
    TooFar { id: ComponentId, distance: f64 },
    #[error("gripper already holds `{0}`")]
    GripperBusy(ComponentId),
}

pub type Result<T> = std::result::Result<T, SceneError>;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComponentId(String);

impl ComponentId {
    pub fn new(id: impl Into<String>) -> Self {
        ComponentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ComponentId {
    fn from(s: &str) -> Self {
        ComponentId::new(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ComponentCategory {
    Bolt,
    Cable,
    Module,
    #[serde(rename = "MSD")]
    Msd,
    PositiveBusBar,
    NegativeBusBar,
    Contactor,
    #[serde(rename = "BMSController")]
    BmsController,
    PackBase,
}

impl ComponentCategory {
    pub const ALL: [ComponentCategory; 9] = [
        ComponentCategory::Bolt,
        ComponentCategory::Cable,
        ComponentCategory::Module,
        ComponentCategory::Msd,
        ComponentCategory::PositiveBusBar,
        ComponentCategory::NegativeBusBar,
        ComponentCategory::Contactor,
        ComponentCategory::BmsController,
        ComponentCategory::PackBase,
    ];

    /// Bolts, cables and modules are removed; everything else stays put.
    pub fn is_disassemblable(self) -> bool {
        matches!(
            self,
            ComponentCategory::Bolt | ComponentCategory::Cable | ComponentCategory::Module
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ComponentCategory::Bolt => "Bolt",
            ComponentCategory::Cable => "Cable",
            ComponentCategory::Module => "Module",
            ComponentCategory::Msd => "MSD",
            ComponentCategory::PositiveBusBar => "PositiveBusBar",
            ComponentCategory::NegativeBusBar => "NegativeBusBar",
            ComponentCategory::Contactor => "Contactor",
            ComponentCategory::BmsController => "BMSController",
            ComponentCategory::PackBase => "PackBase",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for ComponentCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Lifecycle of a component. Transitions only move forward through the
/// variants in declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mobility {
    Static,
    Movable,
    AttachedToGripper,
    Removed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneComponent {
    pub id: ComponentId,
    pub category: ComponentCategory,
    pub pose: Pose,
    pub shape: Shape,
    pub mobility: Mobility,
    pub locks: Vec<ComponentId>,
}

impl SceneComponent {
    /// Top-face center in world coordinates.
    pub fn grasp_point(&self) -> Point3<f64> {
        self.pose * Point3::new(0.0, 0.0, self.shape.top_offset())
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.pose.translation.vector)
    }

    pub fn aabb(&self) -> Aabb {
        shape_aabb(&self.shape, &self.pose)
    }

    /// Takes part in collision and rendering queries.
    pub fn is_present(&self) -> bool {
        self.mobility != Mobility::Removed
    }
}

/// Category-specific release region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropZone {
    pub pose: Pose,
    /// Full side lengths (m).
    pub extent: Vector3<f64>,
}

impl DropZone {
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let local = self.pose.inverse_transform_point(p);
        (0..3).all(|i| local[i].abs() <= self.extent[i] / 2.0)
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.pose.translation.vector)
    }
}

/// A grasp connection: the component pose is `gripper_pose * relative`.
#[derive(Clone, Debug, PartialEq)]
pub struct Attachment {
    pub id: ComponentId,
    pub relative: Pose,
}

/// Result of releasing a component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetachOutcome {
    pub final_pose: Pose,
    pub in_drop_zone: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneWorld {
    pub components: Vec<SceneComponent>,
    pub drop_zones: BTreeMap<ComponentCategory, DropZone>,
    pub camera: CameraModel,
    pub rng_seed: u64,
    attachment: Option<Attachment>,
}

impl SceneWorld {
    /// Builds and validates a world.
    pub fn new(
        components: Vec<SceneComponent>,
        drop_zones: BTreeMap<ComponentCategory, DropZone>,
        camera: CameraModel,
        rng_seed: u64,
    ) -> Result<Self> {
        let world = SceneWorld {
            components,
            drop_zones,
            camera,
            rng_seed,
            attachment: None,
        };
        world.validate()?;
        Ok(world)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.components.iter().any(|c| c.category.is_disassemblable()) {
            return Err(SceneError::NoDisassemblable);
        }
        let mut seen = BTreeSet::new();
        for c in &self.components {
            if !seen.insert(&c.id) {
                return Err(SceneError::DuplicateId(c.id.clone()));
            }
        }
        for c in &self.components {
            if let Some(lock) = c.locks.iter().find(|l| !seen.contains(l)) {
                return Err(SceneError::UnknownLock {
                    component: c.id.clone(),
                    lock: lock.clone(),
                });
            }
            let norm = c.pose.rotation.quaternion().norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(SceneError::NonUnitQuaternion {
                    what: format!("component `{}`", c.id),
                    norm,
                });
            }
            if c.category.is_disassemblable() && !self.drop_zones.contains_key(&c.category) {
                return Err(SceneError::MissingDropZone(c.category));
            }
        }
        Ok(())
    }

    pub fn component(&self, id: &ComponentId) -> Result<&SceneComponent> {
        self.components
            .iter()
            .find(|c| &c.id == id)
            .ok_or_else(|| SceneError::NotFound(id.clone()))
    }

    fn index_of(&self, id: &ComponentId) -> Result<usize> {
        self.components
            .iter()
            .position(|c| &c.id == id)
            .ok_or_else(|| SceneError::NotFound(id.clone()))
    }

    pub fn attachment(&self) -> Option<&Attachment> {
        self.attachment.as_ref()
    }

    /// Components still to be removed.
    pub fn remaining_disassemblable(&self) -> impl Iterator<Item = &SceneComponent> {
        self.components
            .iter()
            .filter(|c| c.category.is_disassemblable() && c.mobility != Mobility::Removed)
    }

    pub fn count_category(&self, category: ComponentCategory) -> usize {
        self.components
            .iter()
            .filter(|c| c.category == category)
            .count()
    }

    /// Swaps a static component for its movable twin. The pose is untouched.
    pub fn make_movable(&mut self, id: &ComponentId) -> Result<()> {
        let idx = self.index_of(id)?;
        let comp = &self.components[idx];
        if comp.mobility != Mobility::Static {
            return Err(SceneError::WrongState {
                id: id.clone(),
                expected: Mobility::Static,
                found: comp.mobility,
            });
        }
        for lock in &comp.locks {
            if self.component(lock)?.mobility != Mobility::Removed {
                return Err(SceneError::PrecedenceViolation {
                    id: id.clone(),
                    blocking: lock.clone(),
                });
            }
        }
        self.components[idx].mobility = Mobility::Movable;
        Ok(())
    }

    /// Connects a movable component to the gripper whose tool point is at
    /// `gripper_pose`.
    pub fn attach(&mut self, id: &ComponentId, gripper_pose: &Pose) -> Result<()> {
        if let Some(held) = &self.attachment {
            return Err(SceneError::GripperBusy(held.id.clone()));
        }
        let idx = self.index_of(id)?;
        let comp = &self.components[idx];
        if comp.mobility != Mobility::Movable {
            return Err(SceneError::WrongState {
                id: id.clone(),
                expected: Mobility::Movable,
                found: comp.mobility,
            });
        }
        let tool = Point3::from(gripper_pose.translation.vector);
        let distance = (comp.grasp_point() - tool).norm();
        if distance > ATTACH_THRESHOLD {
            return Err(SceneError::TooFar {
                id: id.clone(),
                distance,
            });
        }
        let relative = gripper_pose.inverse() * comp.pose;
        self.components[idx].mobility = Mobility::AttachedToGripper;
        self.attachment = Some(Attachment {
            id: id.clone(),
            relative,
        });
        Ok(())
    }

    /// Moves the held component rigidly with the gripper.
    pub fn carry(&mut self, gripper_pose: &Pose) {
        if let Some(att) = &self.attachment {
            let pose = gripper_pose * att.relative;
            if let Some(c) = self.components.iter_mut().find(|c| c.id == att.id) {
                c.pose = pose;
            }
        }
    }

    /// Releases the held component where it currently is.
    pub fn detach(&mut self, id: &ComponentId) -> Result<DetachOutcome> {
        let idx = self.index_of(id)?;
        let comp = &self.components[idx];
        if comp.mobility != Mobility::AttachedToGripper {
            return Err(SceneError::WrongState {
                id: id.clone(),
                expected: Mobility::AttachedToGripper,
                found: comp.mobility,
            });
        }
        let final_pose = comp.pose;
        let in_drop_zone = self
            .drop_zones
            .get(&comp.category)
            .is_some_and(|zone| zone.contains(&comp.center()));
        self.components[idx].mobility = Mobility::Removed;
        self.attachment = None;
        Ok(DetachOutcome {
            final_pose,
            in_drop_zone,
        })
    }

    /// Collision capsules of whatever the gripper holds, for a gripper at
    /// `gripper_pose`.
    pub fn carried_capsules(&self, gripper_pose: &Pose) -> Vec<Capsule> {
        let Some(att) = &self.attachment else {
            return Vec::new();
        };
        let Ok(comp) = self.component(&att.id) else {
            return Vec::new();
        };
        let pose = gripper_pose * att.relative;
        vec![comp.shape.inscribed_capsule(CARRIED_MARGIN).transformed(&pose)]
    }

    /// True iff any capsule strictly intersects a present, unheld component.
    pub fn collides(&self, arm_shape: &[Capsule]) -> bool {
        self.collides_except(arm_shape, None)
    }

    /// Like [`SceneWorld::collides`] but ignores one component, e.g. the
    /// target the gripper is closing on.
    pub fn collides_except(&self, arm_shape: &[Capsule], ignore: Option<&ComponentId>) -> bool {
        let boxes: Vec<Aabb> = arm_shape.iter().map(Capsule::aabb).collect();
        self.components
            .iter()
            .filter(|c| {
                matches!(c.mobility, Mobility::Static | Mobility::Movable) && Some(&c.id) != ignore
            })
            .any(|c| {
                let bb = c.aabb();
                arm_shape
                    .iter()
                    .zip(&boxes)
                    .any(|(cap, cb)| cb.overlaps(&bb) && capsule_intersects(cap, &c.shape, &c.pose))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Translation3, UnitQuaternion};
    use proptest::prelude::*;

    fn world() -> SceneWorld {
        benchmark_scene()
    }

    fn id(s: &str) -> ComponentId {
        ComponentId::new(s)
    }

    fn at(p: Point3<f64>) -> Pose {
        Pose::from_parts(Translation3::from(p.coords), UnitQuaternion::identity())
    }

    #[test]
    fn make_movable_keeps_pose_bit_identical() {
        let mut w = world();
        let before = w.component(&id("bolt_1")).unwrap().pose;
        w.make_movable(&id("bolt_1")).unwrap();
        let c = w.component(&id("bolt_1")).unwrap();
        assert_eq!(c.mobility, Mobility::Movable);
        assert_eq!(c.pose, before);
    }

    #[test]
    fn locked_cable_cannot_become_movable() {
        let mut w = world();
        let err = w.make_movable(&id("cable_1")).unwrap_err();
        assert!(matches!(err, SceneError::PrecedenceViolation { .. }));
        assert_eq!(w.component(&id("cable_1")).unwrap().mobility, Mobility::Static);
    }

    #[test]
    fn make_movable_unknown_id() {
        let mut w = world();
        assert!(matches!(w.make_movable(&id("nope")), Err(SceneError::NotFound(_))));
    }

    #[test]
    fn attach_respects_threshold() {
        let mut w = world();
        let bolt = id("bolt_1");
        w.make_movable(&bolt).unwrap();
        let grasp = w.component(&bolt).unwrap().grasp_point();

        let mut far = w.clone();
        let err = far.attach(&bolt, &at(grasp + Vector3::new(0.05, 0.0, 0.0))).unwrap_err();
        assert!(matches!(err, SceneError::TooFar { .. }));

        w.attach(&bolt, &at(grasp + Vector3::new(0.002, 0.0, 0.0))).unwrap();
        assert_eq!(w.component(&bolt).unwrap().mobility, Mobility::AttachedToGripper);
    }

    #[test]
    fn attach_static_is_wrong_state() {
        let mut w = world();
        let grasp = w.component(&id("bolt_1")).unwrap().grasp_point();
        assert!(matches!(
            w.attach(&id("bolt_1"), &at(grasp)),
            Err(SceneError::WrongState { .. })
        ));
    }

    #[test]
    fn detach_checks_drop_zone() {
        let mut w = world();
        let bolt = id("bolt_1");
        w.make_movable(&bolt).unwrap();
        let grasp = w.component(&bolt).unwrap().grasp_point();
        w.attach(&bolt, &at(grasp)).unwrap();
        let zone = w.drop_zones[&ComponentCategory::Bolt];
        let offset = grasp - w.component(&bolt).unwrap().center();

        let mut inside = w.clone();
        inside.carry(&at(zone.center() + offset));
        let out = inside.detach(&bolt).unwrap();
        assert!(out.in_drop_zone);
        assert_eq!(inside.component(&bolt).unwrap().mobility, Mobility::Removed);

        let mut outside = w.clone();
        outside.carry(&at(zone.center() + offset + Vector3::new(1.0, 0.0, 0.0)));
        assert!(!outside.detach(&bolt).unwrap().in_drop_zone);
    }

    #[test]
    fn detach_unattached_module_is_wrong_state() {
        let mut w = world();
        assert!(matches!(
            w.detach(&id("module_1")),
            Err(SceneError::WrongState { .. })
        ));
    }

    #[test]
    fn capsule_inside_module_collides() {
        let w = world();
        let m = w.component(&id("module_1")).unwrap().center();
        let cap = Capsule {
            start: m - Vector3::new(0.01, 0.0, 0.0),
            end: m + Vector3::new(0.01, 0.0, 0.0),
            radius: 0.01,
        };
        assert!(w.collides(&[cap]));
    }

    #[test]
    fn capsule_far_above_pack_is_free() {
        let w = world();
        let cap = Capsule {
            start: Point3::new(-0.3, 0.0, 1.2),
            end: Point3::new(0.3, 0.0, 1.2),
            radius: 0.05,
        };
        assert!(!w.collides(&[cap]));
    }

    #[test]
    fn tangent_capsule_does_not_collide() {
        // Box half extents 0.5 at the origin, capsule axis 0.25 above the top
        // face with radius 0.25: exactly touching.
        let comp = SceneComponent {
            id: id("b"),
            category: ComponentCategory::Module,
            pose: Pose::identity(),
            shape: Shape::cuboid(1.0, 1.0, 1.0),
            mobility: Mobility::Static,
            locks: vec![],
        };
        let mut w = world();
        w.components = vec![comp.clone()];
        let touching = Capsule {
            start: Point3::new(-0.25, 0.0, 0.75),
            end: Point3::new(0.25, 0.0, 0.75),
            radius: 0.25,
        };
        assert!(!w.collides(&[touching]));

        // Independent check: brute-force distance over a fine grid along the axis.
        let brute = (0..=10_000)
            .map(|k| {
                let t = k as f64 / 10_000.0;
                let p = touching.start + (touching.end - touching.start) * t;
                comp.shape.distance_to_local_point(&p)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((brute - touching.radius).abs() < 1e-9);

        let deeper = Capsule {
            radius: 0.25 + 1e-6,
            ..touching
        };
        assert!(w.collides(&[deeper]));
    }

    #[test]
    fn held_component_is_not_an_obstacle() {
        let mut w = world();
        let bolt = id("bolt_1");
        w.make_movable(&bolt).unwrap();
        let grasp = w.component(&bolt).unwrap().grasp_point();
        w.attach(&bolt, &at(grasp)).unwrap();
        let c = w.component(&bolt).unwrap().center();
        let probe = Capsule {
            start: c,
            end: c,
            radius: 0.004,
        };
        assert!(!w.collides(&[probe]));
        // The carried capsule sits inside the bolt and clears its support.
        let carried = w.carried_capsules(&at(grasp));
        assert_eq!(carried.len(), 1);
        assert!(!w.collides(&carried));
    }

    #[test]
    fn carried_pose_follows_gripper_rigidly() {
        let mut w = world();
        let bolt = id("bolt_2");
        w.make_movable(&bolt).unwrap();
        let grasp = w.component(&bolt).unwrap().grasp_point();
        let g0 = Pose::from_parts(
            Translation3::from(grasp.coords),
            UnitQuaternion::from_euler_angles(3.1, 0.01, -0.4),
        );
        w.attach(&bolt, &g0).unwrap();
        let rel = w.attachment().unwrap().relative;
        for k in 0..20 {
            let g = Pose::from_parts(
                Translation3::new(0.01 * k as f64, -0.2, 0.5),
                UnitQuaternion::from_euler_angles(0.1 * k as f64, 0.2, 0.3),
            );
            w.carry(&g);
            let expected = g * rel;
            let got = w.component(&bolt).unwrap().pose;
            assert!((got.translation.vector - expected.translation.vector).norm() < 1e-12);
            assert!(got.rotation.angle_to(&expected.rotation) < 1e-12);
        }
    }

    #[derive(Clone, Debug)]
    enum Op {
        MakeMovable(usize),
        Attach(usize),
        Detach(usize),
    }

    fn op_strategy(n: usize) -> impl Strategy<Value = Op> {
        prop_oneof![
            (0..n).prop_map(Op::MakeMovable),
            (0..n).prop_map(Op::Attach),
            (0..n).prop_map(Op::Detach),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn mobility_only_moves_forward(ops in proptest::collection::vec(op_strategy(12), 1..80)) {
            let mut w = world();
            let targets: Vec<ComponentId> = w.remaining_disassemblable().map(|c| c.id.clone()).collect();
            let mut history: BTreeMap<ComponentId, Vec<Mobility>> =
                targets.iter().map(|t| (t.clone(), vec![Mobility::Static])).collect();
            for op in ops {
                let _ = match op {
                    Op::MakeMovable(i) => w.make_movable(&targets[i]).map(|_| ()),
                    Op::Attach(i) => {
                        let g = w.component(&targets[i]).unwrap().grasp_point();
                        w.attach(&targets[i], &at(g))
                    }
                    Op::Detach(i) => w.detach(&targets[i]).map(|_| ()),
                };
                for t in &targets {
                    let m = w.component(t).unwrap().mobility;
                    let h = history.get_mut(t).unwrap();
                    if *h.last().unwrap() != m {
                        h.push(m);
                    }
                }
                // Precedence: nothing leaves Static while a lock is still present.
                for c in &w.components {
                    if c.mobility != Mobility::Static {
                        for l in &c.locks {
                            prop_assert_eq!(w.component(l).unwrap().mobility, Mobility::Removed);
                        }
                    }
                }
            }
            for h in history.values() {
                prop_assert!(h.windows(2).all(|p| p[0] < p[1]), "{:?}", h);
            }
        }
    }
}
