//! JSON scene files.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{
    ComponentCategory, ComponentId, DropZone, Mobility, Result, SceneComponent, SceneError,
    SceneWorld,
};
use crate::geometry::{Pose, Shape};
use crate::kinematics::{ArmModel, JointConfig, JOINTS};
use crate::perception::CameraModel;
use crate::planner::PlannerParams;

const UNIT_TOLERANCE: f64 = 1e-9;

/// Position plus orientation as a `w, x, y, z` quaternion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSpec {
    pub xyz: [f64; 3],
    pub quaternion: [f64; 4],
}

impl PoseSpec {
    pub fn at(x: f64, y: f64, z: f64) -> Self {
        PoseSpec {
            xyz: [x, y, z],
            quaternion: [1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn to_pose(&self, what: &str) -> Result<Pose> {
        let [w, x, y, z] = self.quaternion;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(SceneError::NonUnitQuaternion {
                what: what.to_string(),
                norm,
            });
        }
        Ok(Pose::from_parts(
            Translation3::new(self.xyz[0], self.xyz[1], self.xyz[2]),
            UnitQuaternion::new_unchecked(q),
        ))
    }

    pub fn from_pose(pose: &Pose) -> Self {
        let t = pose.translation.vector;
        let q = pose.rotation.quaternion();
        PoseSpec {
            xyz: [t.x, t.y, t.z],
            quaternion: [q.w, q.i, q.j, q.k],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Box,
    Cylinder,
}

/// `box`: full side lengths `[x, y, z]`; `cylinder`: `[radius, height]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    #[serde(rename = "type")]
    pub kind: GeometryKind,
    pub dims: Vec<f64>,
}

impl GeometrySpec {
    pub fn cuboid(x: f64, y: f64, z: f64) -> Self {
        GeometrySpec {
            kind: GeometryKind::Box,
            dims: vec![x, y, z],
        }
    }

    pub fn cylinder(radius: f64, height: f64) -> Self {
        GeometrySpec {
            kind: GeometryKind::Cylinder,
            dims: vec![radius, height],
        }
    }

    pub fn to_shape(&self, id: &str) -> Result<Shape> {
        let invalid = |reason: String| SceneError::InvalidGeometry {
            id: id.to_string(),
            reason,
        };
        let expected = match self.kind {
            GeometryKind::Box => 3,
            GeometryKind::Cylinder => 2,
        };
        if self.dims.len() != expected {
            return Err(invalid(format!(
                "{:?} needs {expected} dims, got {}",
                self.kind,
                self.dims.len()
            )));
        }
        if let Some(bad) = self.dims.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(invalid(format!("dimension {bad} is not positive")));
        }
        let d = &self.dims;
        Ok(match self.kind {
            GeometryKind::Box => Shape::cuboid(d[0], d[1], d[2]),
            GeometryKind::Cylinder => Shape::cylinder(d[0], d[1]),
        })
    }

    pub fn from_shape(shape: &Shape) -> Self {
        match *shape {
            Shape::Cuboid { half_extents: h } => GeometrySpec::cuboid(2.0 * h.x, 2.0 * h.y, 2.0 * h.z),
            Shape::Cylinder {
                radius,
                half_height,
            } => GeometrySpec::cylinder(radius, 2.0 * half_height),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub id: String,
    pub category: ComponentCategory,
    pub pose: PoseSpec,
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub locks: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropZoneSpec {
    pub pose: PoseSpec,
    /// Full side lengths.
    pub extent: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
    pub width: u32,
    pub height: u32,
    pub world_to_camera: PoseSpec,
}

/// Arm mounting and limit overrides; anything omitted keeps the UR10 default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<PoseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_limits: Option<[f64; JOINTS]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceleration_limits: Option<[f64; JOINTS]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home: Option<[f64; JOINTS]>,
}

/// On-disk scene document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub components: Vec<ComponentSpec>,
    pub drop_zones: BTreeMap<ComponentCategory, DropZoneSpec>,
    pub camera: CameraSpec,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<ArmSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner: Option<PlannerParams>,
}

/// A validated scene together with the arm and planner settings it carries.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDocument {
    pub world: SceneWorld,
    pub arm: ArmModel,
    pub planner: PlannerParams,
}

impl CameraSpec {
    pub fn to_camera(&self) -> Result<CameraModel> {
        let camera = CameraModel {
            fx: self.fx,
            fy: self.fy,
            u0: self.u0,
            v0: self.v0,
            width: self.width,
            height: self.height,
            world_to_camera: self.world_to_camera.to_pose("camera")?,
        };
        camera.validate().map_err(SceneError::InvalidCamera)?;
        Ok(camera)
    }

    pub fn from_camera(camera: &CameraModel) -> Self {
        CameraSpec {
            fx: camera.fx,
            fy: camera.fy,
            u0: camera.u0,
            v0: camera.v0,
            width: camera.width,
            height: camera.height,
            world_to_camera: PoseSpec::from_pose(&camera.world_to_camera),
        }
    }
}

impl ArmSpec {
    pub fn to_arm(&self) -> Result<ArmModel> {
        let base = match &self.base {
            Some(p) => p.to_pose("arm base")?,
            None => Pose::identity(),
        };
        let mut arm = ArmModel::ur10(base);
        let positive = |v: &[f64; JOINTS], what: &str| {
            if v.iter().all(|x| x.is_finite() && *x > 0.0) {
                Ok(*v)
            } else {
                Err(SceneError::InvalidArm(format!("{what} must be positive")))
            }
        };
        if let Some(v) = &self.velocity_limits {
            arm.velocity_limits = positive(v, "velocity limits")?;
        }
        if let Some(a) = &self.acceleration_limits {
            arm.acceleration_limits = positive(a, "acceleration limits")?;
        }
        if let Some(h) = self.home {
            let home = JointConfig(h);
            arm.check_limits(&home)
                .map_err(|e| SceneError::InvalidArm(format!("home: {e}")))?;
            arm.home = home;
        }
        Ok(arm)
    }
}

impl SceneFile {
    pub fn into_document(self) -> Result<SceneDocument> {
        let mut components = Vec::with_capacity(self.components.len());
        for spec in &self.components {
            components.push(SceneComponent {
                id: ComponentId::new(spec.id.clone()),
                category: spec.category,
                pose: spec.pose.to_pose(&format!("component `{}`", spec.id))?,
                shape: spec.geometry.to_shape(&spec.id)?,
                mobility: Mobility::Static,
                locks: spec.locks.iter().map(|l| ComponentId::new(l.clone())).collect(),
            });
        }
        let mut drop_zones = BTreeMap::new();
        for (category, spec) in &self.drop_zones {
            if spec.extent.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
                return Err(SceneError::InvalidGeometry {
                    id: format!("{category} drop zone"),
                    reason: "extent must be positive".into(),
                });
            }
            drop_zones.insert(
                *category,
                DropZone {
                    pose: spec.pose.to_pose(&format!("{category} drop zone"))?,
                    extent: Vector3::from(spec.extent),
                },
            );
        }
        let camera = self.camera.to_camera()?;
        let world = SceneWorld::new(components, drop_zones, camera, self.seed)?;
        let arm = self.arm.unwrap_or_default().to_arm()?;
        let planner = self.planner.unwrap_or_default();
        planner
            .validate()
            .map_err(|e| SceneError::InvalidArm(format!("planner: {e}")))?;
        Ok(SceneDocument {
            world,
            arm,
            planner,
        })
    }
}

pub fn parse_scene_document(json: &str) -> Result<SceneDocument> {
    let file: SceneFile = serde_json::from_str(json)?;
    file.into_document()
}

pub fn load_scene_document(path: impl AsRef<Path>) -> Result<SceneDocument> {
    let text = std::fs::read_to_string(path)?;
    parse_scene_document(&text)
}

/// Reads and validates a scene file.
pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneWorld> {
    Ok(load_scene_document(path)?.world)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::benchmark::benchmark_file;

    fn json_of(file: &SceneFile) -> String {
        serde_json::to_string(file).unwrap()
    }

    #[test]
    fn empty_components_rejected() {
        let mut file = benchmark_file();
        file.components.clear();
        let err = parse_scene_document(&json_of(&file)).unwrap_err();
        assert!(matches!(err, SceneError::NoDisassemblable));
        assert_eq!(err.to_string(), "no disassemblable components");
    }

    #[test]
    fn lock_to_missing_id_rejected() {
        let mut file = benchmark_file();
        let cable = file
            .components
            .iter_mut()
            .find(|c| c.category == ComponentCategory::Cable)
            .unwrap();
        cable.locks.push("bolt_99".into());
        assert!(matches!(
            parse_scene_document(&json_of(&file)),
            Err(SceneError::UnknownLock { .. })
        ));
    }

    #[test]
    fn duplicate_id_rejected() {
        let mut file = benchmark_file();
        let dup = file.components[1].clone();
        file.components.push(dup);
        assert!(matches!(
            parse_scene_document(&json_of(&file)),
            Err(SceneError::DuplicateId(_))
        ));
    }

    #[test]
    fn missing_drop_zone_rejected() {
        let mut file = benchmark_file();
        file.drop_zones.remove(&ComponentCategory::Cable);
        assert!(matches!(
            parse_scene_document(&json_of(&file)),
            Err(SceneError::MissingDropZone(ComponentCategory::Cable))
        ));
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        let mut file = benchmark_file();
        file.components[0].pose.quaternion = [1.0, 0.0, 0.0, 0.01];
        assert!(matches!(
            parse_scene_document(&json_of(&file)),
            Err(SceneError::NonUnitQuaternion { .. })
        ));
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(
            parse_scene_document("{\"components\": ["),
            Err(SceneError::Parse(_))
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_scene("/nonexistent/scene.json"),
            Err(SceneError::Io(_))
        ));
    }

    #[test]
    fn bad_cylinder_dims_rejected() {
        let mut file = benchmark_file();
        let bolt = file
            .components
            .iter_mut()
            .find(|c| c.category == ComponentCategory::Bolt)
            .unwrap();
        bolt.geometry.dims = vec![0.008];
        assert!(matches!(
            parse_scene_document(&json_of(&file)),
            Err(SceneError::InvalidGeometry { .. })
        ));
    }

    #[test]
    fn pose_spec_round_trip() {
        let pose = Pose::from_parts(
            Translation3::new(0.1, -0.2, 0.3),
            UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1),
        );
        let back = PoseSpec::from_pose(&pose).to_pose("p").unwrap();
        assert_eq!(back, pose);
    }
}
