//! The canonical benchmark pack: six bolts holding two cables, each cable
//! lying across two of four modules, plus inert hardware on a base plate.

use std::collections::BTreeMap;

use super::file::{
    ArmSpec, CameraSpec, ComponentSpec, DropZoneSpec, GeometrySpec, PoseSpec, SceneDocument,
    SceneFile,
};
use super::{parse_scene_document, ComponentCategory, SceneWorld};
use crate::perception::CameraModel;

/// Shipped canonical scene file.
pub const BENCHMARK_SCENE_JSON: &str = include_str!("../../scenes/benchmark.json");

const BASE_TOP: f64 = 0.05;
const MODULE_DIMS: [f64; 3] = [0.30, 0.20, 0.15];
const CABLE_DIMS: [f64; 3] = [0.54, 0.03, 0.01];
const BOLT_RADIUS: f64 = 0.008;
const BOLT_HEIGHT: f64 = 0.03;
const BOLT_XS: [f64; 3] = [-0.22, -0.08, 0.22];
const CABLE_YS: [f64; 2] = [0.19, -0.19];

fn component(
    id: &str,
    category: ComponentCategory,
    pose: PoseSpec,
    geometry: GeometrySpec,
    locks: Vec<String>,
) -> ComponentSpec {
    ComponentSpec {
        id: id.to_string(),
        category,
        pose,
        geometry,
        locks,
    }
}

fn inert(id: &str, category: ComponentCategory, xy: [f64; 2], dims: [f64; 3]) -> ComponentSpec {
    component(
        id,
        category,
        PoseSpec::at(xy[0], xy[1], BASE_TOP + dims[2] / 2.0),
        GeometrySpec::cuboid(dims[0], dims[1], dims[2]),
        Vec::new(),
    )
}

/// Builds the benchmark scene file from the layout constants.
pub fn benchmark_file() -> SceneFile {
    let module_top = BASE_TOP + MODULE_DIMS[2];
    let cable_z = module_top + CABLE_DIMS[2] / 2.0;
    let bolt_z = module_top + CABLE_DIMS[2] + BOLT_HEIGHT / 2.0;

    let mut components = vec![inert(
        "pack_base",
        ComponentCategory::PackBase,
        [0.0, 0.0],
        [0.9, 0.7, BASE_TOP],
    )];
    components[0].pose = PoseSpec::at(0.0, 0.0, BASE_TOP / 2.0);

    let mut bolt = 0;
    for (ci, &y) in CABLE_YS.iter().enumerate() {
        let mut locks = Vec::new();
        for &x in &BOLT_XS {
            bolt += 1;
            let id = format!("bolt_{bolt}");
            components.push(component(
                &id,
                ComponentCategory::Bolt,
                PoseSpec::at(x, y, bolt_z),
                GeometrySpec::cylinder(BOLT_RADIUS, BOLT_HEIGHT),
                Vec::new(),
            ));
            locks.push(id);
        }
        components.push(component(
            &format!("cable_{}", ci + 1),
            ComponentCategory::Cable,
            PoseSpec::at(0.0, y, cable_z),
            GeometrySpec::cuboid(CABLE_DIMS[0], CABLE_DIMS[1], CABLE_DIMS[2]),
            locks,
        ));
    }

    let mut module = 0;
    for (ci, y) in [0.12, -0.12].into_iter().enumerate() {
        for x in [-0.17, 0.17] {
            module += 1;
            components.push(component(
                &format!("module_{module}"),
                ComponentCategory::Module,
                PoseSpec::at(x, y, BASE_TOP + MODULE_DIMS[2] / 2.0),
                GeometrySpec::cuboid(MODULE_DIMS[0], MODULE_DIMS[1], MODULE_DIMS[2]),
                vec![format!("cable_{}", ci + 1)],
            ));
        }
    }

    components.extend([
        inert("msd", ComponentCategory::Msd, [0.385, 0.0], [0.08, 0.10, 0.06]),
        inert("bms", ComponentCategory::BmsController, [0.385, 0.24], [0.08, 0.14, 0.04]),
        inert("contactor", ComponentCategory::Contactor, [-0.385, 0.22], [0.08, 0.10, 0.06]),
        inert("bus_bar_pos", ComponentCategory::PositiveBusBar, [-0.385, -0.05], [0.04, 0.12, 0.02]),
        inert("bus_bar_neg", ComponentCategory::NegativeBusBar, [-0.385, -0.22], [0.04, 0.12, 0.02]),
    ]);

    let zone = |x: f64| DropZoneSpec {
        pose: PoseSpec::at(x, -0.6, 0.15),
        extent: [0.3, 0.3, 0.3],
    };
    let drop_zones = BTreeMap::from([
        (ComponentCategory::Bolt, zone(-0.45)),
        (ComponentCategory::Cable, zone(-0.1)),
        (ComponentCategory::Module, zone(0.25)),
    ]);

    SceneFile {
        components,
        drop_zones,
        camera: CameraSpec::from_camera(&CameraModel::overhead(BASE_TOP + 1.5)),
        seed: 0,
        arm: Some(ArmSpec {
            base: Some(PoseSpec {
                xyz: [-0.6, 0.0, 0.0],
                quaternion: [0.0, 0.0, 0.0, 1.0],
            }),
            ..ArmSpec::default()
        }),
        planner: None,
    }
}

/// Serialized form of [`benchmark_file`], as shipped.
pub fn benchmark_json() -> String {
    let mut s = serde_json::to_string_pretty(&benchmark_file()).expect("serializable");
    s.push('\n');
    s
}

pub fn benchmark_document() -> SceneDocument {
    parse_scene_document(BENCHMARK_SCENE_JSON).expect("shipped benchmark scene is valid")
}

pub fn benchmark_scene() -> SceneWorld {
    benchmark_document().world
}
