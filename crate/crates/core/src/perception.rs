//! Pinhole camera, ray-cast depth and color rendering, the ground-truth
//! detector and stage selection over its output.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::{Point3, Quaternion, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ray_shape, Pose};
use crate::imaging::RasterImage;
use crate::scene::{ComponentCategory, ComponentId, Mobility, SceneWorld};

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("no depth at pixel ({u}, {v})")]
    NoDepth { u: f64, v: f64 },
    #[error("pixel ({u}, {v}) is outside the {width}x{height} image")]
    OutOfImage {
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Pinhole camera. Pixel centers sit at integer coordinates; `v` grows
/// downward. The camera looks along its local +z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
    pub width: u32,
    pub height: u32,
    pub world_to_camera: Pose,
}

impl CameraModel {
    /// 640x480, 60 degree horizontal field of view, centered above the world
    /// origin at `height` and looking straight down.
    pub fn overhead(height: f64) -> Self {
        let (w, h) = (640u32, 480u32);
        let f = w as f64 / (2.0 * 30f64.to_radians().tan());
        // Half turn about x: camera x along world x, camera y along world -y,
        // optical axis down. The rotation is its own inverse.
        let flip = UnitQuaternion::new_unchecked(Quaternion::new(0.0, 1.0, 0.0, 0.0));
        CameraModel {
            fx: f,
            fy: f,
            u0: w as f64 / 2.0,
            v0: h as f64 / 2.0,
            width: w,
            height: h,
            world_to_camera: Pose::from_parts(Translation3::new(0.0, 0.0, height), flip),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(format!("focal lengths must be positive ({}, {})", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return Err("resolution must be nonzero".into());
        }
        if !(0.0 <= self.u0 && self.u0 < self.width as f64 && 0.0 <= self.v0 && self.v0 < self.height as f64) {
            return Err(format!("principal point ({}, {}) outside image", self.u0, self.v0));
        }
        Ok(())
    }

    pub fn camera_to_world(&self) -> Pose {
        self.world_to_camera.inverse()
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        self.camera_to_world() * Point3::origin()
    }

    /// `(u, v, Z)` of a world point, or `None` behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.world_to_camera * p;
        (c.z > 0.0).then(|| (self.u0 + self.fx * c.x / c.z, self.v0 + self.fy * c.y / c.z, c.z))
    }

    /// Camera-frame point at depth `z` behind pixel `(u, v)`.
    pub fn camera_point(&self, u: f64, v: f64, z: f64) -> Point3<f64> {
        Point3::new(z * (u - self.u0) / self.fx, z * (v - self.v0) / self.fy, z)
    }

    /// World-frame ray through pixel `(u, v)`. The direction is scaled so the
    /// ray parameter equals camera-frame depth.
    pub fn ray(&self, u: f64, v: f64) -> (Point3<f64>, Vector3<f64>) {
        let c2w = self.camera_to_world();
        let dir = Vector3::new((u - self.u0) / self.fx, (v - self.v0) / self.fy, 1.0);
        (c2w * Point3::origin(), c2w.rotation * dir)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5
    }
}

/// Camera-frame depth in meters; `f64::INFINITY` where nothing was hit.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        DepthImage {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.data[v as usize * self.width as usize + u as usize]
    }

    /// Binary 16-bit PGM in millimeters; misses become 0.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n65535\n", self.width, self.height)?;
        let mut bytes = Vec::with_capacity(self.data.len() * 2);
        for &d in &self.data {
            let mm = if d.is_finite() {
                (d * 1000.0).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            };
            bytes.extend_from_slice(&mm.to_be_bytes());
        }
        out.write_all(&bytes)
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_pgm(std::io::BufWriter::new(file))
    }
}

/// Nearest present component hit by a ray: `(component index, t, normal)`.
fn cast(world: &SceneWorld, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(usize, f64, Vector3<f64>)> {
    let mut best: Option<(usize, f64, Vector3<f64>)> = None;
    for (i, c) in world.components.iter().enumerate() {
        if !c.is_present() {
            continue;
        }
        if let Some(hit) = ray_shape(origin, dir, &c.shape, &c.pose) {
            if best.is_none_or(|(_, t, _)| hit.t < t) {
                best = Some((i, hit.t, hit.normal));
            }
        }
    }
    best
}

/// Ray-cast depth image of every present component.
pub fn render_depth(world: &SceneWorld, camera: &CameraModel) -> DepthImage {
    let w = camera.width as usize;
    let mut data = vec![f64::INFINITY; w * camera.height as usize];
    data.par_chunks_mut(w).enumerate().for_each(|(v, row)| {
        for (u, px) in row.iter_mut().enumerate() {
            let (o, d) = camera.ray(u as f64, v as f64);
            if let Some((_, t, _)) = cast(world, &o, &d) {
                *px = t;
            }
        }
    });
    DepthImage {
        width: camera.width,
        height: camera.height,
        data,
    }
}

fn category_color(category: ComponentCategory) -> [f64; 3] {
    match category {
        ComponentCategory::Bolt => [200.0, 200.0, 210.0],
        ComponentCategory::Cable => [230.0, 120.0, 30.0],
        ComponentCategory::Module => [170.0, 175.0, 180.0],
        ComponentCategory::Msd => [200.0, 40.0, 40.0],
        ComponentCategory::PositiveBusBar => [190.0, 110.0, 60.0],
        ComponentCategory::NegativeBusBar => [120.0, 80.0, 50.0],
        ComponentCategory::Contactor => [50.0, 50.0, 55.0],
        ComponentCategory::BmsController => [30.0, 120.0, 60.0],
        ComponentCategory::PackBase => [70.0, 75.0, 90.0],
    }
}

/// Flat-shaded color snapshot.
pub fn render_color(world: &SceneWorld, camera: &CameraModel) -> RasterImage {
    let w = camera.width as usize;
    let mut pixels = vec![0u8; w * camera.height as usize * 3];
    let light = Vector3::new(0.3, -0.2, 1.0).normalize();
    pixels.par_chunks_mut(w * 3).enumerate().for_each(|(v, row)| {
        for u in 0..w {
            let (o, d) = camera.ray(u as f64, v as f64);
            let rgb = match cast(world, &o, &d) {
                Some((i, _, n)) => {
                    let shade = 0.55 + 0.45 * n.dot(&light).max(0.0);
                    category_color(world.components[i].category).map(|c| c * shade)
                }
                None => [235.0, 235.0, 230.0],
            };
            for k in 0..3 {
                row[u * 3 + k] = rgb[k].round().clamp(0.0, 255.0) as u8;
            }
        }
    });
    RasterImage::from_raw(camera.width, camera.height, pixels).expect("buffer sized to image")
}

/// Per-pixel depth source.
pub trait DepthLookup {
    fn depth(&self, u: u32, v: u32) -> f64;
}

impl DepthLookup for DepthImage {
    fn depth(&self, u: u32, v: u32) -> f64 {
        self.get(u, v)
    }
}

/// Ray-casts single pixels on demand instead of rendering a full frame.
#[derive(Clone, Copy)]
pub struct RayCastDepth<'a> {
    pub world: &'a SceneWorld,
    pub camera: &'a CameraModel,
}

impl DepthLookup for RayCastDepth<'_> {
    fn depth(&self, u: u32, v: u32) -> f64 {
        let (o, d) = self.camera.ray(u as f64, v as f64);
        cast(self.world, &o, &d).map_or(f64::INFINITY, |(_, t, _)| t)
    }
}

/// Back-projects pixel `(u, v)` through the depth image to a world point.
/// Depth is read at the nearest pixel.
pub fn pixel_to_world(
    camera: &CameraModel,
    u: f64,
    v: f64,
    depth: &impl DepthLookup,
) -> Result<Point3<f64>, PerceptionError> {
    if !camera.contains(u, v) {
        return Err(PerceptionError::OutOfImage {
            u,
            v,
            width: camera.width,
            height: camera.height,
        });
    }
    let z = depth.depth(u.round() as u32, v.round() as u32);
    if !z.is_finite() {
        return Err(PerceptionError::NoDepth { u, v });
    }
    Ok(camera.camera_to_world() * camera.camera_point(u, v, z))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub category: ComponentCategory,
    /// `[u_min, v_min, u_max, v_max]` in pixels.
    pub bbox: [f64; 4],
    pub score: f64,
    pub center: [f64; 2],
    /// Ground truth, only filled in by the oracle.
    pub component_id: Option<ComponentId>,
}

impl Detection {
    pub fn new(category: ComponentCategory, bbox: [f64; 4], score: f64) -> Self {
        Detection {
            category,
            bbox,
            score,
            center: [(bbox[0] + bbox[2]) / 2.0, (bbox[1] + bbox[3]) / 2.0],
            component_id: None,
        }
    }
}

fn raster_order(a: &Detection, b: &Detection) -> Ordering {
    a.center[1]
        .total_cmp(&b.center[1])
        .then(a.center[0].total_cmp(&b.center[0]))
}

pub trait Detector {
    fn detect(&mut self, world: &SceneWorld, camera: &CameraModel) -> Vec<Detection>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    pub mean: f64,
    pub sigma: f64,
}

/// Per-category confidence distribution of the oracle detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub params: BTreeMap<ComponentCategory, ScoreParams>,
}

impl Default for ScoreModel {
    fn default() -> Self {
        ScoreModel {
            params: BTreeMap::from([
                (ComponentCategory::Bolt, ScoreParams { mean: 0.463, sigma: 0.05 }),
                (ComponentCategory::Cable, ScoreParams { mean: 0.50, sigma: 0.05 }),
                (ComponentCategory::Module, ScoreParams { mean: 1.0, sigma: 0.0 }),
            ]),
        }
    }
}

impl ScoreModel {
    pub fn get(&self, category: ComponentCategory) -> ScoreParams {
        self.params
            .get(&category)
            .copied()
            .unwrap_or(ScoreParams { mean: 1.0, sigma: 0.0 })
    }

    pub fn sample(&self, category: ComponentCategory, rng: &mut ChaCha8Rng) -> f64 {
        let p = self.get(category);
        let score = if p.sigma > 0.0 {
            Normal::new(p.mean, p.sigma)
                .map(|n| n.sample(rng))
                .unwrap_or(p.mean)
        } else {
            p.mean
        };
        score.clamp(0.0, 1.0)
    }
}

/// Ground-truth detector: every visible, untouched disassemblable component
/// with a projected bounding box and a sampled score.
#[derive(Clone, Debug)]
pub struct OracleDetector {
    pub score_model: ScoreModel,
    rng: ChaCha8Rng,
}

impl OracleDetector {
    pub fn new(score_model: ScoreModel, seed: u64) -> Self {
        OracleDetector {
            score_model,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

const OUTLINE_RING: usize = 24;

impl Detector for OracleDetector {
    fn detect(&mut self, world: &SceneWorld, camera: &CameraModel) -> Vec<Detection> {
        let eye = camera.center();
        let max_u = camera.width as f64 - 1.0;
        let max_v = camera.height as f64 - 1.0;
        let mut out = Vec::new();
        for (i, c) in world.components.iter().enumerate() {
            if !c.category.is_disassemblable()
                || !matches!(c.mobility, Mobility::Static | Mobility::Movable)
            {
                continue;
            }
            let visible = cast(world, &eye, &(c.center() - eye)).is_some_and(|(j, _, _)| j == i);
            if !visible {
                continue;
            }
            let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
            let mut behind = false;
            for p in c.shape.outline_points(OUTLINE_RING) {
                match camera.project(&(c.pose * p)) {
                    Some((u, v, _)) => {
                        bbox[0] = bbox[0].min(u);
                        bbox[1] = bbox[1].min(v);
                        bbox[2] = bbox[2].max(u);
                        bbox[3] = bbox[3].max(v);
                    }
                    None => behind = true,
                }
            }
            let bbox = [
                bbox[0].clamp(0.0, max_u),
                bbox[1].clamp(0.0, max_v),
                bbox[2].clamp(0.0, max_u),
                bbox[3].clamp(0.0, max_v),
            ];
            if behind || bbox[2] <= bbox[0] || bbox[3] <= bbox[1] {
                continue;
            }
            let score = self.score_model.sample(c.category, &mut self.rng);
            let mut d = Detection::new(c.category, bbox, score);
            d.component_id = Some(c.id.clone());
            out.push(d);
        }
        out.sort_by(raster_order);
        out
    }
}

/// Task phase selected from the detection lists.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StageFlag {
    Bolts,
    Cables,
    Modules,
    Done,
}

impl StageFlag {
    /// 1, 2, 3, or `None` for `Done`.
    pub fn value(self) -> Option<u8> {
        match self {
            StageFlag::Bolts => Some(1),
            StageFlag::Cables => Some(2),
            StageFlag::Modules => Some(3),
            StageFlag::Done => None,
        }
    }

    pub fn category(self) -> Option<ComponentCategory> {
        match self {
            StageFlag::Bolts => Some(ComponentCategory::Bolt),
            StageFlag::Cables => Some(ComponentCategory::Cable),
            StageFlag::Modules => Some(ComponentCategory::Module),
            StageFlag::Done => None,
        }
    }
}

impl fmt::Display for StageFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value() {
            Some(v) => write!(f, "{v}"),
            None => f.write_str("Done"),
        }
    }
}

/// Splits detections into bolt, cable and module lists, picks the first
/// non-empty list in that order and returns its first element.
pub fn stage_and_target(detections: &[Detection]) -> (StageFlag, Option<Detection>) {
    let list = |cat: ComponentCategory| -> Vec<&Detection> {
        detections.iter().filter(|d| d.category == cat).collect()
    };
    let bolts = list(ComponentCategory::Bolt);
    let cables = list(ComponentCategory::Cable);
    let modules = list(ComponentCategory::Module);
    let (flag, active) = if !bolts.is_empty() {
        (StageFlag::Bolts, bolts)
    } else if !cables.is_empty() {
        (StageFlag::Cables, cables)
    } else if !modules.is_empty() {
        (StageFlag::Modules, modules)
    } else {
        (StageFlag::Done, Vec::new())
    };
    (flag, active.first().map(|d| (*d).clone()))
}

/// CSV with columns `category,u_min,v_min,u_max,v_max,score`.
pub fn write_detections_csv<W: Write>(out: W, detections: &[Detection]) -> Result<(), PerceptionError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["category", "u_min", "v_min", "u_max", "v_max", "score"])?;
    for d in detections {
        w.write_record([
            d.category.name().to_string(),
            format!("{:.3}", d.bbox[0]),
            format!("{:.3}", d.bbox[1]),
            format!("{:.3}", d.bbox[2]),
            format!("{:.3}", d.bbox[3]),
            format!("{:.4}", d.score),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rotation taking camera axes to world axes; handy for tests and tools.
pub fn camera_rotation(camera: &CameraModel) -> Rotation3<f64> {
    camera.camera_to_world().rotation.to_rotation_matrix()
}
