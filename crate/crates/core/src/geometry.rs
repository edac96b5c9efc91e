//! Rigid poses, solid primitives, capsules and the exact distance and
//! ray queries the rest of the simulator is built on.

use nalgebra::{Isometry3, Point3, Vector3};

/// Rigid transform (position in meters, unit-quaternion orientation).
pub type Pose = Isometry3<f64>;

/// Solid primitive expressed in its own local frame, centered at the origin.
///
/// Cylinders are aligned with the local z axis. "Up" for grasping purposes is
/// local +z for both variants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Cuboid { half_extents: Vector3<f64> },
    Cylinder { radius: f64, half_height: f64 },
}

impl Shape {
    /// Box from full side lengths.
    pub fn cuboid(x: f64, y: f64, z: f64) -> Self {
        Shape::Cuboid {
            half_extents: Vector3::new(x / 2.0, y / 2.0, z / 2.0),
        }
    }

    /// Cylinder from radius and full height.
    pub fn cylinder(radius: f64, height: f64) -> Self {
        Shape::Cylinder {
            radius,
            half_height: height / 2.0,
        }
    }

    /// Half extents of the local-frame bounding box.
    pub fn local_half_extents(&self) -> Vector3<f64> {
        match *self {
            Shape::Cuboid { half_extents } => half_extents,
            Shape::Cylinder {
                radius,
                half_height,
            } => Vector3::new(radius, radius, half_height),
        }
    }

    /// Offset of the top-face center from the shape center along local z.
    pub fn top_offset(&self) -> f64 {
        self.local_half_extents().z
    }

    /// Euclidean distance from a local-frame point to the solid (0 inside).
    pub fn distance_to_local_point(&self, p: &Point3<f64>) -> f64 {
        match *self {
            Shape::Cuboid { half_extents } => {
                let ex = (p.x.abs() - half_extents.x).max(0.0);
                let ey = (p.y.abs() - half_extents.y).max(0.0);
                let ez = (p.z.abs() - half_extents.z).max(0.0);
                (ex * ex + ey * ey + ez * ez).sqrt()
            }
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                let er = ((p.x * p.x + p.y * p.y).sqrt() - radius).max(0.0);
                let ez = (p.z.abs() - half_height).max(0.0);
                (er * er + ez * ez).sqrt()
            }
        }
    }

    /// Sample points on the outline of the solid, in the local frame. Box
    /// corners, or two rings of `ring` points for a cylinder.
    pub fn outline_points(&self, ring: usize) -> Vec<Point3<f64>> {
        match *self {
            Shape::Cuboid { half_extents: h } => {
                let mut pts = Vec::with_capacity(8);
                for sx in [-1.0, 1.0] {
                    for sy in [-1.0, 1.0] {
                        for sz in [-1.0, 1.0] {
                            pts.push(Point3::new(sx * h.x, sy * h.y, sz * h.z));
                        }
                    }
                }
                pts
            }
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                let mut pts = Vec::with_capacity(2 * ring);
                for z in [-half_height, half_height] {
                    for k in 0..ring {
                        let a = std::f64::consts::TAU * k as f64 / ring as f64;
                        pts.push(Point3::new(radius * a.cos(), radius * a.sin(), z));
                    }
                }
                pts
            }
        }
    }

    /// Largest capsule along the longest local axis that fits inside the
    /// solid with `margin` clearance on every side. Used to represent carried
    /// objects in collision queries.
    pub fn inscribed_capsule(&self, margin: f64) -> LocalCapsule {
        let h = self.local_half_extents();
        let (axis, long, short) = if h.x >= h.y && h.x >= h.z {
            (Vector3::x(), h.x, h.y.min(h.z))
        } else if h.y >= h.z {
            (Vector3::y(), h.y, h.x.min(h.z))
        } else {
            (Vector3::z(), h.z, h.x.min(h.y))
        };
        let radius = (short - margin).max(margin.min(short) * 0.5);
        let half = (long - margin - radius).max(0.0);
        LocalCapsule {
            start: Point3::from(-axis * half),
            end: Point3::from(axis * half),
            radius,
        }
    }
}

/// Capsule whose endpoints are expressed in some body frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalCapsule {
    pub start: Point3<f64>,
    pub end: Point3<f64>,
    pub radius: f64,
}

impl LocalCapsule {
    pub fn transformed(&self, pose: &Pose) -> Capsule {
        Capsule {
            start: pose * self.start,
            end: pose * self.end,
            radius: self.radius,
        }
    }
}

/// Capsule in the world frame: all points within `radius` of the segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    pub start: Point3<f64>,
    pub end: Point3<f64>,
    pub radius: f64,
}

impl Capsule {
    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    pub fn aabb(&self) -> Aabb {
        let r = Vector3::repeat(self.radius);
        Aabb {
            min: self.start.inf(&self.end) - r,
            max: self.start.sup(&self.end) + r,
        }
    }
}

/// Axis-aligned bounding box in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    /// Strict overlap; touching boxes do not overlap.
    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] < other.max[i] && other.min[i] < self.max[i])
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }
}

/// World-frame bounding box of a posed shape.
pub fn shape_aabb(shape: &Shape, pose: &Pose) -> Aabb {
    let h = shape.local_half_extents();
    let rot = pose.rotation.to_rotation_matrix();
    let abs = rot.matrix().abs();
    let ext = abs * h;
    let c = Point3::from(pose.translation.vector);
    Aabb {
        min: c - ext,
        max: c + ext,
    }
}

/// Exact distance between the segment `a`..`b` and an axis-aligned box
/// centered at the origin.
///
/// The squared distance along the segment is piecewise quadratic with
/// breakpoints where the segment crosses a slab plane; each piece is
/// minimized in closed form.
pub fn segment_box_distance(a: &Point3<f64>, b: &Point3<f64>, half: &Vector3<f64>) -> f64 {
    let dir = b - a;
    let mut breaks = Vec::with_capacity(8);
    breaks.push(0.0);
    breaks.push(1.0);
    for i in 0..3 {
        if dir[i] != 0.0 {
            for bound in [-half[i], half[i]] {
                let t = (bound - a[i]) / dir[i];
                if t > 0.0 && t < 1.0 {
                    breaks.push(t);
                }
            }
        }
    }
    breaks.sort_by(f64::total_cmp);

    let mut best = f64::INFINITY;
    for w in breaks.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let tm = 0.5 * (t0 + t1);
        // Squared distance on this piece: sum over clamped axes of (c + d t)^2.
        let (mut qa, mut qb, mut qc) = (0.0, 0.0, 0.0);
        for i in 0..3 {
            let p = a[i] + dir[i] * tm;
            let c = if p > half[i] {
                a[i] - half[i]
            } else if p < -half[i] {
                a[i] + half[i]
            } else {
                continue;
            };
            qa += dir[i] * dir[i];
            qb += 2.0 * c * dir[i];
            qc += c * c;
        }
        let t = if qa > 0.0 {
            (-qb / (2.0 * qa)).clamp(t0, t1)
        } else {
            t0
        };
        let d2 = (qa * t + qb) * t + qc;
        best = best.min(d2.max(0.0));
    }
    best.sqrt()
}

/// Distance between the segment `a`..`b` and a z-aligned solid cylinder
/// centered at the origin.
///
/// Distance to a convex set is convex along a line, so a golden-section
/// search converges to the global minimum.
pub fn segment_cylinder_distance(
    a: &Point3<f64>,
    b: &Point3<f64>,
    radius: f64,
    half_height: f64,
) -> f64 {
    let shape = Shape::Cylinder {
        radius,
        half_height,
    };
    let f = |t: f64| shape.distance_to_local_point(&(a + (b - a) * t));
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..90 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    f(0.0).min(f(1.0)).min(f1).min(f2)
}

/// Distance between a world-frame segment and a posed shape.
pub fn segment_shape_distance(a: &Point3<f64>, b: &Point3<f64>, shape: &Shape, pose: &Pose) -> f64 {
    let la = pose.inverse_transform_point(a);
    let lb = pose.inverse_transform_point(b);
    match *shape {
        Shape::Cuboid { half_extents } => segment_box_distance(&la, &lb, &half_extents),
        Shape::Cylinder {
            radius,
            half_height,
        } => segment_cylinder_distance(&la, &lb, radius, half_height),
    }
}

/// Strict capsule/shape intersection: boundary contact is not a collision.
pub fn capsule_intersects(capsule: &Capsule, shape: &Shape, pose: &Pose) -> bool {
    segment_shape_distance(&capsule.start, &capsule.end, shape, pose) < capsule.radius
}

/// A ray hit: parameter along the (unnormalized) direction and the
/// world-frame outward surface normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub normal: Vector3<f64>,
}

/// First intersection of `origin + t * dir`, `t >= 0`, with a posed shape.
pub fn ray_shape(origin: &Point3<f64>, dir: &Vector3<f64>, shape: &Shape, pose: &Pose) -> Option<RayHit> {
    let o = pose.inverse_transform_point(origin);
    let d = pose.inverse_transform_vector(dir);
    let local = match *shape {
        Shape::Cuboid { half_extents } => ray_box_local(&o, &d, &half_extents),
        Shape::Cylinder {
            radius,
            half_height,
        } => ray_cylinder_local(&o, &d, radius, half_height),
    }?;
    Some(RayHit {
        t: local.t,
        normal: pose.rotation * local.normal,
    })
}

fn ray_box_local(o: &Point3<f64>, d: &Vector3<f64>, h: &Vector3<f64>) -> Option<RayHit> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut enter_axis = 0;
    let mut enter_sign = 1.0;
    for i in 0..3 {
        if d[i] == 0.0 {
            if o[i] < -h[i] || o[i] > h[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[i];
        let mut t0 = (-h[i] - o[i]) * inv;
        let mut t1 = (h[i] - o[i]) * inv;
        let mut sign = -1.0;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
            sign = 1.0;
        }
        if t0 > t_enter {
            t_enter = t0;
            enter_axis = i;
            enter_sign = sign;
        }
        t_exit = t_exit.min(t1);
        if t_enter > t_exit {
            return None;
        }
    }
    if t_exit < 0.0 || t_enter < 0.0 {
        // Behind the origin, or the origin is inside the solid.
        return None;
    }
    let mut normal = Vector3::zeros();
    normal[enter_axis] = enter_sign;
    Some(RayHit { t: t_enter, normal })
}

fn ray_cylinder_local(o: &Point3<f64>, d: &Vector3<f64>, radius: f64, hh: f64) -> Option<RayHit> {
    let mut best: Option<RayHit> = None;
    let mut consider = |t: f64, normal: Vector3<f64>| {
        if t >= 0.0 && best.is_none_or(|b| t < b.t) {
            best = Some(RayHit { t, normal });
        }
    };
    // Side surface.
    let qa = d.x * d.x + d.y * d.y;
    if qa > 0.0 {
        let qb = 2.0 * (o.x * d.x + o.y * d.y);
        let qc = o.x * o.x + o.y * o.y - radius * radius;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)] {
                let z = o.z + d.z * t;
                if z.abs() <= hh {
                    let p = o + d * t;
                    consider(t, Vector3::new(p.x, p.y, 0.0) / radius);
                }
            }
        }
    }
    // Caps.
    if d.z != 0.0 {
        for (z, n) in [(hh, 1.0), (-hh, -1.0)] {
            let t = (z - o.z) / d.z;
            let p = o + d * t;
            if p.x * p.x + p.y * p.y <= radius * radius {
                consider(t, Vector3::new(0.0, 0.0, n));
            }
        }
    }
    // Only front faces count as entry hits.
    best.filter(|h| h.normal.dot(d) <= 0.0)
}
